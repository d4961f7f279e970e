#ifndef ACELAB_GLM_HPP
#define ACELAB_GLM_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acelab/stats.hpp"

namespace acelab {

/// Logistic regression by Newton-Raphson with step halving. The design
/// matrix must already contain any intercept column. On (quasi-)separation
/// the fit is redone with a ridge penalty and `separation_fallback` is set.
struct LogisticFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  bool separation_fallback = false;
  bool converged = false;
  double log_likelihood = 0.0;
};

namespace detail {

inline double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& beta, double ridge) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    // log p if y=1, log(1-p) if y=0, stable in eta
    const double e = eta[i];
    ll += y[i] * e - (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e)));
  }
  return ll - 0.5 * ridge * beta.squaredNorm();
}

inline LogisticFit logistic_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   double ridge, int max_iter) {
  const Eigen::Index p = X.cols();
  LogisticFit fit;
  fit.beta = Eigen::VectorXd::Zero(p);
  double ll = logistic_loglik(X, y, fit.beta, ridge);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd eta = X * fit.beta;
    Eigen::VectorXd mu(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu[i] = expit(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
    }
    const Eigen::VectorXd grad = X.transpose() * (y - mu) - ridge * fit.beta;
    Eigen::MatrixXd hess = X.transpose() * w.asDiagonal() * X;
    hess.diagonal().array() += ridge;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double scale = 1.0;
    Eigen::VectorXd candidate = fit.beta + step;
    double ll_new = logistic_loglik(X, y, candidate, ridge);
    int halvings = 0;
    while (ll_new < ll && halvings < 30) {
      scale *= 0.5;
      candidate = fit.beta + scale * step;
      ll_new = logistic_loglik(X, y, candidate, ridge);
      ++halvings;
    }
    const double improvement = ll_new - ll;
    fit.beta = candidate;
    ll = ll_new;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-8 * static_cast<double>(y.size()) &&
        improvement < 1e-12 * (1.0 + std::abs(ll))) {
      fit.converged = true;
      break;
    }
  }
  fit.log_likelihood = ll;
  {
    const Eigen::VectorXd eta = X * fit.beta;
    Eigen::VectorXd w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double mu = expit(eta[i]);
      w[i] = std::max(mu * (1.0 - mu), 1e-12);
    }
    Eigen::MatrixXd hess = X.transpose() * w.asDiagonal() * X;
    hess.diagonal().array() += ridge;
    fit.covariance = hess.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  }
  return fit;
}

}  // namespace detail

inline LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                double fallback_ridge_per_obs = 0.01, int max_iter = 100) {
  if (X.rows() != y.size()) throw std::invalid_argument("fit_logistic: X rows != y length");
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] != 0.0 && y[i] != 1.0)
      throw std::invalid_argument("fit_logistic: response must be 0/1");

  LogisticFit fit = detail::logistic_newton(X, y, 0.0, max_iter);
  const bool diverged = !fit.converged || fit.beta.lpNorm<Eigen::Infinity>() > 15.0 ||
                        !fit.beta.allFinite();
  if (diverged) {
    const double ridge = fallback_ridge_per_obs * static_cast<double>(y.size());
    fit = detail::logistic_newton(X, y, ridge, max_iter);
    fit.separation_fallback = true;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Zero-inflated Poisson: P(y=0) = pi + (1-pi) exp(-mu), y>0 ~ (1-pi) Pois(mu),
// pi = expit(X gamma), mu = exp(X delta). Fit by EM, covariance from the
// numerically differentiated observed information.

struct ZipFit {
  Eigen::VectorXd gamma;  // zero-part coefficients
  Eigen::VectorXd delta;  // count-part coefficients
  Eigen::MatrixXd covariance;  // of (gamma, delta) stacked
  double log_likelihood = 0.0;
  bool converged = false;
};

namespace detail {

inline double zip_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& gamma, const Eigen::VectorXd& delta) {
  const Eigen::VectorXd zeta = X * gamma;
  const Eigen::VectorXd eta = X * delta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double mu = std::exp(eta[i]);
    // log(1-pi) computed stably as -log(1+exp(zeta))
    const double log_pi = zeta[i] - (zeta[i] > 0 ? zeta[i] + std::log1p(std::exp(-zeta[i]))
                                                 : std::log1p(std::exp(zeta[i])));
    const double log_1mpi = log_pi - zeta[i];
    if (y[i] == 0.0) {
      const double a = log_pi;
      const double b = log_1mpi - mu;
      const double hi = std::max(a, b);
      ll += hi + std::log(std::exp(a - hi) + std::exp(b - hi));
    } else {
      ll += log_1mpi + y[i] * eta[i] - mu - std::lgamma(y[i] + 1.0);
    }
  }
  return ll;
}

// Weighted Poisson regression step used inside the ZIP M-step.
inline Eigen::VectorXd poisson_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& weight, Eigen::VectorXd beta,
                                      int max_iter = 50) {
  for (int iter = 0; iter < max_iter; ++iter) {
    Eigen::VectorXd mu = (X * beta).array().exp();
    const Eigen::VectorXd grad = X.transpose() * (weight.array() * (y - mu).array()).matrix();
    Eigen::MatrixXd hess =
        X.transpose() * (weight.array() * mu.array()).matrix().asDiagonal() * X;
    hess.diagonal().array() += 1e-10;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    // Dampen large steps; exp link is fragile early on
    const double cap = step.lpNorm<Eigen::Infinity>();
    beta += (cap > 2.0 ? 2.0 / cap : 1.0) * step;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-9 * static_cast<double>(y.size())) break;
  }
  return beta;
}

// Fractional-response logistic for the E-step weights.
inline Eigen::VectorXd fractional_logistic_newton(const Eigen::MatrixXd& X,
                                                  const Eigen::VectorXd& w, Eigen::VectorXd beta,
                                                  int max_iter = 50) {
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd mu(eta.size()), v(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu[i] = expit(eta[i]);
      v[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
    }
    const Eigen::VectorXd grad = X.transpose() * (w - mu);
    Eigen::MatrixXd hess = X.transpose() * v.asDiagonal() * X;
    hess.diagonal().array() += 1e-10;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    const double cap = step.lpNorm<Eigen::Infinity>();
    beta += (cap > 4.0 ? 4.0 / cap : 1.0) * step;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-9 * static_cast<double>(w.size())) break;
  }
  return beta;
}

}  // namespace detail

inline ZipFit fit_zip(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int max_iter = 200) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (n != y.size()) throw std::invalid_argument("fit_zip: X rows != y length");
  long n_zero = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] < 0.0 || y[i] != std::floor(y[i]))
      throw std::invalid_argument("fit_zip: response must be nonnegative integers");
    n_zero += y[i] == 0.0;
  }
  if (n_zero == n) throw std::invalid_argument("fit_zip: all responses are zero");

  ZipFit fit;
  fit.gamma = Eigen::VectorXd::Zero(p);
  fit.delta = Eigen::VectorXd::Zero(p);
  double positive_mean = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) positive_mean += y[i];
  positive_mean /= static_cast<double>(n - n_zero);
  fit.delta[0] = std::log(std::max(positive_mean, 0.1));

  double ll = detail::zip_loglik(X, y, fit.gamma, fit.delta);
  for (int iter = 0; iter < max_iter; ++iter) {
    // E-step: structural-zero responsibilities
    const Eigen::VectorXd zeta = X * fit.gamma;
    const Eigen::VectorXd eta = X * fit.delta;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (y[i] == 0.0) {
        const double pi = expit(zeta[i]);
        const double pois0 = std::exp(-std::exp(eta[i]));
        w[i] = pi / (pi + (1.0 - pi) * pois0);
      }
    }
    // M-step
    fit.gamma = detail::fractional_logistic_newton(X, w, fit.gamma);
    fit.delta = detail::poisson_newton(X, y, (1.0 - w.array()).matrix(), fit.delta);
    const double ll_new = detail::zip_loglik(X, y, fit.gamma, fit.delta);
    const bool done = std::abs(ll_new - ll) < 1e-10 * (1.0 + std::abs(ll_new));
    ll = ll_new;
    if (done) {
      fit.converged = true;
      break;
    }
  }
  fit.log_likelihood = ll;

  // Observed information by central differences on the stacked parameter.
  const Eigen::Index d = 2 * p;
  Eigen::VectorXd theta(d);
  theta << fit.gamma, fit.delta;
  auto loglik_at = [&](const Eigen::VectorXd& th) {
    return detail::zip_loglik(X, y, th.head(p), th.tail(p));
  };
  Eigen::MatrixXd hess(d, d);
  const double base = 1e-4;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double hj = base * (1.0 + std::abs(theta[j]));
    for (Eigen::Index k = j; k < d; ++k) {
      const double hk = base * (1.0 + std::abs(theta[k]));
      Eigen::VectorXd t1 = theta, t2 = theta, t3 = theta, t4 = theta;
      t1[j] += hj; t1[k] += hk;
      t2[j] += hj; t2[k] -= hk;
      t3[j] -= hj; t3[k] += hk;
      t4[j] -= hj; t4[k] -= hk;
      const double v = (loglik_at(t1) - loglik_at(t2) - loglik_at(t3) + loglik_at(t4)) /
                       (4.0 * hj * hk);
      hess(j, k) = v;
      hess(k, j) = v;
    }
  }
  Eigen::MatrixXd info = -hess;
  // Jitter until positive definite; the EM optimum can sit on a flat ridge.
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(info + jitter * Eigen::MatrixXd::Identity(d, d));
    if (llt.info() == Eigen::Success) {
      fit.covariance = llt.solve(Eigen::MatrixXd::Identity(d, d));
      return fit;
    }
    jitter = jitter == 0.0 ? 1e-8 : jitter * 100.0;
  }
  throw std::runtime_error("fit_zip: observed information is not positive definite");
}

}  // namespace acelab

#endif  // ACELAB_GLM_HPP
