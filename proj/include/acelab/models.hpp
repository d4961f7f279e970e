#ifndef ACELAB_MODELS_HPP
#define ACELAB_MODELS_HPP

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acelab/bart.hpp"
#include "acelab/glm.hpp"
#include "acelab/rng.hpp"
#include "acelab/stats.hpp"

namespace acelab {

enum class ModelFamily { linear, bart, logistic, zip };

inline std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::linear: return "linear";
    case ModelFamily::bart: return "bart";
    case ModelFamily::logistic: return "logistic";
    case ModelFamily::zip: return "zip";
  }
  return "unknown";
}

struct ModelSpec {
  ModelFamily family = ModelFamily::linear;
  double linear_ridge = 1e-6;
  double logistic_fallback_ridge = 0.01;  // per observation, used only on separation
  bool allow_rank_deficient = false;      // skip the rank check; ridge absorbs collinearity
  BartOptions bart;
};

/// Covariate names and standardization constants captured at fit time.
/// Prediction inputs are mapped through the same constants, so covariate
/// order must match the fit-time order exactly.
struct DesignInfo {
  std::vector<std::string> names;
  Eigen::VectorXd means;
  Eigen::VectorXd sds;

  Eigen::Index n_covariates() const { return means.size(); }
};

struct LinearPosterior {
  Eigen::VectorXd beta;  // standardized scale, intercept first
  Eigen::MatrixXd precision;  // A = Xd'Xd + ridge I
  Eigen::LLT<Eigen::MatrixXd> chol;
  double a_n = 0.0;  // sigma^2 ~ InvGamma(a_n, b_n)
  double b_n = 0.0;
  bool point_mass = false;
};

/// Large-sample normal posterior around an ML estimate (logistic, zip).
struct NormalApproxPosterior {
  Eigen::VectorXd theta;
  Eigen::MatrixXd cov_chol;  // lower factor
};

struct FittedModel {
  ModelSpec spec;
  DesignInfo design;
  LinearPosterior linear;
  NormalApproxPosterior approx;
  std::shared_ptr<const BartModel> bart;
  std::vector<std::string> warnings;

  /// Linear/logistic coefficients mapped back to the original covariate
  /// scale, intercept first.
  Eigen::VectorXd coefficients_original() const {
    const Eigen::VectorXd* std_beta = nullptr;
    if (spec.family == ModelFamily::linear) std_beta = &linear.beta;
    else if (spec.family == ModelFamily::logistic) std_beta = &approx.theta;
    else throw std::logic_error("coefficients_original: not a coefficient model");
    const Eigen::Index p = design.n_covariates();
    Eigen::VectorXd out(p + 1);
    out[0] = (*std_beta)[0];
    for (Eigen::Index j = 0; j < p; ++j) {
      out[j + 1] = (*std_beta)[j + 1] / design.sds[j];
      out[0] -= (*std_beta)[j + 1] * design.means[j] / design.sds[j];
    }
    return out;
  }

  /// Posterior mean of the residual variance (linear family).
  double residual_variance_mean() const {
    if (spec.family != ModelFamily::linear)
      throw std::logic_error("residual_variance_mean: linear family only");
    if (linear.point_mass || linear.a_n <= 1.0) return linear.b_n > 0.0 ? linear.b_n : 0.0;
    return linear.b_n / (linear.a_n - 1.0);
  }

  /// 95% posterior interval for one original-scale slope (linear family;
  /// j = 1..p, the intercept marginal is not exposed).
  std::pair<double, double> slope_interval_95(Eigen::Index j) const {
    if (spec.family != ModelFamily::linear)
      throw std::logic_error("slope_interval_95: linear family only");
    if (j < 1 || j > design.n_covariates())
      throw std::invalid_argument("slope_interval_95: slope index out of range");
    const Eigen::VectorXd center = coefficients_original();
    if (linear.point_mass) return {center[j], center[j]};
    Eigen::VectorXd ej = Eigen::VectorXd::Zero(linear.beta.size());
    ej[j] = 1.0;
    const double ainv_jj = linear.chol.solve(ej)[j];
    const double scale =
        std::sqrt(std::max(linear.b_n / linear.a_n * ainv_jj, 0.0)) / design.sds[j - 1];
    const double tq = student_t_quantile_975(2.0 * linear.a_n);
    return {center[j] - tq * scale, center[j] + tq * scale};
  }
};

struct ParamDraw {
  Eigen::VectorXd coef;
  double sigma = 0.0;
  int bart_draw = 0;
  double bart_sigma = 0.0;
};

namespace detail {

inline void standardize(const Eigen::MatrixXd& X, DesignInfo& info, Eigen::MatrixXd& Xs) {
  const Eigen::Index n = X.rows(), p = X.cols();
  info.means = X.colwise().mean();
  info.sds.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = (X.col(j).array() - info.means[j]).square().sum() /
                       std::max<double>(1.0, static_cast<double>(n - 1));
    info.sds[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  Xs.resize(n, p + 1);
  Xs.col(0).setOnes();
  for (Eigen::Index j = 0; j < p; ++j)
    Xs.col(j + 1) = (X.col(j).array() - info.means[j]) / info.sds[j];
}

inline void check_rank(const Eigen::MatrixXd& Xs, const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  if (rank == Xs.cols()) return;
  std::string offenders;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = rank; k < Xs.cols(); ++k) {
    const Eigen::Index col = perm[k];
    if (!offenders.empty()) offenders += ", ";
    offenders += col == 0 ? "(intercept)" : names[static_cast<std::size_t>(col - 1)];
  }
  throw std::invalid_argument("fit: rank-deficient design; dependent columns: " + offenders);
}

inline double standardized_dot(const DesignInfo& info, const Eigen::VectorXd& beta,
                               const Eigen::VectorXd& x, Eigen::Index offset = 0) {
  double eta = beta[offset];
  for (Eigen::Index j = 0; j < info.n_covariates(); ++j)
    eta += beta[offset + j + 1] * (x[j] - info.means[j]) / info.sds[j];
  return eta;
}

inline void check_row(const FittedModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.design.n_covariates())
    throw std::invalid_argument("predict: expected " +
                                std::to_string(model.design.n_covariates()) +
                                " covariates, got " + std::to_string(x.size()));
  if (!x.allFinite()) throw std::invalid_argument("predict: non-finite covariate values");
}

}  // namespace detail

/// Fits one conditional model. X carries covariates only; the intercept is
/// internal. The posterior is proper for every family: conjugate
/// normal-inverse-gamma (linear), post-burn-in MCMC draws (bart), or a
/// normal approximation around the ML estimate (logistic, zip).
inline FittedModel fit(const ModelSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       std::uint64_t seed, std::vector<std::string> names = {}) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (n != y.size()) throw std::invalid_argument("fit: X rows != y length");
  if (n == 0) throw std::invalid_argument("fit: empty data");
  if (!X.allFinite() || !y.allFinite())
    throw std::invalid_argument("fit: design or response has missing/non-finite entries");
  if (names.empty())
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  if (static_cast<Eigen::Index>(names.size()) != p)
    throw std::invalid_argument("fit: names length != covariate count");

  FittedModel model;
  model.spec = spec;
  model.design.names = std::move(names);

  if (spec.family == ModelFamily::bart) {
    model.design.means = Eigen::VectorXd::Zero(p);
    model.design.sds = Eigen::VectorXd::Ones(p);
    model.bart = std::make_shared<const BartModel>(X, y, spec.bart, seed);
    return model;
  }

  Eigen::MatrixXd Xs;
  detail::standardize(X, model.design, Xs);
  if (!spec.allow_rank_deficient) detail::check_rank(Xs, model.design.names);

  switch (spec.family) {
    case ModelFamily::linear: {
      auto& post = model.linear;
      const bool constant_response = (y.array() - y[0]).abs().maxCoeff() == 0.0;
      Eigen::MatrixXd A = Xs.transpose() * Xs;
      if (!constant_response) A.diagonal().array() += spec.linear_ridge;
      post.precision = A;
      post.chol.compute(A);
      if (post.chol.info() != Eigen::Success) {
        A.diagonal().array() += 1e-8 * static_cast<double>(n);
        post.precision = A;
        post.chol.compute(A);
        if (post.chol.info() != Eigen::Success)
          throw std::runtime_error("fit: linear normal equations not positive definite");
        model.warnings.push_back("linear: near-singular design, extra ridge applied");
      }
      post.beta = post.chol.solve(Xs.transpose() * y);
      post.a_n = 0.5 * static_cast<double>(n);
      post.b_n = std::max(0.5 * (y.squaredNorm() - post.beta.dot(post.precision * post.beta)), 0.0);
      // Centered columns decouple the intercept, so a constant response
      // solves exactly; keep it a point mass per the degenerate-case rule.
      post.point_mass = constant_response;
      if (post.point_mass) post.b_n = 0.0;
      break;
    }
    case ModelFamily::logistic: {
      LogisticFit lf = fit_logistic(Xs, y, spec.logistic_fallback_ridge);
      if (lf.separation_fallback)
        model.warnings.push_back("logistic: separation detected, ridge-stabilized fit used");
      model.approx.theta = lf.beta;
      Eigen::LLT<Eigen::MatrixXd> llt(lf.covariance);
      if (llt.info() != Eigen::Success) {
        lf.covariance.diagonal().array() += 1e-10;
        llt.compute(lf.covariance);
        if (llt.info() != Eigen::Success)
          throw std::runtime_error("fit: logistic covariance not positive definite");
      }
      model.approx.cov_chol = llt.matrixL();
      break;
    }
    case ModelFamily::zip: {
      ZipFit zf = fit_zip(Xs, y);
      if (!zf.converged) model.warnings.push_back("zip: EM did not fully converge");
      model.approx.theta.resize(2 * (p + 1));
      model.approx.theta << zf.gamma, zf.delta;
      Eigen::LLT<Eigen::MatrixXd> llt(zf.covariance);
      if (llt.info() != Eigen::Success) {
        zf.covariance.diagonal().array() += 1e-10;
        llt.compute(zf.covariance);
        if (llt.info() != Eigen::Success)
          throw std::runtime_error("fit: zip covariance not positive definite");
      }
      model.approx.cov_chol = llt.matrixL();
      break;
    }
    case ModelFamily::bart:
      break;  // handled above
  }
  return model;
}

/// One draw of the model parameters from the fitted posterior.
inline ParamDraw sample_params(const FittedModel& model, Rng& rng) {
  ParamDraw draw;
  switch (model.spec.family) {
    case ModelFamily::linear: {
      const auto& post = model.linear;
      if (post.point_mass || post.b_n <= 0.0) {
        draw.coef = post.beta;
        draw.sigma = 0.0;
        return draw;
      }
      const double sigma2 = rng.inv_gamma(post.a_n, post.b_n);
      draw.sigma = std::sqrt(sigma2);
      Eigen::VectorXd z(post.beta.size());
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
      draw.coef = post.beta + draw.sigma * post.chol.matrixU().solve(z);
      return draw;
    }
    case ModelFamily::logistic:
    case ModelFamily::zip: {
      Eigen::VectorXd z(model.approx.theta.size());
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
      draw.coef = model.approx.theta + model.approx.cov_chol * z;
      return draw;
    }
    case ModelFamily::bart: {
      draw.bart_draw = static_cast<int>(
          rng.uniform_below(static_cast<std::uint64_t>(model.bart->n_draws())));
      draw.bart_sigma = model.bart->sigma(draw.bart_draw);
      return draw;
    }
  }
  throw std::logic_error("sample_params: unknown family");
}

/// Conditional mean given drawn parameters. Logistic returns the success
/// probability; zip returns (1-pi) * mu.
inline double conditional_mean(const FittedModel& model, const ParamDraw& params,
                               const Eigen::VectorXd& x) {
  detail::check_row(model, x);
  switch (model.spec.family) {
    case ModelFamily::linear:
      return detail::standardized_dot(model.design, params.coef, x);
    case ModelFamily::logistic:
      return expit(detail::standardized_dot(model.design, params.coef, x));
    case ModelFamily::zip: {
      const Eigen::Index half = params.coef.size() / 2;
      const double pi = expit(detail::standardized_dot(model.design, params.coef, x));
      const double mu =
          std::min(std::exp(detail::standardized_dot(model.design, params.coef, x, half)), 1e4);
      return (1.0 - pi) * mu;
    }
    case ModelFamily::bart:
      return model.bart->eval(params.bart_draw, x);
  }
  throw std::logic_error("conditional_mean: unknown family");
}

/// Posterior-predictive draw: conditional mean plus observation noise
/// (normal for linear/bart, Bernoulli label for logistic, structural-zero
/// Bernoulli then Poisson for zip).
inline double draw_value(const FittedModel& model, const ParamDraw& params,
                         const Eigen::VectorXd& x, Rng& rng) {
  detail::check_row(model, x);
  switch (model.spec.family) {
    case ModelFamily::linear:
      return detail::standardized_dot(model.design, params.coef, x) +
             params.sigma * (params.sigma > 0.0 ? rng.normal() : 0.0);
    case ModelFamily::logistic:
      return rng.bernoulli(expit(detail::standardized_dot(model.design, params.coef, x))) ? 1.0
                                                                                          : 0.0;
    case ModelFamily::zip: {
      const Eigen::Index half = params.coef.size() / 2;
      const double pi = expit(detail::standardized_dot(model.design, params.coef, x));
      if (rng.bernoulli(pi)) return 0.0;
      const double mu =
          std::min(std::exp(detail::standardized_dot(model.design, params.coef, x, half)), 1e4);
      return static_cast<double>(rng.poisson(mu));
    }
    case ModelFamily::bart:
      return model.bart->eval(params.bart_draw, x) + params.bart_sigma * rng.normal();
  }
  throw std::logic_error("draw_value: unknown family");
}

struct PredictiveDraws {
  std::vector<double> values;
  std::vector<double> probabilities;  // logistic family only
};

/// One posterior-predictive draw per row of Xnew: a single parameter draw,
/// then per-row observation noise.
inline PredictiveDraws predictive_draw(const FittedModel& model, const Eigen::MatrixXd& Xnew,
                                       std::uint64_t seed) {
  Rng rng(seed);
  const ParamDraw params = sample_params(model, rng);
  PredictiveDraws out;
  out.values.reserve(static_cast<std::size_t>(Xnew.rows()));
  for (Eigen::Index i = 0; i < Xnew.rows(); ++i) {
    const Eigen::VectorXd x = Xnew.row(i);
    out.values.push_back(draw_value(model, params, x, rng));
    if (model.spec.family == ModelFamily::logistic)
      out.probabilities.push_back(conditional_mean(model, params, x));
  }
  return out;
}

}  // namespace acelab

#endif  // ACELAB_MODELS_HPP
