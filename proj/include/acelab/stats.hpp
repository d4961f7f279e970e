#ifndef ACELAB_STATS_HPP
#define ACELAB_STATS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace acelab {

/// Numerically stable inverse logit.
inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clip(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty input");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample variance with divisor n-1.
inline double sample_variance(std::span<const double> xs) {
  const auto n = xs.size();
  if (n < 2) throw std::invalid_argument("sample_variance: need at least 2 values");
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(n - 1);
}

inline double sd(std::span<const double> xs) { return std::sqrt(sample_variance(xs)); }

/// Linear-interpolation quantile (R type 7) of an unsorted sample.
inline double quantile(std::vector<double> xs, double p) {
  if (xs.empty()) throw std::invalid_argument("quantile: empty input");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("quantile: p outside [0,1]");
  std::sort(xs.begin(), xs.end());
  const double h = p * (static_cast<double>(xs.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline constexpr double kNormalQuantile975 = 1.959963984540054;

/// 97.5% quantile of Student's t; df may be fractional, +inf gives the normal quantile.
inline double student_t_quantile_975(double df) {
  if (!(df > 0.0)) throw std::invalid_argument("student_t_quantile_975: df must be positive");
  if (std::isinf(df) || df > 1e8) return kNormalQuantile975;
  boost::math::students_t_distribution<double> dist(df);
  return boost::math::quantile(dist, 0.975);
}

inline double chi_squared_quantile(double p, double df) {
  boost::math::chi_squared_distribution<double> dist(df);
  return boost::math::quantile(dist, p);
}

}  // namespace acelab

#endif  // ACELAB_STATS_HPP
