#ifndef ACELAB_POOLING_HPP
#define ACELAB_POOLING_HPP

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "acelab/stats.hpp"

namespace acelab {

enum class DfConvention { paper, standard };

inline std::string to_string(DfConvention c) {
  return c == DfConvention::paper ? "paper" : "standard";
}

struct ReplicateEstimate {
  double estimate = 0.0;  // point estimate from one replicate
  double variance = 0.0;  // its within-replicate variance
};

struct PooledScalar {
  double estimate = 0.0;
  double within = 0.0;   // mean within-replicate variance
  double between = 0.0;  // sample variance of replicate estimates
  double total = 0.0;    // within + (1 + 1/B) between
  double df = std::numeric_limits<double>::infinity();
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int n_replicates = 0;
  bool zero_between = false;  // df fell back to the normal quantile
};

/// Combines replicate estimates by Rubin's rules. The default df formula
/// uses the D (B+1) denominator; `standard` restores the usual
/// (1 + 1/B) D convention.
inline PooledScalar pool(std::span<const ReplicateEstimate> replicates,
                         DfConvention convention = DfConvention::paper) {
  const std::size_t b = replicates.size();
  if (b < 2) throw std::invalid_argument("pool: need at least 2 replicates");
  for (const auto& r : replicates)
    if (r.variance < 0.0) throw std::invalid_argument("pool: negative replicate variance");

  PooledScalar out;
  out.n_replicates = static_cast<int>(b);
  const double bd = static_cast<double>(b);

  double sum = 0.0, wsum = 0.0;
  for (const auto& r : replicates) {
    sum += r.estimate;
    wsum += r.variance;
  }
  out.estimate = sum / bd;
  out.within = wsum / bd;

  double dsum = 0.0;
  for (const auto& r : replicates) {
    const double d = r.estimate - out.estimate;
    dsum += d * d;
  }
  out.between = dsum / (bd - 1.0);
  out.total = out.within + (1.0 + 1.0 / bd) * out.between;
  out.se = std::sqrt(out.total);

  double quantile;
  if (out.between <= 0.0) {
    out.zero_between = true;
    out.df = std::numeric_limits<double>::infinity();
    quantile = kNormalQuantile975;
  } else {
    const double ratio = convention == DfConvention::paper
                             ? out.within / (out.between * (bd + 1.0))
                             : out.within / ((1.0 + 1.0 / bd) * out.between);
    out.df = (bd - 1.0) * (1.0 + ratio) * (1.0 + ratio);
    quantile = student_t_quantile_975(out.df);
  }
  out.ci_lo = out.estimate - quantile * out.se;
  out.ci_hi = out.estimate + quantile * out.se;
  return out;
}

/// Pooled ACE trajectory: one PooledScalar per time 1..horizon.
struct PooledEstimate {
  std::vector<PooledScalar> by_time;
  int horizon = 0;
  std::string profile_high;
  std::string profile_low;
  DfConvention convention = DfConvention::paper;

  const PooledScalar& at_time(int t) const {
    if (t < 1 || t > horizon) throw std::invalid_argument("PooledEstimate: t outside 1..horizon");
    return by_time[static_cast<std::size_t>(t - 1)];
  }
};

}  // namespace acelab

#endif  // ACELAB_POOLING_HPP
