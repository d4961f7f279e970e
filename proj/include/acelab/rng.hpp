#ifndef ACELAB_RNG_HPP
#define ACELAB_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>

namespace acelab {

namespace detail {

inline std::uint64_t splitmix_fin(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

inline std::uint64_t splitmix_next(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  return splitmix_fin(s);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Derives a child seed from a parent seed and a path component.
/// All parallelism in the library draws from streams produced by chaining
/// this rule, so results do not depend on scheduling or thread count.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t component) {
  return detail::splitmix_fin(parent ^ (0x9e3779b97f4a7c15ULL * (component + 1)));
}

/// xoshiro256++ stream with the samplers the estimators need.
/// Distribution code is self-contained so that fixed-seed runs are
/// reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix_next(sm);
  }

  static Rng from_path(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = master;
    for (std::uint64_t c : path) s = derive_seed(s, c);
    return Rng(s);
  }

  Rng substream(std::uint64_t component) const {
    std::uint64_t s = state_[0] ^ detail::rotl(state_[2], 17);
    return Rng(derive_seed(detail::splitmix_fin(s), component));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Unbiased integer in [0, n). Lemire's method.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t t = (-n) % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Gamma(shape, scale) via Marsaglia-Tsang.
  double gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0)
      throw std::invalid_argument("gamma: shape and scale must be positive");
    if (shape < 1.0) {
      const double u = uniform01();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

  /// InverseGamma(shape, rate): 1/X with X ~ Gamma(shape, 1/rate).
  double inv_gamma(double shape, double rate) { return 1.0 / gamma(shape, 1.0 / rate); }

  double chi_squared(double df) { return gamma(0.5 * df, 2.0); }

  /// Poisson count. Exact: superposition splits large means into
  /// chunks small enough for the multiplication method.
  long poisson(double mean) {
    if (!(mean >= 0.0)) throw std::invalid_argument("poisson: mean must be nonnegative");
    long total = 0;
    while (mean > 30.0) {
      total += poisson_small(15.0);
      mean -= 15.0;
    }
    return total + poisson_small(mean);
  }

 private:
  long poisson_small(double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    long k = 0;
    double prod = uniform01();
    while (prod > limit) {
      ++k;
      prod *= uniform01();
    }
    return k;
  }

  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace acelab

#endif  // ACELAB_RNG_HPP
