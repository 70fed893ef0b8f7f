// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "diif/core/mat.hpp"

namespace diif {

namespace detail {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

constexpr uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Acklam's rational approximation of the inverse normal CDF.
/// Uses only +,-,*,/ and sqrt/log, so streams are reproducible; absolute
/// error ~1e-9, far below float32 resolution.
inline double inverse_normal_cdf(double p) {
  static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                  -2.759285104469687e+02, 1.383577518672690e+02,
                                  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                  -1.556989798598866e+02, 6.680131188771972e+01,
                                  -1.328068155288572e+01};
  static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

/// Counter-based PRNG: draw i of stream (key) is a pure function of
/// (key, i). Independent streams for parallel episodes come from
/// derive() without shared mutable state.
struct Rng {
  uint64_t key = 0;
  uint64_t counter = 0;

  explicit Rng(uint64_t seed = 0) : key(detail::mix64(seed ^ detail::kGolden)) {}

  /// Child stream for e.g. (seed, episode index). Deterministic and
  /// decorrelated from the parent and from other indices.
  Rng derive(uint64_t index) const {
    Rng child(0);
    child.key = detail::mix64(key + 0xD1B54A32D192ED03ull + index * detail::kGolden);
    child.counter = 0;
    return child;
  }

  uint64_t next_u64() { return detail::mix64(key + (++counter) * detail::kGolden); }

  /// Uniform double in (0,1), 53-bit resolution, never exactly 0 or 1.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  double normal() { return detail::inverse_normal_cdf(uniform()); }

  template <class T>
  void fill_normal(Mat<T>& m) {
    for (auto& v : m.data) v = static_cast<T>(normal());
  }

  template <class T>
  void fill_uniform(Mat<T>& m, T lo, T hi) {
    for (auto& v : m.data) v = static_cast<T>(uniform(lo, hi));
  }
};

}  // namespace diif
