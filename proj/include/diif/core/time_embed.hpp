// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "diif/core/mat.hpp"

namespace diif {

/// Sinusoidal embedding of a scalar t in [0, 1]. Interleaved sin/cos
/// pairs at dim/2 geometrically spaced frequencies from 1 to 1000. The
/// lowest-frequency sin stays monotonic over [0, 1], so distinct t give
/// distinct embeddings.
template <class T>
std::vector<T> time_embed(double t, int dim) {
  require(dim > 0 && dim % 2 == 0, "time_embed: dim must be positive even, got ",
          dim);
  const int half = dim / 2;
  std::vector<T> out(static_cast<size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double frac = half > 1 ? static_cast<double>(k) / (half - 1) : 0.0;
    const double freq = std::pow(1000.0, frac);
    const double phase = freq * t;
    out[static_cast<size_t>(2 * k)] = static_cast<T>(std::sin(phase));
    out[static_cast<size_t>(2 * k + 1)] = static_cast<T>(std::cos(phase));
  }
  return out;
}

}  // namespace diif
