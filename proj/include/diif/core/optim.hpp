// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "diif/core/mat.hpp"
#include "diif/core/mlp.hpp"

namespace diif {

struct AdamWConfig {
  double base_lr = 1.0e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1.0e-8;
  double weight_decay = 1.0e-6;
};

/// Decoupled-weight-decay Adam. Moments are kept per named tensor in
/// float64 so the update math is precision-independent of T.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  long long steps_applied() const { return step_; }
  long long steps_rejected() const { return rejected_; }
  const std::string& last_rejection() const { return last_rejection_; }

  /// One optimizer step over aligned param/grad views. If any gradient
  /// entry is non-finite the whole step is rejected (params and moments
  /// untouched) and false is returned.
  bool step(const std::vector<TensorRef<T>>& params,
            const std::vector<TensorRef<T>>& grads, double lr) {
    require(params.size() == grads.size(), "adamw: ", params.size(),
            " param tensors vs ", grads.size(), " grad tensors");
    for (size_t i = 0; i < params.size(); ++i) {
      require(params[i].name == grads[i].name && params[i].n == grads[i].n,
              "adamw: mismatched tensor '", params[i].name, "' (", params[i].n,
              ") vs '", grads[i].name, "' (", grads[i].n, ")");
      for (size_t j = 0; j < grads[i].n; ++j)
        if (!std::isfinite(static_cast<double>(grads[i].data[j]))) {
          ++rejected_;
          last_rejection_ = "non-finite gradient in '" + grads[i].name +
                            "' at index " + std::to_string(j);
          return false;
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& mom = state_[params[i].name];
      if (mom.m.empty()) {
        mom.m.assign(params[i].n, 0.0);
        mom.v.assign(params[i].n, 0.0);
      }
      require(mom.m.size() == params[i].n, "adamw: moment shape drifted for '",
              params[i].name, "'");
      T* w = params[i].data;
      const T* g = grads[i].data;
      for (size_t j = 0; j < params[i].n; ++j) {
        const double gj = static_cast<double>(g[j]);
        mom.m[j] = cfg_.beta1 * mom.m[j] + (1.0 - cfg_.beta1) * gj;
        mom.v[j] = cfg_.beta2 * mom.v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mhat = mom.m[j] / bc1;
        const double vhat = mom.v[j] / bc2;
        const double update = mhat / (std::sqrt(vhat) + cfg_.eps) +
                              cfg_.weight_decay * static_cast<double>(w[j]);
        w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * update);
      }
    }
    return true;
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  long long step_ = 0;
  long long rejected_ = 0;
  std::string last_rejection_;
  std::unordered_map<std::string, Moments> state_;
};

/// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at
/// total_steps, clamped to 0 beyond.
struct LrSchedule {
  long long warmup_steps = 0;
  long long total_steps = 1;
  double base_lr = 1.0e-4;

  void validate() const {
    require(warmup_steps >= 0 && warmup_steps <= total_steps,
            "lr schedule: need 0 <= warmup (", warmup_steps, ") <= total (",
            total_steps, ")");
    require(base_lr >= 0, "lr schedule: negative base lr");
  }
};

inline double lr_at(long long step, const LrSchedule& s) {
  s.validate();
  require(step >= 0, "lr_at: negative step ", step);
  if (step >= s.total_steps) return 0.0;
  if (step < s.warmup_steps)
    return s.base_lr * static_cast<double>(step) /
           static_cast<double>(s.warmup_steps);
  if (s.total_steps == s.warmup_steps) return s.base_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.base_lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

/// ema' = decay * ema + (1 - decay) * params, elementwise.
template <class T>
void ema_update(const std::vector<TensorRef<T>>& ema,
                const std::vector<TensorRef<T>>& params, double decay) {
  require(decay >= 0.0 && decay < 1.0, "ema: decay ", decay,
          " outside [0, 1)");
  require(ema.size() == params.size(), "ema: ", ema.size(), " tensors vs ",
          params.size());
  for (size_t i = 0; i < ema.size(); ++i) {
    require(ema[i].n == params[i].n && ema[i].name == params[i].name,
            "ema: mismatched tensor '", ema[i].name, "' vs '", params[i].name,
            "'");
    for (size_t j = 0; j < ema[i].n; ++j)
      ema[i].data[j] = static_cast<T>(
          decay * static_cast<double>(ema[i].data[j]) +
          (1.0 - decay) * static_cast<double>(params[i].data[j]));
  }
}

constexpr double kDefaultEmaDecay = 0.9999;

}  // namespace diif
