// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "diif/harness/config.hpp"
#include "diif/harness/container.hpp"
#include "diif/policy.hpp"

namespace diif {

constexpr int kCheckpointSchema = 1;

/// Raw and EMA weights plus the config that built them. Normalization
/// stats are shared: they are fixed by the dataset before training.
struct PolicyCheckpoint {
  TrainConfig cfg;
  Policy<float> raw;
  Policy<float> ema;
  long long train_steps = 0;
  bool diverged = false;
};

namespace detail {

inline void append_policy_arrays(Policy<float>& p, const std::string& prefix,
                                 Container& c) {
  visit_policy(p, [&](const std::string& name, float* data, size_t n) {
    NamedArray a;
    a.name = prefix + name;
    a.data = Mat<float>(static_cast<int>(n), 1);
    std::copy(data, data + n, a.data.data.begin());
    c.arrays.push_back(std::move(a));
  });
}

inline void load_policy_arrays(Policy<float>& p, const std::string& prefix,
                               const Container& c, const std::string& origin) {
  visit_policy(p, [&](const std::string& name, float* data, size_t n) {
    const Mat<float>& a = c.get(prefix + name);
    require(a.size() == n, "checkpoint '", origin, "': tensor '", name,
            "' has ", a.size(), " values, wanted ", n);
    std::copy(a.data.begin(), a.data.end(), data);
  });
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const PolicyCheckpoint& ckpt) {
  Container c;
  c.meta["kind"] = "checkpoint";
  c.meta["schema"] = kCheckpointSchema;
  c.meta["config"] = canonical_config_text(ckpt.cfg);
  c.meta["config_hash"] = hex64(config_hash(ckpt.cfg));
  c.meta["train_steps"] = ckpt.train_steps;
  c.meta["diverged"] = ckpt.diverged;

  Policy<float> raw = ckpt.raw;
  Policy<float> ema = ckpt.ema;
  detail::append_policy_arrays(raw, "raw.", c);
  detail::append_policy_arrays(ema, "ema.", c);
  for (int i = 0; i < raw.cfg.K; ++i) {
    const auto& s = raw.norm[static_cast<size_t>(i)];
    Mat<float> mean(1, raw.cfg.action_dim), stddev(1, raw.cfg.action_dim);
    std::copy(s.mean.begin(), s.mean.end(), mean.data.begin());
    std::copy(s.stddev.begin(), s.stddev.end(), stddev.data.begin());
    const std::string arm = "norm.arm" + std::to_string(i);
    c.arrays.push_back({arm + ".mean", std::move(mean)});
    c.arrays.push_back({arm + ".std", std::move(stddev)});
  }
  save_container(path, c);
}

inline PolicyCheckpoint load_checkpoint(const std::string& path) {
  Container c = load_container(path);
  require(c.meta.value("kind", "") == "checkpoint", "checkpoint '", path,
          "': not a checkpoint container");
  require(c.meta.value("schema", -1) == kCheckpointSchema, "checkpoint '",
          path, "': unsupported schema");
  PolicyCheckpoint ckpt;
  ckpt.cfg =
      train_config_from_kv(parse_kv_text(c.meta.at("config").get<std::string>()));
  require(c.meta.value("config_hash", "") == hex64(config_hash(ckpt.cfg)),
          "checkpoint '", path, "': config hash mismatch");
  ckpt.train_steps = c.meta.value("train_steps", 0LL);
  ckpt.diverged = c.meta.value("diverged", false);

  const PolicyConfig pcfg = to_policy_config(ckpt.cfg);
  ckpt.raw = make_policy<float>(pcfg, 0);
  ckpt.ema = make_policy<float>(pcfg, 0);
  detail::load_policy_arrays(ckpt.raw, "raw.", c, path);
  detail::load_policy_arrays(ckpt.ema, "ema.", c, path);
  for (int i = 0; i < pcfg.K; ++i) {
    const std::string arm = "norm.arm" + std::to_string(i);
    const Mat<float>& mean = c.get(arm + ".mean");
    const Mat<float>& stddev = c.get(arm + ".std");
    NormStats<float> s;
    s.mean.assign(mean.data.begin(), mean.data.end());
    s.stddev.assign(stddev.data.begin(), stddev.data.end());
    s.validate(pcfg.action_dim);
    ckpt.raw.norm[static_cast<size_t>(i)] = s;
    ckpt.ema.norm[static_cast<size_t>(i)] = std::move(s);
  }
  return ckpt;
}

}  // namespace diif
