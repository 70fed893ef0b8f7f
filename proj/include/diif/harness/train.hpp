// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <deque>
#include <ostream>
#include <vector>

#include "diif/harness/checkpoint.hpp"
#include "diif/harness/dataset.hpp"

namespace diif {

struct TrainLogEntry {
  long long step = 0;
  double loss = 0.0;
  double smooth = 0.0;  // moving average over the last 100 steps
  double lr = 0.0;
};

struct TrainResult {
  PolicyCheckpoint ckpt;
  std::vector<TrainLogEntry> log;
  bool diverged = false;
  long long steps = 0;
};

/// Full training loop. Deterministic for a fixed (config, dataset) pair:
/// window sampling and per-step noise run on independent streams derived
/// from cfg.seed. Two consecutive non-finite losses abort the run and the
/// partial checkpoint is returned flagged as diverged.
inline TrainResult train_policy(const TrainConfig& cfg, const DemoSet& ds,
                                std::ostream* out = nullptr) {
  require(cfg.task == ds.task, "train: config task ", task_name(cfg.task),
          " != dataset task ", task_name(ds.task));
  const PolicyConfig pcfg = to_policy_config(cfg);
  require(pcfg.K == ds.K, "train: arm count mismatch");
  require(cfg.epochs >= 1 && cfg.batch >= 1, "train: epochs and batch must be positive");

  const int steps_per_epoch = std::max(1, ds.total_steps() / cfg.batch);
  const long long total_steps =
      static_cast<long long>(cfg.epochs) * steps_per_epoch;

  Policy<float> p = make_policy<float>(pcfg, cfg.seed);
  p.norm = ds.stats;
  AdamWConfig opt;
  opt.base_lr = cfg.effective_lr();
  opt.weight_decay = cfg.weight_decay;
  LrSchedule sched{std::min(cfg.effective_warmup(), total_steps), total_steps,
                   cfg.effective_lr()};
  auto tr = make_trainer(std::move(p), opt, sched, cfg.ema_decay);

  Rng root(cfg.seed);
  Rng data_rng = root.derive(0x444154);

  TrainResult res;
  std::deque<double> window;
  double window_sum = 0.0;
  int bad_streak = 0;
  for (long long step = 0; step < total_steps; ++step) {
    TrainingBatch<float> batch =
        sample_windows<float>(ds, pcfg, cfg.batch, data_rng);
    Rng noise = root.derive(0x4e4f49 + static_cast<uint64_t>(step));
    TrainMetrics m = train_step(tr, batch, noise);

    if (!std::isfinite(m.total)) {
      ++bad_streak;
    } else {
      bad_streak = 0;
      window.push_back(m.total);
      window_sum += m.total;
      if (window.size() > 100) {
        window_sum -= window.front();
        window.pop_front();
      }
    }
    const double smooth =
        window.empty() ? m.total : window_sum / static_cast<double>(window.size());
    res.log.push_back({step, m.total, smooth, m.lr});
    if (out && (step % 50 == 0 || step + 1 == total_steps))
      *out << "step " << step << "/" << total_steps << " loss " << m.total
           << " avg " << smooth << " lr " << m.lr << "\n";
    if (bad_streak >= 2) {
      res.diverged = true;
      if (out) *out << "train: diverged at step " << step << "\n";
      break;
    }
  }
  res.steps = tr.step;
  res.ckpt.cfg = cfg;
  res.ckpt.raw = std::move(tr.policy);
  res.ckpt.ema = std::move(tr.ema);
  res.ckpt.train_steps = tr.step;
  res.ckpt.diverged = res.diverged;
  return res;
}

}  // namespace diif
