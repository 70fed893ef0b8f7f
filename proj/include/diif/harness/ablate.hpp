// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "diif/harness/evaluate.hpp"
#include "diif/harness/train.hpp"

namespace diif {

constexpr uint64_t kAblationDatasetSeed = 9000;
constexpr uint64_t kAblationEvalSeed = 5000;

struct CellResult {
  std::string row;
  std::string task;
  std::vector<double> per_seed;          // success rate per training seed
  std::vector<double> per_seed_correct;  // correct-arm rate per seed
  double mean = 0.0;
  double mean_correct = 0.0;
  bool failed = false;
  std::string error;
};

struct AblationReport {
  std::string grid;
  std::vector<std::string> tasks;
  int seeds = 0;
  int epochs = 0;
  int demos = 0;
  std::vector<CellResult> cells;

  const CellResult& cell(const std::string& row, const std::string& task) const {
    for (const auto& c : cells)
      if (c.row == row && c.task == task) return c;
    fail("ablation: no cell (", row, ", ", task, ")");
  }
};

/// Trains and scores grid cells while sharing datasets and evaluation
/// seeds, so cells differ only in the knob under study. Results are
/// memoized on the full config so overlapping grids reuse work.
class AblationRunner {
 public:
  explicit AblationRunner(std::ostream* log = nullptr) : log_(log) {}

  const DemoSet& dataset(TaskName task, int count, int n_points) {
    const std::string key = std::string(task_name(task)) + "/" +
                            std::to_string(count) + "/" +
                            std::to_string(n_points);
    auto it = datasets_.find(key);
    if (it != datasets_.end()) return it->second;
    if (log_)
      *log_ << "ablate: generating " << count << " demos for "
            << task_name(task) << "\n";
    const uint64_t seed =
        kAblationDatasetSeed + 131 * static_cast<uint64_t>(task);
    DemoSet ds = generate_demos(make_task(task), count, seed, n_points);
    return datasets_.emplace(key, std::move(ds)).first->second;
  }

  CellResult run_cell(const std::string& row, TrainConfig cfg, int seeds) {
    const std::string key =
        canonical_config_text(cfg) + "seeds=" + std::to_string(seeds);
    auto it = cells_.find(key);
    if (it == cells_.end()) {
      CellResult res = compute_cell(row, cfg, seeds);
      it = cells_.emplace(key, std::move(res)).first;
    }
    CellResult out = it->second;
    out.row = row;
    out.task = task_name(cfg.task);
    return out;
  }

 private:
  CellResult compute_cell(const std::string& row, const TrainConfig& cfg,
                          int seeds) {
    CellResult res;
    res.row = row;
    res.task = task_name(cfg.task);
    try {
      const DemoSet& ds = dataset(cfg.task, cfg.demos, cfg.n_points);
      const TaskSpec spec = make_task(cfg.task);
      for (int s = 0; s < seeds; ++s) {
        TrainConfig c = cfg;
        c.seed = cfg.seed + static_cast<uint64_t>(s);
        if (log_)
          *log_ << "ablate: " << row << " / " << task_name(cfg.task)
                << " seed " << c.seed << "\n";
        TrainResult tr = train_policy(c, ds);
        if (tr.diverged) fail("training diverged at seed ", c.seed);
        EvalSummary ev = evaluate_policy(tr.ckpt.ema, spec, cfg.eval_episodes,
                                         kAblationEvalSeed);
        res.per_seed.push_back(ev.success_rate);
        res.per_seed_correct.push_back(ev.correct_arm_rate);
        if (log_)
          *log_ << "ablate:   success " << ev.success_rate << " correct-arm "
                << ev.correct_arm_rate << "\n";
      }
      for (double v : res.per_seed) res.mean += v;
      for (double v : res.per_seed_correct) res.mean_correct += v;
      res.mean /= seeds;
      res.mean_correct /= seeds;
    } catch (const Error& e) {
      res.failed = true;
      res.error = e.what();
      res.mean = 0.0;
      res.mean_correct = 0.0;
      if (log_) *log_ << "ablate: cell failed: " << e.what() << "\n";
    }
    return res;
  }

  std::map<std::string, DemoSet> datasets_;
  std::map<std::string, CellResult> cells_;
  std::ostream* log_ = nullptr;
};

struct AblationGridConfig {
  std::string grid = "table2";
  std::vector<TaskName> tasks;  // empty selects the grid default
  int seeds = 3;
  TrainConfig base;
  std::vector<int> demo_counts = {25, 50, 100};
  std::vector<int> widths = {32, 64, 128};
  std::ostream* log = nullptr;
};

namespace detail {

using RowEdit = std::function<void(TrainConfig&)>;

inline std::vector<std::pair<std::string, RowEdit>> grid_rows(
    const AblationGridConfig& g) {
  std::vector<std::pair<std::string, RowEdit>> rows;
  auto arch = [](PolicyTag t) {
    return [t](TrainConfig& c) { c.arch = t; };
  };
  if (g.grid == "arch") {
    rows.push_back({"integrated", arch(PolicyTag::integrated)});
    rows.push_back({"decoupled", arch(PolicyTag::decoupled)});
    rows.push_back(
        {"interaction", arch(PolicyTag::decoupled_interaction)});
  } else if (g.grid == "table2") {
    rows.push_back({"integrated", arch(PolicyTag::integrated)});
    rows.push_back({"decoupled", arch(PolicyTag::decoupled)});
    rows.push_back({"wo-alpha", [](TrainConfig& c) {
                      c.arch = PolicyTag::decoupled_interaction;
                      c.interaction.use_alpha = false;
                      c.interaction.alpha_pin = 1.0;
                    }});
    rows.push_back({"wo-beta", [](TrainConfig& c) {
                      c.arch = PolicyTag::decoupled_interaction;
                      c.interaction.use_beta = false;
                    }});
    rows.push_back({"full", arch(PolicyTag::decoupled_interaction)});
  } else if (g.grid == "variants") {
    for (auto v : {InteractionVariant::concat, InteractionVariant::mlp,
                   InteractionVariant::selective})
      rows.push_back({variant_name(v), [v](TrainConfig& c) {
                        c.arch = PolicyTag::decoupled_interaction;
                        c.interaction.variant = v;
                      }});
  } else if (g.grid == "demos") {
    for (int n : g.demo_counts)
      rows.push_back({"full-demos" + std::to_string(n), [n](TrainConfig& c) {
                        c.arch = PolicyTag::decoupled_interaction;
                        c.demos = n;
                      }});
  } else if (g.grid == "widths") {
    rows.push_back({"integrated-w" + std::to_string(g.base.gen_width),
                    arch(PolicyTag::integrated)});
    for (int w : g.widths)
      rows.push_back({"interaction-w" + std::to_string(w), [w](TrainConfig& c) {
                        c.arch = PolicyTag::decoupled_interaction;
                        c.gen_width = w;
                      }});
  } else {
    fail("ablate: unknown grid '", g.grid,
         "' (want arch | table2 | variants | demos | widths)");
  }
  return rows;
}

inline std::vector<TaskName> grid_default_tasks(const std::string& grid) {
  if (grid == "table2" || grid == "variants") return {TaskName::handover};
  if (grid == "arch") return {TaskName::dual_pick};
  return {TaskName::dual_pick};
}

}  // namespace detail

inline AblationReport run_ablation(const AblationGridConfig& g,
                                   AblationRunner* shared = nullptr) {
  AblationRunner local(g.log);
  AblationRunner& runner = shared ? *shared : local;
  const auto rows = detail::grid_rows(g);
  const std::vector<TaskName> tasks =
      g.tasks.empty() ? detail::grid_default_tasks(g.grid) : g.tasks;
  require(g.seeds >= 1, "ablate: need at least one seed");

  AblationReport rep;
  rep.grid = g.grid;
  rep.seeds = g.seeds;
  rep.epochs = g.base.epochs;
  rep.demos = g.base.demos;
  for (TaskName t : tasks) rep.tasks.push_back(task_name(t));
  for (const auto& [name, edit] : rows) {
    for (TaskName t : tasks) {
      TrainConfig cfg = g.base;
      cfg.task = t;
      edit(cfg);
      rep.cells.push_back(runner.run_cell(name, cfg, g.seeds));
    }
  }
  return rep;
}

}  // namespace diif
