// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "diif/harness/config.hpp"
#include "diif/harness/container.hpp"
#include "diif/sim/expert.hpp"

namespace diif {

/// One successful expert episode, float32, in policy layout: clouds are
/// (T * n_points) x 2 per arm, states T x state_dim, actions T x 4.
struct Demonstration {
  uint64_t seed = 0;
  int t_steps = 0;
  bool success = true;
  std::vector<Mat<float>> clouds;
  std::vector<Mat<float>> states;
  std::vector<Mat<float>> actions;
};

struct DemoSet {
  TaskName task = TaskName::dual_pick;
  int K = 0;
  int n_points = 0;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<Demonstration> demos;
  std::vector<NormStats<float>> stats;  // per arm, per action coordinate

  int total_steps() const {
    int n = 0;
    for (const auto& d : demos) n += d.t_steps;
    return n;
  }
};

namespace detail {

inline Demonstration demo_from_trace(const TaskSpec& spec,
                                     const EpisodeTrace& tr, uint64_t seed,
                                     int n_points) {
  Demonstration d;
  d.seed = seed;
  d.t_steps = static_cast<int>(tr.steps.size());
  const int K = spec.K;
  const int sdim = ArmState<double>::dim(3);
  d.clouds.assign(static_cast<size_t>(K), Mat<float>(d.t_steps * n_points, 2));
  d.states.assign(static_cast<size_t>(K), Mat<float>(d.t_steps, sdim));
  d.actions.assign(static_cast<size_t>(K), Mat<float>(d.t_steps, 4));
  for (int t = 0; t < d.t_steps; ++t) {
    const auto& st = tr.steps[static_cast<size_t>(t)];
    Observation obs = observe(st.state, n_points);
    for (int i = 0; i < K; ++i) {
      const Mat<double>& cl = obs.clouds[static_cast<size_t>(i)];
      for (int r = 0; r < n_points; ++r)
        for (int c = 0; c < 2; ++c)
          d.clouds[static_cast<size_t>(i)].at(t * n_points + r, c) =
              static_cast<float>(cl.at(r, c));
      const auto sv = obs.states[static_cast<size_t>(i)].to_vec();
      for (int c = 0; c < sdim; ++c)
        d.states[static_cast<size_t>(i)].at(t, c) =
            static_cast<float>(sv[static_cast<size_t>(c)]);
      const auto& cmd = st.cmds[static_cast<size_t>(i)];
      for (int c = 0; c < 3; ++c)
        d.actions[static_cast<size_t>(i)].at(t, c) =
            static_cast<float>(cmd.joint_targets[static_cast<size_t>(c)]);
      d.actions[static_cast<size_t>(i)].at(t, 3) =
          static_cast<float>(cmd.gripper);
    }
  }
  return d;
}

}  // namespace detail

/// Per-arm, per-coordinate mean and stddev over every action row.
/// Stddev gets a small floor so constant coordinates stay usable.
inline std::vector<NormStats<float>> action_stats(const DemoSet& ds) {
  std::vector<NormStats<float>> stats;
  const int A = ds.action_dim;
  for (int i = 0; i < ds.K; ++i) {
    std::vector<double> sum(static_cast<size_t>(A), 0.0);
    std::vector<double> sumsq(static_cast<size_t>(A), 0.0);
    long long n = 0;
    for (const auto& d : ds.demos) {
      const Mat<float>& act = d.actions[static_cast<size_t>(i)];
      for (int r = 0; r < act.rows; ++r)
        for (int c = 0; c < A; ++c) {
          const double v = act.at(r, c);
          sum[static_cast<size_t>(c)] += v;
          sumsq[static_cast<size_t>(c)] += v * v;
        }
      n += act.rows;
    }
    require(n > 0, "dataset: no action rows for arm ", i);
    NormStats<float> s;
    s.mean.resize(static_cast<size_t>(A));
    s.stddev.resize(static_cast<size_t>(A));
    for (int c = 0; c < A; ++c) {
      const double m = sum[static_cast<size_t>(c)] / static_cast<double>(n);
      const double var =
          std::max(0.0, sumsq[static_cast<size_t>(c)] / static_cast<double>(n) -
                            m * m);
      s.mean[static_cast<size_t>(c)] = static_cast<float>(m);
      s.stddev[static_cast<size_t>(c)] =
          std::max(1e-6f, static_cast<float>(std::sqrt(var)));
    }
    stats.push_back(std::move(s));
  }
  return stats;
}

/// Rolls scripted-expert episodes at consecutive seeds starting from
/// `seed` and keeps the successes. Gives up if the expert keeps failing:
/// more than half of the last 20 attempts must succeed.
inline DemoSet generate_demos(const TaskSpec& spec, int count, uint64_t seed,
                              int n_points = 32) {
  require(count >= 1, "dataset: count must be positive");
  DemoSet ds;
  ds.task = spec.name;
  ds.K = spec.K;
  ds.n_points = n_points;
  ds.state_dim = ArmState<double>::dim(3);
  ds.action_dim = 4;
  std::deque<bool> window;
  uint64_t ep_seed = seed;
  while (static_cast<int>(ds.demos.size()) < count) {
    EpisodeTrace tr = run_expert_episode(spec, ep_seed);
    const bool ok = tr.outcome.success && !tr.aborted;
    window.push_back(ok);
    if (window.size() > 20) window.pop_front();
    if (ok) {
      ds.demos.push_back(detail::demo_from_trace(spec, tr, ep_seed, n_points));
    } else if (window.size() >= 20) {
      int fails = 0;
      for (bool w : window) fails += w ? 0 : 1;
      require(2 * fails <= static_cast<int>(window.size()),
              "dataset: expert failing too often on ", task_name(spec.name),
              " near seed ", ep_seed);
    }
    ++ep_seed;
  }
  ds.stats = action_stats(ds);
  return ds;
}

inline uint64_t dataset_hash_text(const DemoSet& ds, std::string* text_out) {
  std::ostringstream t;
  t << "task=" << task_name(ds.task) << "\nK=" << ds.K
    << "\nn_points=" << ds.n_points << "\nstate_dim=" << ds.state_dim
    << "\naction_dim=" << ds.action_dim << "\ncount=" << ds.demos.size()
    << '\n';
  for (const auto& d : ds.demos) t << d.seed << ':' << d.t_steps << '\n';
  if (text_out) *text_out = t.str();
  return fnv1a64(t.str());
}

inline nlohmann::json dataset_manifest(const DemoSet& ds) {
  nlohmann::json m;
  m["kind"] = "dataset";
  m["schema"] = 1;
  m["task"] = task_name(ds.task);
  m["arms"] = ds.K;
  m["n_points"] = ds.n_points;
  m["state_dim"] = ds.state_dim;
  m["action_dim"] = ds.action_dim;
  m["count"] = ds.demos.size();
  m["config_hash"] = hex64(dataset_hash_text(ds, nullptr));
  nlohmann::json demos = nlohmann::json::array();
  for (const auto& d : ds.demos)
    demos.push_back(
        {{"seed", d.seed}, {"steps", d.t_steps}, {"success", d.success}});
  m["demos"] = demos;
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& s : ds.stats) {
    nlohmann::json e;
    e["mean"] = s.mean;
    e["stddev"] = s.stddev;
    stats.push_back(e);
  }
  m["action_stats"] = stats;
  return m;
}

/// Writes the container plus a human-readable JSON manifest sidecar at
/// path + ".manifest.json".
inline void save_dataset(const std::string& path, const DemoSet& ds) {
  Container c;
  c.meta = dataset_manifest(ds);
  for (size_t d = 0; d < ds.demos.size(); ++d) {
    const auto& demo = ds.demos[d];
    const std::string base = "demo" + std::to_string(d) + ".arm";
    for (int i = 0; i < ds.K; ++i) {
      const std::string arm = base + std::to_string(i);
      c.arrays.push_back({arm + ".clouds", demo.clouds[static_cast<size_t>(i)]});
      c.arrays.push_back({arm + ".states", demo.states[static_cast<size_t>(i)]});
      c.arrays.push_back(
          {arm + ".actions", demo.actions[static_cast<size_t>(i)]});
    }
  }
  for (int i = 0; i < ds.K; ++i) {
    const auto& s = ds.stats[static_cast<size_t>(i)];
    Mat<float> mean(1, ds.action_dim), stddev(1, ds.action_dim);
    for (int cidx = 0; cidx < ds.action_dim; ++cidx) {
      mean.at(0, cidx) = s.mean[static_cast<size_t>(cidx)];
      stddev.at(0, cidx) = s.stddev[static_cast<size_t>(cidx)];
    }
    const std::string arm = "arm" + std::to_string(i);
    c.arrays.push_back({arm + ".action_mean", std::move(mean)});
    c.arrays.push_back({arm + ".action_std", std::move(stddev)});
  }
  save_container(path, c);
  std::ofstream mf(path + ".manifest.json", std::ios::trunc);
  require(mf.good(), "dataset: cannot write manifest next to '", path, "'");
  mf << c.meta.dump(2) << '\n';
}

inline DemoSet load_dataset(const std::string& path) {
  Container c = load_container(path);
  const auto& m = c.meta;
  require(m.value("kind", "") == "dataset", "dataset '", path,
          "': not a dataset container");
  require(m.value("schema", -1) == 1, "dataset '", path,
          "': unsupported schema");
  DemoSet ds;
  ds.task = task_from_name(m.at("task").get<std::string>());
  ds.K = m.at("arms").get<int>();
  ds.n_points = m.at("n_points").get<int>();
  ds.state_dim = m.at("state_dim").get<int>();
  ds.action_dim = m.at("action_dim").get<int>();
  const auto& demos = m.at("demos");
  for (size_t d = 0; d < demos.size(); ++d) {
    Demonstration demo;
    demo.seed = demos[d].at("seed").get<uint64_t>();
    demo.t_steps = demos[d].at("steps").get<int>();
    demo.success = demos[d].at("success").get<bool>();
    const std::string base = "demo" + std::to_string(d) + ".arm";
    for (int i = 0; i < ds.K; ++i) {
      const std::string arm = base + std::to_string(i);
      demo.clouds.push_back(c.get(arm + ".clouds"));
      demo.states.push_back(c.get(arm + ".states"));
      demo.actions.push_back(c.get(arm + ".actions"));
      require(demo.clouds.back().rows == demo.t_steps * ds.n_points &&
                  demo.clouds.back().cols == 2,
              "dataset '", path, "': cloud shape mismatch in demo ", d);
      require(demo.states.back().rows == demo.t_steps &&
                  demo.states.back().cols == ds.state_dim,
              "dataset '", path, "': state shape mismatch in demo ", d);
      require(demo.actions.back().rows == demo.t_steps &&
                  demo.actions.back().cols == ds.action_dim,
              "dataset '", path, "': action shape mismatch in demo ", d);
    }
    ds.demos.push_back(std::move(demo));
  }
  for (int i = 0; i < ds.K; ++i) {
    const std::string arm = "arm" + std::to_string(i);
    const Mat<float>& mean = c.get(arm + ".action_mean");
    const Mat<float>& stddev = c.get(arm + ".action_std");
    NormStats<float> s;
    s.mean.assign(mean.data.begin(), mean.data.end());
    s.stddev.assign(stddev.data.begin(), stddev.data.end());
    s.validate(ds.action_dim);
    ds.stats.push_back(std::move(s));
  }
  require(m.value("config_hash", "") == hex64(dataset_hash_text(ds, nullptr)),
          "dataset '", path, "': manifest hash mismatch");
  return ds;
}

/// Uniformly samples (episode, t) anchors and cuts training windows.
/// Observation history reaches back n_obs_steps with edge repetition at
/// the start; action chunks reach forward `horizon` steps and repeat the
/// final command past the end of the episode.
template <class T>
TrainingBatch<T> sample_windows(const DemoSet& ds, const PolicyConfig& cfg,
                                int batch, Rng& rng) {
  require(!ds.demos.empty(), "sample: empty dataset");
  require(cfg.K == ds.K && cfg.n_points == ds.n_points &&
              cfg.state_dim() == ds.state_dim &&
              cfg.action_dim == ds.action_dim,
          "sample: policy dims do not match dataset (K ", cfg.K, "/", ds.K,
          ", points ", cfg.n_points, "/", ds.n_points, ")");
  const int n_obs = cfg.n_obs_steps;
  const int H = cfg.horizon;
  const int A = cfg.action_dim;

  TrainingBatch<T> tb;
  tb.obs.batch = batch;
  for (int i = 0; i < cfg.K; ++i) {
    ArmObs<T> a;
    a.clouds = Mat<T>(batch * n_obs * cfg.n_points, cfg.coord_dim);
    a.states = Mat<T>(batch * n_obs, ds.state_dim);
    tb.obs.arms.push_back(std::move(a));
    tb.chunks.emplace_back(batch, H * A);
  }

  for (int b = 0; b < batch; ++b) {
    const auto& demo =
        ds.demos[static_cast<size_t>(rng.below(ds.demos.size()))];
    const int T_ep = demo.t_steps;
    const int t = static_cast<int>(rng.below(static_cast<uint64_t>(T_ep)));
    for (int i = 0; i < cfg.K; ++i) {
      auto& arm = tb.obs.arms[static_cast<size_t>(i)];
      const auto& cl = demo.clouds[static_cast<size_t>(i)];
      const auto& st = demo.states[static_cast<size_t>(i)];
      for (int s = 0; s < n_obs; ++s) {
        const int src_t = std::max(0, t - (n_obs - 1) + s);
        const int dst = (b * n_obs + s);
        for (int r = 0; r < cfg.n_points; ++r)
          for (int cc = 0; cc < cfg.coord_dim; ++cc)
            arm.clouds.at(dst * cfg.n_points + r, cc) =
                static_cast<T>(cl.at(src_t * cfg.n_points + r, cc));
        for (int cc = 0; cc < ds.state_dim; ++cc)
          arm.states.at(dst, cc) = static_cast<T>(st.at(src_t, cc));
      }
      const auto& act = demo.actions[static_cast<size_t>(i)];
      auto& chunk = tb.chunks[static_cast<size_t>(i)];
      for (int h = 0; h < H; ++h) {
        const int src_t = std::min(t + h, T_ep - 1);
        for (int cc = 0; cc < A; ++cc)
          chunk.at(b, h * A + cc) = static_cast<T>(act.at(src_t, cc));
      }
    }
  }
  return tb;
}

}  // namespace diif
