// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "diif/harness/config.hpp"
#include "diif/policy.hpp"
#include "diif/sim/expert.hpp"

namespace diif {

struct EpisodeResult {
  TaskName task = TaskName::dual_pick;
  uint64_t seed = 0;
  bool success = false;
  bool collision = false;
  bool correct_arm = false;
  int steps = 0;
  double wall_ms = 0.0;
};

struct EvalSummary {
  TaskName task = TaskName::dual_pick;
  int episodes = 0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double correct_arm_rate = 0.0;
  double mean_steps = 0.0;
  std::vector<EpisodeResult> records;
};

namespace detail {

inline void push_observation(const SimState& s, int n_points,
                             std::vector<ObsHistory<float>>& hist,
                             int n_obs_steps) {
  Observation obs = observe(s, n_points);
  for (int i = 0; i < s.K(); ++i) {
    Mat<float> cloud(n_points, 2);
    const Mat<double>& src = obs.clouds[static_cast<size_t>(i)];
    for (int r = 0; r < n_points; ++r)
      for (int c = 0; c < 2; ++c)
        cloud.at(r, c) = static_cast<float>(src.at(r, c));
    ArmState<float> st;
    for (double q : obs.states[static_cast<size_t>(i)].joints)
      st.joints.push_back(static_cast<float>(q));
    st.gripper = static_cast<float>(obs.states[static_cast<size_t>(i)].gripper);
    auto& h = hist[static_cast<size_t>(i)];
    if (static_cast<int>(h.clouds.size()) < n_obs_steps) {
      while (static_cast<int>(h.clouds.size()) < n_obs_steps) {
        h.clouds.push_back(cloud);
        h.states.push_back(st);
      }
    } else {
      h.clouds.erase(h.clouds.begin());
      h.states.erase(h.states.begin());
      h.clouds.push_back(std::move(cloud));
      h.states.push_back(std::move(st));
    }
  }
}

inline ArmCommand command_from_chunk_row(const Mat<float>& chunk, int h) {
  ArmCommand cmd;
  for (int c = 0; c < 3; ++c)
    cmd.joint_targets[static_cast<size_t>(c)] =
        static_cast<double>(chunk.at(h, c));
  cmd.gripper = static_cast<double>(chunk.at(h, 3));
  return cmd;
}

inline void finish_summary(EvalSummary& sum) {
  sum.episodes = static_cast<int>(sum.records.size());
  if (sum.episodes == 0) return;
  double steps = 0;
  for (const auto& r : sum.records) {
    sum.success_rate += r.success ? 1.0 : 0.0;
    sum.collision_rate += r.collision ? 1.0 : 0.0;
    sum.correct_arm_rate += r.correct_arm ? 1.0 : 0.0;
    steps += r.steps;
  }
  sum.success_rate /= sum.episodes;
  sum.collision_rate /= sum.episodes;
  sum.correct_arm_rate /= sum.episodes;
  sum.mean_steps = steps / sum.episodes;
}

}  // namespace detail

/// Receding-horizon rollout: infer a chunk, execute the first
/// n_action_steps commands, re-observe, repeat until the episode ends.
/// Episode e uses spawn seed `seed + e`, so different controllers under
/// the same seed see identical initial scenes.
inline EvalSummary evaluate_policy(const Policy<float>& p,
                                   const TaskSpec& spec, int episodes,
                                   uint64_t seed,
                                   std::vector<EpisodeTrace>* traces = nullptr) {
  const PolicyConfig& cfg = p.cfg;
  require(cfg.K == spec.K, "eval: policy built for ", cfg.K,
          " arms, task wants ", spec.K);
  require(cfg.n_joints == 3 && cfg.action_dim == 4 && cfg.coord_dim == 2,
          "eval: policy dims do not fit this simulator");
  require(episodes >= 1, "eval: need at least one episode");
  require(cfg.n_action_steps >= 1 && cfg.n_action_steps <= cfg.horizon,
          "eval: n_action_steps out of range");

  Rng root(seed);
  EvalSummary sum;
  sum.task = spec.name;
  for (int e = 0; e < episodes; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    SimState s = spawn_episode(spec, seed + static_cast<uint64_t>(e));
    std::vector<ObsHistory<float>> hist(static_cast<size_t>(spec.K));
    detail::push_observation(s, cfg.n_points, hist, cfg.n_obs_steps);

    EpisodeTrace trace;
    Rng ep_rng = root.derive(static_cast<uint64_t>(e));
    TaskOutcome out = evaluate_outcome(spec, s);
    long long cycle = 0;
    while (!out.success && !out.collision && s.step_count < spec.max_steps) {
      Rng cyc = ep_rng.derive(static_cast<uint64_t>(cycle++));
      std::vector<Mat<float>> chunks = infer(p, hist, cyc);
      for (int h = 0; h < cfg.n_action_steps; ++h) {
        std::vector<ArmCommand> cmds;
        for (int i = 0; i < spec.K; ++i)
          cmds.push_back(detail::command_from_chunk_row(
              chunks[static_cast<size_t>(i)], h));
        if (traces) trace.steps.push_back({s, cmds});
        s = step(s, cmds);
        detail::push_observation(s, cfg.n_points, hist, cfg.n_obs_steps);
        out = evaluate_outcome(spec, s);
        if (out.success || out.collision || s.step_count >= spec.max_steps)
          break;
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    EpisodeResult r;
    r.task = spec.name;
    r.seed = seed + static_cast<uint64_t>(e);
    r.success = out.success;
    r.collision = out.collision;
    r.correct_arm = out.correct_arm;
    r.steps = s.step_count;
    r.wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    sum.records.push_back(r);
    if (traces) {
      trace.last = s;
      trace.outcome = out;
      traces->push_back(std::move(trace));
    }
  }
  detail::finish_summary(sum);
  return sum;
}

/// The scripted expert run through the same scoring path; the sanity
/// yardstick for any learned controller.
inline EvalSummary evaluate_expert(const TaskSpec& spec, int episodes,
                                   uint64_t seed,
                                   std::vector<EpisodeTrace>* traces = nullptr) {
  require(episodes >= 1, "eval: need at least one episode");
  EvalSummary sum;
  sum.task = spec.name;
  for (int e = 0; e < episodes; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpisodeTrace tr = run_expert_episode(spec, seed + static_cast<uint64_t>(e));
    const auto t1 = std::chrono::steady_clock::now();
    EpisodeResult r;
    r.task = spec.name;
    r.seed = seed + static_cast<uint64_t>(e);
    r.success = tr.outcome.success && !tr.aborted;
    r.collision = tr.outcome.collision;
    r.correct_arm = tr.outcome.correct_arm;
    r.steps = tr.last.step_count;
    r.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    sum.records.push_back(r);
    if (traces) traces->push_back(std::move(tr));
  }
  detail::finish_summary(sum);
  return sum;
}

}  // namespace diif
