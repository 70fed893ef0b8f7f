// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "diif/sim/tasks.hpp"

namespace diif {

namespace detail {

constexpr double kGraspTrigger = 0.035;  // close the gripper inside this
constexpr double kPlaceTrigger = 0.02;   // open the gripper inside this
constexpr double kClearance = 0.25;      // peer must back off this far

inline std::optional<ArmCommand> reach_cmd(const SimState& s, int arm,
                                           Vec2 target, double grip) {
  const auto q = inverse_kinematics(s.geom[arm], target, s.joints(arm));
  if (!q) return std::nullopt;
  return ArmCommand{*q, grip};
}

inline ArmCommand home_cmd(const SimState& s, int arm) {
  return {home_joints(s.K())[arm], 0.0};
}

/// One arm's slice of a waypoint plan: fetch an object, carry it to a
/// place point, let go, retreat. Gates park the arm at a wait point
/// until a peer finishes its part.
struct PickPlan {
  int obj = 0;
  Vec2 place;
  bool release_at_place = true;
  bool may_pick = true;
  bool may_place = true;
  Vec2 wait_point;
};

inline std::optional<ArmCommand> pick_place_cmd(const SimState& s, int arm,
                                                const PickPlan& plan) {
  if (plan.release_at_place &&
      first_event_step(s, EventKind::release, arm, plan.obj) >= 0)
    return home_cmd(s, arm);

  const auto& o = s.objects[plan.obj];
  const Vec2 ee = s.ee(arm);
  if (o.held_by == arm) {
    if (!plan.may_place) return reach_cmd(s, arm, plan.wait_point, 1.0);
    if (!plan.release_at_place) return reach_cmd(s, arm, plan.place, 1.0);
    const double grip = dist(ee, plan.place) <= kPlaceTrigger ? 0.0 : 1.0;
    return reach_cmd(s, arm, plan.place, grip);
  }
  if (!plan.may_pick) return reach_cmd(s, arm, plan.wait_point, 0.0);
  if (o.held_by >= 0) return ArmCommand{s.joints(arm), 0.0};
  const double grip = dist(ee, o.pos) <= kGraspTrigger ? 1.0 : 0.0;
  return reach_cmd(s, arm, o.pos, grip);
}

/// True once the peer has dropped the given object and pulled back from
/// the point, so moving in cannot trip the collision rule.
inline bool peer_done(const SimState& s, int peer, int obj, Vec2 point) {
  return first_event_step(s, EventKind::release, peer, obj) >= 0 &&
         dist(s.ee(peer), point) >= kClearance;
}

}  // namespace detail

/// Scripted per-task expert. A pure function of the state: plan phase is
/// reconstructed from the event log, held flags, and geometry. Returns
/// nothing when inverse kinematics fails, which aborts the episode.
inline std::optional<std::vector<ArmCommand>> expert_action(
    const TaskSpec& spec, const SimState& s) {
  using detail::PickPlan;
  require(s.K() == spec.K, "expert_action: task wants ", spec.K, " arms, got ",
          s.K());
  std::vector<PickPlan> plans;
  std::vector<ArmCommand> out(static_cast<size_t>(spec.K));

  switch (spec.name) {
    case TaskName::handover: {
      PickPlan p0{0, spec.handoff};
      PickPlan p1{0, spec.target};
      p1.may_pick = detail::peer_done(s, 0, 0, spec.handoff);
      p1.wait_point = {0.45, 0.55};
      plans = {p0, p1};
      break;
    }
    case TaskName::stack_order: {
      PickPlan p0{0, spec.target};
      PickPlan p1{1, spec.target};
      p1.may_place = detail::peer_done(s, 0, 0, spec.target);
      p1.wait_point = {0.45, 0.55};
      plans = {p0, p1};
      break;
    }
    case TaskName::dual_pick: {
      for (int i = 0; i < 2; ++i) {
        PickPlan p{i, spec.lifts[static_cast<size_t>(i)]};
        p.release_at_place = false;  // hold the lift
        plans.push_back(p);
      }
      break;
    }
    case TaskName::closest_pick: {
      const int picker = nearest_arm(s.geom, s.objects[0].spawn);
      for (int i = 0; i < 2; ++i) {
        if (i == picker) {
          plans.push_back(PickPlan{0, spec.target});
        } else {
          PickPlan idle{0, spec.target};
          idle.may_pick = false;
          idle.wait_point =
              forward_kinematics(s.geom[i], detail::home_cmd(s, i).joint_targets);
          plans.push_back(idle);
        }
      }
      break;
    }
    case TaskName::three_arm_stack: {
      const Vec2 waits[3] = {{-0.5, 0.6}, {0.5, 0.6}, {0.0, 0.75}};
      for (int i = 0; i < 3; ++i) {
        PickPlan p{i, spec.target};
        if (i > 0) p.may_place = detail::peer_done(s, i - 1, i - 1, spec.target);
        p.wait_point = waits[i];
        plans.push_back(p);
      }
      break;
    }
  }

  for (int i = 0; i < spec.K; ++i) {
    const auto cmd = detail::pick_place_cmd(s, i, plans[static_cast<size_t>(i)]);
    if (!cmd) return std::nullopt;
    out[static_cast<size_t>(i)] = *cmd;
  }
  return out;
}

/// One recorded control tick: the state the commands were issued in.
struct EpisodeStep {
  SimState state;
  std::vector<ArmCommand> cmds;
};

struct EpisodeTrace {
  std::vector<EpisodeStep> steps;
  SimState last;
  TaskOutcome outcome;
  bool aborted = false;
};

/// Rolls the scripted expert until success, collision, expert abort, or
/// the step cap.
inline EpisodeTrace run_expert_episode(const TaskSpec& spec, uint64_t seed) {
  EpisodeTrace tr;
  SimState s = spawn_episode(spec, seed);
  for (int t = 0; t < spec.max_steps; ++t) {
    const auto now = evaluate_outcome(spec, s);
    if (now.success || now.collision) break;
    const auto cmds = expert_action(spec, s);
    if (!cmds) {
      tr.aborted = true;
      break;
    }
    tr.steps.push_back({s, *cmds});
    s = step(s, *cmds);
  }
  tr.last = s;
  tr.outcome = evaluate_outcome(spec, s);
  return tr;
}

}  // namespace diif
