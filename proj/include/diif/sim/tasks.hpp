// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "diif/core/rng.hpp"
#include "diif/sim/world.hpp"

namespace diif {

enum class TaskName {
  handover,
  stack_order,
  dual_pick,
  closest_pick,
  three_arm_stack,
};

constexpr int kNumTasks = 5;

inline const char* task_name(TaskName t) {
  switch (t) {
    case TaskName::handover: return "handover";
    case TaskName::stack_order: return "stack-order";
    case TaskName::dual_pick: return "dual-pick";
    case TaskName::closest_pick: return "closest-pick";
    case TaskName::three_arm_stack: return "three-arm-stack";
  }
  fail("task_name: bad task");
}

inline TaskName task_from_name(const std::string& s) {
  for (int i = 0; i < kNumTasks; ++i) {
    const auto t = static_cast<TaskName>(i);
    if (s == task_name(t)) return t;
  }
  fail("unknown task '", s, "'");
}

struct SpawnRect {
  Vec2 lo, hi;
};

/// Task definition: who plays, where objects appear, where they must
/// end up, and how success is judged.
struct TaskSpec {
  TaskName name = TaskName::handover;
  bool coordinated = true;
  int K = 2;
  int max_steps = 200;
  std::vector<SpawnRect> spawns;  // one per object
  Vec2 target;                    // shared goal point (unused for dual-pick)
  Vec2 handoff;                   // meeting point for handover
  std::vector<Vec2> lifts;        // per-arm carry points for dual-pick
  double tol = 0.05;
  double lift_height = 0.7;
};

inline TaskSpec make_task(TaskName name) {
  const SpawnRect left{{-0.95, 0.15}, {-0.6, 0.45}};
  const SpawnRect right{{0.6, 0.15}, {0.95, 0.45}};
  const SpawnRect top{{-0.18, 0.68}, {0.18, 0.88}};
  TaskSpec t;
  t.name = name;
  switch (name) {
    case TaskName::handover:
      t.coordinated = true;
      t.K = 2;
      t.spawns = {left};
      t.target = {0.6, 0.25};
      t.handoff = {0.0, 0.3};
      break;
    case TaskName::stack_order:
      t.coordinated = true;
      t.K = 2;
      t.spawns = {left, right};
      t.target = {0.0, 0.3};
      break;
    case TaskName::dual_pick:
      t.coordinated = false;
      t.K = 2;
      t.spawns = {left, right};
      t.lifts = {{-0.6, 0.78}, {0.6, 0.78}};
      break;
    case TaskName::closest_pick:
      t.coordinated = false;
      t.K = 2;
      t.spawns = {{{-0.85, 0.1}, {0.85, 0.5}}};
      t.target = {0.0, 0.3};
      break;
    case TaskName::three_arm_stack:
      t.coordinated = true;
      t.K = 3;
      t.spawns = {left, right, top};
      t.target = {0.0, 0.27};
      break;
  }
  return t;
}

inline std::vector<TaskSpec> all_tasks() {
  std::vector<TaskSpec> ts;
  for (int i = 0; i < kNumTasks; ++i)
    ts.push_back(make_task(static_cast<TaskName>(i)));
  return ts;
}

/// Arm whose base is nearest to the point; ties go to the lower index.
inline int nearest_arm(const std::vector<ArmGeometry>& geom, Vec2 p) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(geom.size()); ++i)
    if (dist(geom[i].base, p) < dist(geom[best].base, p)) best = i;
  return best;
}

/// Builds the initial world for (task, seed). The same pair always
/// produces the same scene.
inline SimState spawn_episode(const TaskSpec& spec, uint64_t seed) {
  SimState s;
  s.geom = make_arms(spec.K);
  const auto home = home_joints(spec.K);
  for (int i = 0; i < spec.K; ++i) {
    ArmState<double> a;
    a.joints = {home[i][0], home[i][1], home[i][2]};
    a.gripper = 0.0;
    s.arms.push_back(a);
  }
  Rng rng = Rng(seed).derive(static_cast<uint64_t>(spec.name));
  for (int i = 0; i < static_cast<int>(spec.spawns.size()); ++i) {
    const auto& r = spec.spawns[i];
    Vec2 p;
    bool placed = false;
    for (int attempt = 0; attempt < 256 && !placed; ++attempt) {
      p = {rng.uniform(r.lo.x, r.hi.x), rng.uniform(r.lo.y, r.hi.y)};
      placed = true;
      if (spec.name == TaskName::closest_pick) {
        // Keep the object comfortably graspable by the nearer arm while
        // still crossing the left/right decision boundary.
        const int near = nearest_arm(s.geom, p);
        placed = dist(s.geom[near].base, p) <= 0.84;
      }
    }
    require(placed, "spawn_episode: no feasible spawn for object ", i);
    SimObject o;
    o.id = i;
    o.color = i;
    o.pos = p;
    o.spawn = p;
    s.objects.push_back(o);
  }
  return s;
}

struct TaskOutcome {
  bool success = false;
  bool collision = false;
  bool correct_arm = false;
  int steps = 0;
};

namespace detail {

inline bool near_target(const TaskSpec& spec, const SimObject& o) {
  return dist(o.pos, spec.target) <= spec.tol;
}

/// All objects rest at the target with strictly increasing last-release
/// steps in color order.
inline bool stacked_in_order(const TaskSpec& spec, const SimState& s) {
  int prev = -1;
  for (const auto& o : s.objects) {
    if (!near_target(spec, o)) return false;
    const int r = last_release_step(s, o.id);
    if (r < 0 || r <= prev) return false;
    prev = r;
  }
  return true;
}

}  // namespace detail

/// Judges a terminated (or in-flight) episode from the state and its
/// event log. A collision anywhere fails every task.
inline TaskOutcome evaluate_outcome(const TaskSpec& spec, const SimState& s) {
  TaskOutcome out;
  out.steps = s.step_count;
  out.collision = has_collision(s);
  if (out.collision) return out;
  switch (spec.name) {
    case TaskName::handover: {
      const int g0 = first_event_step(s, EventKind::grasp, 0, 0);
      const int g1 = first_event_step(s, EventKind::grasp, 1, 0);
      out.success = detail::near_target(spec, s.objects[0]) && g0 >= 0 &&
                    g1 > g0;
      break;
    }
    case TaskName::stack_order:
    case TaskName::three_arm_stack:
      out.success = detail::stacked_in_order(spec, s);
      break;
    case TaskName::dual_pick:
      out.success = s.objects[0].pos.y > spec.lift_height &&
                    s.objects[1].pos.y > spec.lift_height;
      break;
    case TaskName::closest_pick: {
      const int picker = first_grasp_arm(s, 0);
      out.success = detail::near_target(spec, s.objects[0]) && picker >= 0;
      out.correct_arm =
          picker >= 0 && picker == nearest_arm(s.geom, s.objects[0].spawn);
      break;
    }
  }
  return out;
}

}  // namespace diif
