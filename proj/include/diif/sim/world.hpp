// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "diif/encoders.hpp"
#include "diif/sim/geometry.hpp"

namespace diif {

constexpr Vec2 kTableLo{-1.0, 0.0};
constexpr Vec2 kTableHi{1.0, 1.2};

enum class EventKind { grasp, release, collision };

inline const char* event_name(EventKind k) {
  switch (k) {
    case EventKind::grasp: return "grasp";
    case EventKind::release: return "release";
    case EventKind::collision: return "collision";
  }
  fail("event_name: bad kind");
}

/// One log entry. `other` is the object id for grasp/release and the
/// peer arm index for collision.
struct SimEvent {
  EventKind kind = EventKind::grasp;
  int step = 0;
  int arm = 0;
  int other = 0;
};

struct SimObject {
  int id = 0;
  int color = 0;
  Vec2 pos;
  Vec2 spawn;
  int held_by = -1;  // arm index, or -1 when free
};

/// Absolute joint targets plus a gripper command in [0,1].
struct ArmCommand {
  Joints joint_targets{};
  double gripper = 0.0;
};

struct SimState {
  std::vector<ArmGeometry> geom;
  std::vector<ArmState<double>> arms;
  std::vector<SimObject> objects;
  int step_count = 0;
  std::vector<SimEvent> events;

  int K() const { return static_cast<int>(geom.size()); }

  Joints joints(int i) const {
    const auto& j = arms[static_cast<size_t>(i)].joints;
    return {j[0], j[1], j[2]};
  }

  Vec2 ee(int i) const {
    return forward_kinematics(geom[static_cast<size_t>(i)], joints(i));
  }
};

inline bool has_collision(const SimState& s) {
  for (const auto& e : s.events)
    if (e.kind == EventKind::collision) return true;
  return false;
}

/// Step of the first matching event, or -1.
inline int first_event_step(const SimState& s, EventKind kind, int arm,
                            int other) {
  for (const auto& e : s.events)
    if (e.kind == kind && e.arm == arm && e.other == other) return e.step;
  return -1;
}

/// Step of the last release of the given object by any arm, or -1.
inline int last_release_step(const SimState& s, int object) {
  int step = -1;
  for (const auto& e : s.events)
    if (e.kind == EventKind::release && e.other == object) step = e.step;
  return step;
}

/// Arm that first grasped the given object, or -1.
inline int first_grasp_arm(const SimState& s, int object) {
  for (const auto& e : s.events)
    if (e.kind == EventKind::grasp && e.other == object) return e.arm;
  return -1;
}

/// Side arms face each other across the table; the third arm hangs
/// overhead pointing down.
inline std::vector<ArmGeometry> make_arms(int K) {
  require(K >= 1 && K <= 3, "make_arms: unsupported arm count ", K);
  std::vector<ArmGeometry> arms;
  arms.push_back({Vec2{-0.8, 0.0}, 0.0});
  if (K >= 2) arms.push_back({Vec2{0.8, 0.0}, kPi});
  if (K >= 3) arms.push_back({Vec2{0.0, 1.1}, -kPi / 2});
  return arms;
}

/// Rest configuration: every end effector parked high in its own corner.
inline std::vector<Joints> home_joints(int K) {
  require(K >= 1 && K <= 3, "home_joints: unsupported arm count ", K);
  std::vector<Joints> q;
  q.push_back({0.9, 0.6, 0.3});
  if (K >= 2) q.push_back({-0.9, -0.6, -0.3});
  if (K >= 3) q.push_back({0.9, 0.6, 0.3});
  return q;
}

namespace detail {

inline Vec2 clamp_to_table(Vec2 p) {
  return {std::clamp(p.x, kTableLo.x, kTableHi.x),
          std::clamp(p.y, kTableLo.y, kTableHi.y)};
}

}  // namespace detail

/// Advances the world by one tick. Joints track their targets under a
/// per-step rate limit; a gripper command crossing 0.5 upward grasps the
/// nearest free object in range, crossing downward releases; held
/// objects ride their end effector; end-effector pairs closer than the
/// collision radius log a collision.
inline SimState step(const SimState& prev,
                     const std::vector<ArmCommand>& cmds) {
  constexpr double kRate = 0.15;  // rad per joint per step
  const int K = prev.K();
  require(static_cast<int>(cmds.size()) == K, "step: got ", cmds.size(),
          " commands for ", K, " arms");
  for (const auto& c : cmds) {
    require(std::isfinite(c.gripper), "step: non-finite gripper");
    for (double v : c.joint_targets)
      require(std::isfinite(v), "step: non-finite joint target");
  }

  SimState s = prev;
  s.step_count = prev.step_count + 1;

  for (int i = 0; i < K; ++i) {
    const double lim = s.geom[i].joint_limit;
    auto& joints = s.arms[i].joints;
    for (int j = 0; j < 3; ++j) {
      const double target = std::clamp(cmds[i].joint_targets[j], -lim, lim);
      const double delta = std::clamp(target - joints[j], -kRate, kRate);
      joints[j] += delta;
    }
    s.arms[i].gripper = std::clamp(cmds[i].gripper, 0.0, 1.0);
  }

  std::vector<Vec2> ees(K);
  for (int i = 0; i < K; ++i) ees[i] = s.ee(i);

  for (int i = 0; i < K; ++i) {
    const double old_grip = prev.arms[i].gripper;
    const double new_grip = s.arms[i].gripper;
    if (old_grip < 0.5 && new_grip >= 0.5) {
      int best = -1;
      double best_d = s.geom[i].grasp_radius;
      for (const auto& o : s.objects) {
        if (o.held_by >= 0) continue;
        const double d = dist(o.pos, ees[i]);
        if (d <= best_d) {
          best_d = d;
          best = o.id;
        }
      }
      if (best >= 0) {
        s.objects[best].held_by = i;
        s.events.push_back({EventKind::grasp, s.step_count, i, best});
      }
    } else if (old_grip >= 0.5 && new_grip < 0.5) {
      for (auto& o : s.objects) {
        if (o.held_by != i) continue;
        o.held_by = -1;
        o.pos = detail::clamp_to_table(ees[i]);
        s.events.push_back({EventKind::release, s.step_count, i, o.id});
      }
    }
  }

  for (auto& o : s.objects)
    if (o.held_by >= 0) o.pos = detail::clamp_to_table(ees[o.held_by]);

  for (int i = 0; i < K; ++i)
    for (int j = i + 1; j < K; ++j) {
      const double r =
          std::max(s.geom[i].collision_radius, s.geom[j].collision_radius);
      if (dist(ees[i], ees[j]) < r)
        s.events.push_back({EventKind::collision, s.step_count, i, j});
    }

  return s;
}

/// World point expressed in the arm's base frame.
inline Vec2 to_arm_frame(const ArmGeometry& g, Vec2 world) {
  const double c = std::cos(g.base_angle), sn = std::sin(g.base_angle);
  const Vec2 d = world - g.base;
  return {c * d.x + sn * d.y, -sn * d.x + c * d.y};
}

struct Observation {
  std::vector<Mat<double>> clouds;  // per arm, n_points x 2, base frame
  std::vector<ArmState<double>> states;
};

namespace detail {

/// Outline points for every object disc plus a small marker per end
/// effector, in world frame and in a fixed order.
inline std::vector<Vec2> dense_scene_points(const SimState& s) {
  constexpr int kOutline = 24;
  constexpr double kObjectRadius = 0.04;
  constexpr double kMarkerRadius = 0.02;
  std::vector<Vec2> pts;
  for (const auto& o : s.objects)
    for (int k = 0; k < kOutline; ++k) {
      const double a = 2.0 * kPi * k / kOutline;
      pts.push_back(o.pos + Vec2{std::cos(a), std::sin(a)} * kObjectRadius);
    }
  for (int i = 0; i < s.K(); ++i) {
    const Vec2 ee = s.ee(i);
    pts.push_back(ee + Vec2{kMarkerRadius, 0.0});
    pts.push_back(ee + Vec2{0.0, kMarkerRadius});
    pts.push_back(ee + Vec2{-kMarkerRadius, 0.0});
    pts.push_back(ee + Vec2{0.0, -kMarkerRadius});
  }
  return pts;
}

/// Farthest-point subsample, seeded at index 0 with ties kept at the
/// lowest index, so the selection is a pure function of the input.
inline std::vector<Vec2> farthest_points(const std::vector<Vec2>& pts,
                                         int n) {
  if (static_cast<int>(pts.size()) <= n) return pts;
  std::vector<Vec2> out;
  out.reserve(n);
  std::vector<double> min_d(pts.size(),
                            std::numeric_limits<double>::infinity());
  size_t pick = 0;
  for (int k = 0; k < n; ++k) {
    out.push_back(pts[pick]);
    for (size_t i = 0; i < pts.size(); ++i)
      min_d[i] = std::min(min_d[i], dist(pts[i], pts[pick]));
    pick = 0;
    for (size_t i = 1; i < pts.size(); ++i)
      if (min_d[i] > min_d[pick]) pick = i;
  }
  return out;
}

}  // namespace detail

/// Per-arm observation: one shared world subsample expressed in each
/// arm's base frame, plus that arm's own joints and gripper.
inline Observation observe(const SimState& s, int n_points = 32) {
  require(n_points > 0, "observe: need a positive point budget");
  const auto world = detail::farthest_points(detail::dense_scene_points(s),
                                             n_points);
  require(static_cast<int>(world.size()) == n_points,
          "observe: scene has only ", world.size(), " points, need ",
          n_points);
  Observation obs;
  for (int i = 0; i < s.K(); ++i) {
    Mat<double> cloud(n_points, 2);
    for (int p = 0; p < n_points; ++p) {
      const Vec2 local = to_arm_frame(s.geom[i], world[p]);
      cloud.at(p, 0) = local.x;
      cloud.at(p, 1) = local.y;
    }
    obs.clouds.push_back(std::move(cloud));
    obs.states.push_back(s.arms[i]);
  }
  return obs;
}

}  // namespace diif
