// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include "diif/core/mat.hpp"

namespace diif {

constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::hypot(x, y); }
};

inline double dist(Vec2 a, Vec2 b) { return (a - b).norm(); }

/// Planar three-link arm anchored at a fixed base. base_angle is the
/// heading of the first link when all joints are zero; the overhead arm
/// in three-arm setups points straight down.
struct ArmGeometry {
  Vec2 base;
  double base_angle = 0.0;
  std::array<double, 3> links{0.4, 0.3, 0.2};
  double joint_limit = kPi;
  double grasp_radius = 0.05;
  double collision_radius = 0.03;

  double reach() const { return links[0] + links[1] + links[2]; }
};

using Joints = std::array<double, 3>;

namespace detail {

/// Joint positions along the chain: base, two elbows, end effector.
inline std::array<Vec2, 4> fk_chain(const ArmGeometry& g, const Joints& q) {
  std::array<Vec2, 4> pts;
  pts[0] = g.base;
  double a = g.base_angle;
  for (int i = 0; i < 3; ++i) {
    a += q[i];
    pts[i + 1] = pts[i] + Vec2{std::cos(a), std::sin(a)} * g.links[i];
  }
  return pts;
}

}  // namespace detail

inline Vec2 forward_kinematics(const ArmGeometry& g, const Joints& q) {
  for (double v : q)
    require(std::isfinite(v) && std::abs(v) <= g.joint_limit + 1e-12,
            "forward_kinematics: joint ", v, " outside limit ", g.joint_limit);
  return detail::fk_chain(g, q)[3];
}

namespace detail {

inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

inline std::optional<Joints> dls_solve(const ArmGeometry& g, Vec2 target,
                                       Joints q, int iters) {
  constexpr double kTol = 1e-3;
  constexpr double kLambda = 0.1;
  constexpr double kStepCap = 0.15;  // task-space metres per iteration
  for (auto& v : q) v = std::clamp(v, -g.joint_limit, g.joint_limit);
  for (int it = 0; it < iters; ++it) {
    const auto pts = fk_chain(g, q);
    Vec2 e = target - pts[3];
    const double en = e.norm();
    if (en < kTol) return q;
    // Walk toward distant targets instead of leaping: a raw Gauss-Newton
    // step oscillates when the goal is behind the base.
    if (en > kStepCap) e = e * (kStepCap / en);

    // Column i of the Jacobian rotates everything distal of joint i.
    double jx[3], jy[3];
    for (int i = 0; i < 3; ++i) {
      const Vec2 r = pts[3] - pts[i];
      jx[i] = -r.y;
      jy[i] = r.x;
    }
    // dq = J^T (J J^T + lambda^2 I)^{-1} e, a 2x2 solve in task space.
    double a00 = kLambda * kLambda, a01 = 0.0, a11 = kLambda * kLambda;
    for (int i = 0; i < 3; ++i) {
      a00 += jx[i] * jx[i];
      a01 += jx[i] * jy[i];
      a11 += jy[i] * jy[i];
    }
    const double det = a00 * a11 - a01 * a01;
    const double zx = (a11 * e.x - a01 * e.y) / det;
    const double zy = (a00 * e.y - a01 * e.x) / det;
    for (int i = 0; i < 3; ++i) {
      q[i] += jx[i] * zx + jy[i] * zy;
      q[i] = std::clamp(q[i], -g.joint_limit, g.joint_limit);
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Damped least-squares inverse kinematics with a 200-iteration budget:
/// the caller's init gets the first 100 (so warm starts dominate), then
/// point-at-the-target restarts with either elbow chirality get 50 each,
/// which rescues goals behind the base. Joints stay clamped to limits
/// throughout. Returns nothing for unreachable targets or
/// non-convergence.
inline std::optional<Joints> inverse_kinematics(const ArmGeometry& g,
                                                Vec2 target,
                                                const Joints& init) {
  if (dist(target, g.base) > g.reach()) return std::nullopt;
  if (auto q = detail::dls_solve(g, target, init, 100)) return q;
  const Vec2 d = target - g.base;
  const double aim = detail::wrap_angle(std::atan2(d.y, d.x) - g.base_angle);
  if (auto q = detail::dls_solve(g, target, {aim, 0.3, 0.3}, 50)) return q;
  return detail::dls_solve(g, target, {aim, -0.3, -0.3}, 50);
}

}  // namespace diif
