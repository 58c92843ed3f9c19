#pragma once

#include "gaitforge/dynamics.hpp"

#include <Eigen/Core>

namespace gaitforge {

/// A point in curriculum space: balance stiffness kp (N/m) and propel gain kd (N*s/m).
struct Lesson {
  double kp = 0.0;
  double kd = 0.0;

  double norm() const;
  Lesson scaled(double f) const { return {kp * f, kd * f}; }
  bool is_zero() const { return kp == 0.0 && kd == 0.0; }
  bool operator==(const Lesson&) const = default;
};

/// Assistance decays from `begin` to `end` inside a rollout.
struct LessonRange {
  Lesson begin;
  Lesson end;

  /// end = (k%)^2 * begin.
  static LessonRange milestones(const Lesson& begin, double k_percent);
  static LessonRange constant(const Lesson& x) { return {x, x}; }
  bool operator==(const LessonRange&) const = default;
};

/// Strength at rollout time t: begin * (k%)^floor(t/p), never below `end`.
Lesson milestone_strength(const LessonRange& range, double t, double k_percent, double p);

/// Gain ratio between balance damping and balance stiffness.
inline constexpr double kBalanceDampingRatio = 0.1;
inline constexpr double kMaxAssistForce = 1e5;

/// Stable PD on a translational point with mass matrix `mass`:
/// solves (M + dt Kd) a = -Kp (p + dt v - p_target) - Kd (v - v_target) and returns M a.
Eigen::Vector3d spd_force(const Eigen::Matrix3d& mass, const Eigen::Matrix3d& kp, const Eigen::Matrix3d& kd,
                          const Eigen::Vector3d& p, const Eigen::Vector3d& v, const Eigen::Vector3d& p_target,
                          const Eigen::Vector3d& v_target, double dt);

struct AssistResult {
  ExternalForce force;  // applied at the assist link COM
  bool clamped = false;
};

/// Lateral balance (X) and forward propulsion (Z) at the pelvis. No vertical component.
AssistResult spd_assist_force(const CharacterModel& model, const SimState& state, const Lesson& lesson,
                              double v_target, double dt);

}  // namespace gaitforge
