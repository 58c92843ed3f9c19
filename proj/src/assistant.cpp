#include "gaitforge/assistant.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gaitforge {

double Lesson::norm() const { return std::hypot(kp, kd); }

LessonRange LessonRange::milestones(const Lesson& begin, double k_percent) {
  const double f = k_percent / 100.0;
  return {begin, begin.scaled(f * f)};
}

Lesson milestone_strength(const LessonRange& range, double t, double k_percent, double p) {
  if (!(t >= 0.0)) throw std::invalid_argument("milestone_strength: t must be >= 0");
  if (!(p > 0.0)) throw std::invalid_argument("milestone_strength: p must be > 0");
  const double f = k_percent / 100.0;
  const auto drops = static_cast<long>(std::floor(t / p));
  Lesson x = range.begin;
  for (long i = 0; i < drops && (x.kp > range.end.kp || x.kd > range.end.kd); ++i) x = x.scaled(f);
  // Snap to the end point once reached; guards against rounding in begin * f^n.
  auto floor_at = [](double v, double end) { return v <= end * (1.0 + 1e-12) ? end : v; };
  return {floor_at(x.kp, range.end.kp), floor_at(x.kd, range.end.kd)};
}

Eigen::Vector3d spd_force(const Eigen::Matrix3d& mass, const Eigen::Matrix3d& kp, const Eigen::Matrix3d& kd,
                          const Eigen::Vector3d& p, const Eigen::Vector3d& v, const Eigen::Vector3d& p_target,
                          const Eigen::Vector3d& v_target, double dt) {
  const Eigen::Vector3d rhs = -kp * (p + dt * v - p_target) - kd * (v - v_target);
  const Eigen::Vector3d a = (mass + dt * kd).partialPivLu().solve(rhs);
  return mass * a;
}

AssistResult spd_assist_force(const CharacterModel& model, const SimState& state, const Lesson& lesson,
                              double v_target, double dt) {
  AssistResult out;
  out.force.link = model.assist_link;
  out.force.point = model.links[model.assist_link].com_offset;
  if (lesson.is_zero()) return out;

  const Kinematics kin = forward_kinematics(model, state.q, state.qd);
  const int link = model.assist_link;
  const Eigen::Vector3d p = kin.com[link];
  const Eigen::Vector3d v = point_velocity(kin.velocity[link], p);

  const Eigen::Matrix3d kp = Eigen::Vector3d(lesson.kp, 0.0, 0.0).asDiagonal();
  const Eigen::Matrix3d kd = Eigen::Vector3d(kBalanceDampingRatio * lesson.kp, 0.0, lesson.kd).asDiagonal();
  // Targets: lateral position 0 and forward speed v_target; other axes are unconstrained.
  const Eigen::Vector3d p_target(0.0, p.y(), p.z());
  const Eigen::Vector3d v_goal(0.0, v.y(), v_target);
  Eigen::Vector3d f = spd_force(root_translational_inertia(model), kp, kd, p, v, p_target, v_goal, dt);
  f.y() = 0.0;

  const double mag = f.norm();
  if (!std::isfinite(mag) || mag > kMaxAssistForce) {
    f = std::isfinite(mag) ? Eigen::Vector3d(f * (kMaxAssistForce / mag)) : Eigen::Vector3d::Zero();
    out.clamped = true;
  }
  out.force.force = f;
  return out;
}

}  // namespace gaitforge
