#pragma once

#include "gaitforge/charmodel.hpp"
#include "gaitforge/env.hpp"
#include "gaitforge/policy.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitforge {

class DegenerateInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One control step: the state at time t, the command issued there and what it produced.
struct TrajectoryStep {
  double t = 0.0;
  Eigen::VectorXd q, qd;
  Eigen::VectorXd action;   // clamped
  Eigen::VectorXd torques;  // N*m
  RewardTerms terms;
  Eigen::VectorXd contacts;  // per end effector, at t
  Eigen::Vector2d assist = Eigen::Vector2d::Zero();  // mean (fx, fz) over the step
};

struct Trajectory {
  int dofs = 0;
  int actions = 0;
  int end_effectors = 0;
  std::vector<TrajectoryStep> steps;

  bool empty() const { return steps.empty(); }
  /// Throws DegenerateInput on inconsistent sizes, non-monotone or non-uniform times.
  void check() const;
};

Trajectory empty_trajectory(const CharacterModel& model);

/// 2|xl - xr| / (xl + xr).
double symmetry_index(double xl, double xr);
/// Mean |torque| over steps and each side's leg DOFs, combined as above.
double symmetry_index(const Trajectory& traj, const CharacterModel& model);

/// Time mean of the 2-norm of the torque vector. With `limits`, each torque is
/// first divided by its limit (the actuation units used by the reward).
double avg_actuation(const Trajectory& traj, const Eigen::VectorXd& limits = {});

/// Estimated stride period (s) from the autocorrelation of the contact flags.
std::optional<double> gait_period(const Trajectory& traj, double control_dt);

std::string trajectory_csv_header(int dofs, int actions, int end_effectors);
void export_trajectory(const Trajectory& traj, const std::filesystem::path& path);
Trajectory import_trajectory(const std::filesystem::path& path);

struct RolloutRecord {
  Trajectory traj;
  double ret = 0.0;
  int steps = 0;
  Termination reason = Termination::kNone;
  std::uint64_t seed = 0;
};

/// Runs one episode with mean actions and records every control step.
RolloutRecord record_rollout(Environment& env, const PolicyParams& policy, const LessonRange& range,
                             std::uint64_t seed);
/// Same, but from an explicit initial state and a fixed action sequence.
RolloutRecord replay_actions(Environment& env, const SimState& initial, const LessonRange& range,
                             const std::vector<Eigen::VectorXd>& actions);

struct EvalSummary {
  std::string checkpoint;
  std::string character;
  Lesson assist;
  std::vector<RolloutRecord> episodes;
  double avg_return = 0.0;
  double avg_episode_length = 0.0;
  std::optional<double> symmetry_index;
  double avg_actuation = 0.0;
  std::optional<double> gait_period_s;
};

EvalSummary summarize_eval(std::vector<RolloutRecord> episodes, const CharacterModel& model, double control_dt);
inline constexpr const char* kEvalReportSchema = "gaitforge.eval.v1";
std::string eval_report_json(const EvalSummary& s);

}  // namespace gaitforge
