#pragma once

#include "gaitforge/assistant.hpp"
#include "gaitforge/charmodel.hpp"
#include "gaitforge/dynamics.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace gaitforge {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RewardConfig {
  double v_hat_final = 1.0;  // m/s, signed
  double w_v = 3.0;
  double w_ux = 1.0;
  double w_uy = 1.0;
  double w_uz = 1.0;
  double w_l = 3.0;
  double E_a = 4.0;  // alive bonus per control step
  double w_e = 0.4;
};

struct EnvConfig {
  RewardConfig reward;
  double dt = 0.002;
  int substeps = 15;
  /// 9 s at the nominal 33 Hz control rate.
  int horizon_steps = 297;
  double reset_noise = 0.005;
  double com_low_fraction = 0.5;
  double max_torso_tilt = 0.8;  // rad
  double k_percent = 25.0;
  double milestone_period = 3.0;  // s
  double velocity_window = 2.0;   // s
  SimOptions sim;

  double control_dt() const { return dt * substeps; }
  double horizon_time() const { return horizon_steps * control_dt(); }
};

/// Names accepted by reward_preset(): biped-walk, biped-run, quadruped-walk,
/// quadruped-run, hexapod-walk, hexapod-run, humanoid-walk, humanoid-run,
/// humanoid-backward, biped-walk-high-torque.
std::vector<std::string> reward_preset_names();
RewardConfig reward_preset(std::string_view name);

/// Fields absent from `doc` keep the values already in `cfg`; unknown keys throw ConfigError.
void apply_env_config_json(EnvConfig& cfg, std::string_view doc);
std::string env_config_to_json(const EnvConfig& cfg);
void validate(const EnvConfig& cfg);

/// v_hat(t) = sign(v) * min(2 t, |v|).
double target_velocity(double t, const RewardConfig& cfg);

/// Mean sagittal COM velocity over the last `window` seconds, by linear
/// interpolation of the sampled history. At t = 0 returns `instantaneous`.
double average_velocity(const std::vector<double>& times, const std::vector<double>& com_z, double t,
                        double instantaneous, double window = 2.0);

struct RewardTerms {
  double E_v = 0.0;
  double E_u = 0.0;
  double E_l = 0.0;
  double E_a = 0.0;
  double E_e = 0.0;
};

/// Intrinsic X-Y-Z angles of a rotation matrix.
Eigen::Vector3d intrinsic_xyz(const Eigen::Matrix3d& rot);

RewardTerms reward_terms(const RewardConfig& cfg, double v_avg, double v_hat, const Eigen::Matrix3d& torso_rotation,
                         double com_x, const Eigen::VectorXd& action);
double combine_reward(const RewardConfig& cfg, const RewardTerms& terms);

enum class Termination { kNone, kComLow, kTorsoTilt, kHorizon, kSimDiverged };
std::string_view to_string(Termination t);

Termination check_termination(const CharacterModel& model, const SimState& state, const EnvConfig& cfg,
                              double reference_com_height);

struct StepResult {
  Eigen::VectorXd observation;
  double reward = 0.0;
  bool done = false;
  Termination reason = Termination::kNone;
  RewardTerms terms;
  Lesson assist_strength;          // at the start of the control step
  Eigen::Vector2d assist_force = Eigen::Vector2d::Zero();  // mean (fx, fz) over sub-steps, N
  Eigen::VectorXd action;          // clamped to [-1, 1]
  Eigen::VectorXd torques;         // per action component, N*m
  int clamped_assist_substeps = 0;
};

class Environment {
 public:
  Environment(std::shared_ptr<const CharacterModel> model, EnvConfig cfg);

  Eigen::VectorXd reset(const LessonRange& range, std::uint64_t seed);
  /// Starts a rollout from an explicit state (t is reset to 0).
  Eigen::VectorXd reset_to_state(const SimState& state, const LessonRange& range);
  StepResult step(const Eigen::VectorXd& action);

  Eigen::VectorXd observation() const;
  const SimState& state() const { return state_; }
  const CharacterModel& model() const { return *model_; }
  const EnvConfig& config() const { return cfg_; }
  int steps() const { return steps_; }
  double time() const { return steps_ * cfg_.control_dt(); }
  double target_velocity_now() const;
  double reference_com_height() const { return ref_com_height_; }
  bool done() const { return done_; }

 private:
  void begin_rollout();

  std::shared_ptr<const CharacterModel> model_;
  EnvConfig cfg_;
  LessonRange range_;
  SimState state_;
  int steps_ = 0;
  bool done_ = false;
  double ref_com_height_ = 0.0;
  std::vector<double> hist_t_;
  std::vector<double> hist_z_;
};

}  // namespace gaitforge
