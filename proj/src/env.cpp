#include "gaitforge/env.hpp"

#include "config_json.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace gaitforge {

using json = nlohmann::json;

using detail::read;
using detail::reject_unknown;

namespace {

struct PresetRow {
  const char* name;
  RewardConfig reward;
};

// v_hat, w_v, w_ux, w_uy, w_uz, w_l, E_a, w_e
const PresetRow kPresets[] = {
    {"biped-walk", {1.0, 3.0, 1.0, 1.0, 1.0, 3.0, 4.0, 0.4}},
    {"biped-run", {5.0, 3.0, 1.0, 1.0, 1.0, 3.0, 7.0, 0.3}},
    {"quadruped-walk", {2.0, 4.0, 0.5, 0.5, 1.0, 3.0, 4.0, 0.2}},
    {"quadruped-run", {7.0, 4.0, 0.5, 0.5, 1.0, 3.0, 11.0, 0.35}},
    {"hexapod-walk", {2.0, 3.0, 1.0, 1.0, 1.0, 3.0, 4.0, 0.2}},
    {"hexapod-run", {4.0, 3.0, 1.0, 1.0, 1.0, 3.0, 7.0, 0.2}},
    {"humanoid-walk", {1.5, 3.0, 1.0, 1.5, 1.0, 3.0, 6.0, 0.3}},
    {"humanoid-run", {5.0, 3.0, 1.0, 1.5, 1.0, 3.0, 9.0, 0.15}},
    {"humanoid-backward", {-1.5, 3.0, 1.0, 1.5, 1.0, 3.0, 6.0, 0.3}},
    {"biped-walk-high-torque", {1.0, 3.0, 1.0, 1.0, 1.0, 3.0, 4.0, 0.1}},
};

double interpolate(const std::vector<double>& times, const std::vector<double>& values, double t) {
  if (t <= times.front()) return values.front();
  if (t >= times.back()) return values.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const auto i = static_cast<std::size_t>(it - times.begin());
  const double t0 = times[i - 1], t1 = times[i];
  const double w = (t - t0) / (t1 - t0);
  return values[i - 1] + w * (values[i] - values[i - 1]);
}

}  // namespace

std::vector<std::string> reward_preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

RewardConfig reward_preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (name == p.name) return p.reward;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

void apply_env_config_json(EnvConfig& out, std::string_view doc) {
  EnvConfig cfg = out;
  json j;
  try {
    j = json::parse(doc.begin(), doc.end());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("env config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("env config must be an object");
  reject_unknown(j,
                 {"reward", "dt", "substeps", "horizon_steps", "reset_noise", "com_low_fraction", "max_torso_tilt",
                  "k_percent", "milestone_period", "velocity_window", "sim"},
                 "env.");
  if (j.contains("reward")) {
    const json& r = j["reward"];
    if (!r.is_object()) throw ConfigError("config field 'env.reward' must be an object");
    reject_unknown(r, {"v_hat_final", "w_v", "w_ux", "w_uy", "w_uz", "w_l", "E_a", "w_e"}, "env.reward.");
    const std::string p = "env.reward.";
    read(r, "v_hat_final", cfg.reward.v_hat_final, p);
    read(r, "w_v", cfg.reward.w_v, p);
    read(r, "w_ux", cfg.reward.w_ux, p);
    read(r, "w_uy", cfg.reward.w_uy, p);
    read(r, "w_uz", cfg.reward.w_uz, p);
    read(r, "w_l", cfg.reward.w_l, p);
    read(r, "E_a", cfg.reward.E_a, p);
    read(r, "w_e", cfg.reward.w_e, p);
  }
  const std::string p = "env.";
  read(j, "dt", cfg.dt, p);
  read(j, "substeps", cfg.substeps, p);
  read(j, "horizon_steps", cfg.horizon_steps, p);
  read(j, "reset_noise", cfg.reset_noise, p);
  read(j, "com_low_fraction", cfg.com_low_fraction, p);
  read(j, "max_torso_tilt", cfg.max_torso_tilt, p);
  read(j, "k_percent", cfg.k_percent, p);
  read(j, "milestone_period", cfg.milestone_period, p);
  read(j, "velocity_window", cfg.velocity_window, p);
  if (j.contains("sim")) {
    const json& s = j["sim"];
    if (!s.is_object()) throw ConfigError("config field 'env.sim' must be an object");
    reject_unknown(s,
                   {"friction", "restitution", "restitution_threshold", "baumgarte", "max_correction_speed",
                    "penetration_slop", "contact_margin", "pgs_iterations", "joint_limits"},
                   "env.sim.");
    const std::string ps = "env.sim.";
    read(s, "friction", cfg.sim.friction, ps);
    read(s, "restitution", cfg.sim.restitution, ps);
    read(s, "restitution_threshold", cfg.sim.restitution_threshold, ps);
    read(s, "baumgarte", cfg.sim.baumgarte, ps);
    read(s, "max_correction_speed", cfg.sim.max_correction_speed, ps);
    read(s, "penetration_slop", cfg.sim.penetration_slop, ps);
    read(s, "contact_margin", cfg.sim.contact_margin, ps);
    read(s, "pgs_iterations", cfg.sim.pgs_iterations, ps);
    read(s, "joint_limits", cfg.sim.joint_limits, ps);
  }
  validate(cfg);
  out = cfg;
}

std::string env_config_to_json(const EnvConfig& cfg) {
  json j;
  j["reward"] = {{"v_hat_final", cfg.reward.v_hat_final}, {"w_v", cfg.reward.w_v},   {"w_ux", cfg.reward.w_ux},
                 {"w_uy", cfg.reward.w_uy},               {"w_uz", cfg.reward.w_uz}, {"w_l", cfg.reward.w_l},
                 {"E_a", cfg.reward.E_a},                 {"w_e", cfg.reward.w_e}};
  j["dt"] = cfg.dt;
  j["substeps"] = cfg.substeps;
  j["horizon_steps"] = cfg.horizon_steps;
  j["reset_noise"] = cfg.reset_noise;
  j["com_low_fraction"] = cfg.com_low_fraction;
  j["max_torso_tilt"] = cfg.max_torso_tilt;
  j["k_percent"] = cfg.k_percent;
  j["milestone_period"] = cfg.milestone_period;
  j["velocity_window"] = cfg.velocity_window;
  j["sim"] = {{"friction", cfg.sim.friction},
              {"restitution", cfg.sim.restitution},
              {"restitution_threshold", cfg.sim.restitution_threshold},
              {"baumgarte", cfg.sim.baumgarte},
              {"max_correction_speed", cfg.sim.max_correction_speed},
              {"penetration_slop", cfg.sim.penetration_slop},
              {"contact_margin", cfg.sim.contact_margin},
              {"pgs_iterations", cfg.sim.pgs_iterations},
              {"joint_limits", cfg.sim.joint_limits}};
  return j.dump(2);
}

void validate(const EnvConfig& cfg) {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw ConfigError(std::string("config field '") + field + "' " + what);
  };
  const RewardConfig& r = cfg.reward;
  require(std::isfinite(r.v_hat_final), "env.reward.v_hat_final", "must be finite");
  require(r.w_v >= 0.0, "env.reward.w_v", "must be >= 0");
  require(r.w_ux >= 0.0, "env.reward.w_ux", "must be >= 0");
  require(r.w_uy >= 0.0, "env.reward.w_uy", "must be >= 0");
  require(r.w_uz >= 0.0, "env.reward.w_uz", "must be >= 0");
  require(r.w_l >= 0.0, "env.reward.w_l", "must be >= 0");
  require(r.E_a >= 0.0, "env.reward.E_a", "must be >= 0");
  require(r.w_e >= 0.0, "env.reward.w_e", "must be >= 0");
  require(cfg.dt > 0.0, "env.dt", "must be > 0");
  require(cfg.substeps >= 1, "env.substeps", "must be >= 1");
  require(cfg.horizon_steps >= 1, "env.horizon_steps", "must be >= 1");
  require(cfg.reset_noise >= 0.0, "env.reset_noise", "must be >= 0");
  require(cfg.com_low_fraction >= 0.0 && cfg.com_low_fraction <= 1.0, "env.com_low_fraction", "must be in [0, 1]");
  require(cfg.max_torso_tilt > 0.0, "env.max_torso_tilt", "must be > 0");
  require(cfg.k_percent > 0.0 && cfg.k_percent <= 100.0, "env.k_percent", "must be in (0, 100]");
  require(cfg.milestone_period > 0.0, "env.milestone_period", "must be > 0");
  require(cfg.velocity_window > 0.0, "env.velocity_window", "must be > 0");
  require(cfg.sim.friction >= 0.0, "env.sim.friction", "must be >= 0");
  require(cfg.sim.pgs_iterations >= 1, "env.sim.pgs_iterations", "must be >= 1");
}

double target_velocity(double t, const RewardConfig& cfg) {
  const double mag = std::min(2.0 * t, std::abs(cfg.v_hat_final));
  return cfg.v_hat_final < 0.0 ? -mag : mag;
}

double average_velocity(const std::vector<double>& times, const std::vector<double>& com_z, double t,
                        double instantaneous, double window) {
  if (times.size() != com_z.size()) throw DimensionMismatch("average_velocity: history length mismatch");
  if (t <= 0.0 || times.empty()) return instantaneous;
  const double t0 = std::max(0.0, t - window);
  return (interpolate(times, com_z, t) - interpolate(times, com_z, t0)) / std::min(t, window);
}

Eigen::Vector3d intrinsic_xyz(const Eigen::Matrix3d& rot) {
  const double b = std::asin(std::clamp(rot(0, 2), -1.0, 1.0));
  const double a = std::atan2(-rot(1, 2), rot(2, 2));
  const double c = std::atan2(-rot(0, 1), rot(0, 0));
  return {a, b, c};
}

RewardTerms reward_terms(const RewardConfig& cfg, double v_avg, double v_hat, const Eigen::Matrix3d& torso_rotation,
                         double com_x, const Eigen::VectorXd& action) {
  const Eigen::Vector3d phi = intrinsic_xyz(torso_rotation);
  RewardTerms t;
  t.E_v = -std::abs(v_avg - v_hat);
  t.E_u = -(cfg.w_ux * std::abs(phi.x()) + cfg.w_uy * std::abs(phi.y()) + cfg.w_uz * std::abs(phi.z()));
  t.E_l = -std::abs(com_x);
  t.E_a = cfg.E_a;
  t.E_e = -action.norm();
  return t;
}

double combine_reward(const RewardConfig& cfg, const RewardTerms& t) {
  return cfg.w_v * t.E_v + t.E_u + cfg.w_l * t.E_l + t.E_a + cfg.w_e * t.E_e;
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::kNone: return "none";
    case Termination::kComLow: return "com_low";
    case Termination::kTorsoTilt: return "torso_tilt";
    case Termination::kHorizon: return "horizon";
    case Termination::kSimDiverged: return "sim_diverged";
  }
  return "unknown";
}

Termination check_termination(const CharacterModel& model, const SimState& state, const EnvConfig& cfg,
                              double reference_com_height) {
  const Kinematics kin = forward_kinematics(model, state.q);
  if (com(model, kin).y() < cfg.com_low_fraction * reference_com_height) return Termination::kComLow;
  const double up = std::clamp(kin.rotation[model.torso_link](1, 1), -1.0, 1.0);
  if (std::acos(up) > cfg.max_torso_tilt) return Termination::kTorsoTilt;
  // Tolerance absorbs the rounding of accumulated sub-step times.
  if (state.t >= cfg.horizon_time() - 1e-9) return Termination::kHorizon;
  return Termination::kNone;
}

Environment::Environment(std::shared_ptr<const CharacterModel> model, EnvConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)) {
  if (!model_) throw std::invalid_argument("Environment: null model");
  validate(cfg_);
  ref_com_height_ = com(*model_, forward_kinematics(*model_, model_->reference_q)).y();
}

Eigen::VectorXd Environment::reset(const LessonRange& range, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-cfg_.reset_noise, cfg_.reset_noise);
  const int n = model_->dof_count();
  SimState s;
  s.q = model_->reference_q;
  s.qd = Eigen::VectorXd::Zero(n);
  if (cfg_.reset_noise > 0.0) {
    for (int i = 0; i < n; ++i) s.q[i] += noise(rng);
    for (int i = 0; i < n; ++i) s.qd[i] = noise(rng);
  }
  range_ = range;
  state_ = std::move(s);
  begin_rollout();
  return observation();
}

Eigen::VectorXd Environment::reset_to_state(const SimState& state, const LessonRange& range) {
  if (state.q.size() != model_->dof_count() || state.qd.size() != model_->dof_count()) {
    throw DimensionMismatch("reset_to_state: state size does not match the model");
  }
  range_ = range;
  state_ = state;
  begin_rollout();
  return observation();
}

void Environment::begin_rollout() {
  state_.t = 0.0;
  const Kinematics kin = forward_kinematics(*model_, state_.q);
  state_.contacts = contact_flags(*model_, kin, cfg_.sim);
  steps_ = 0;
  done_ = false;
  hist_t_.assign(1, 0.0);
  hist_z_.assign(1, com(*model_, kin).z());
}

double Environment::target_velocity_now() const { return target_velocity(time(), cfg_.reward); }

Eigen::VectorXd Environment::observation() const {
  const CharacterModel& m = *model_;
  Eigen::VectorXd obs(m.observation_dim());
  int k = 0;
  for (int i = 0; i < m.dof_count(); ++i) {
    if (m.floating_base() && i == m.joints.front().dof_offset + 2) continue;  // sagittal root position
    obs[k++] = state_.q[i];
  }
  obs.segment(k, m.dof_count()) = state_.qd;
  k += m.dof_count();
  for (int c : state_.contacts) obs[k++] = c;
  obs[k] = target_velocity_now();
  return obs;
}

StepResult Environment::step(const Eigen::VectorXd& action) {
  const CharacterModel& m = *model_;
  if (done_) throw std::logic_error("Environment::step called after the rollout ended");
  if (action.size() != m.action_dim()) throw DimensionMismatch("action size does not match the model");
  if (!action.allFinite()) throw std::invalid_argument("action has non-finite entries");

  StepResult out;
  out.action = action.cwiseMax(-1.0).cwiseMin(1.0);
  out.torques = out.action.cwiseProduct(m.torque_limits());
  Eigen::VectorXd tau = Eigen::VectorXd::Zero(m.dof_count());
  for (int i = 0; i < m.action_dim(); ++i) tau[m.actuated_dofs()[i]] = out.torques[i];

  const long first_sub = static_cast<long>(steps_) * cfg_.substeps;
  out.assist_strength = milestone_strength(range_, first_sub * cfg_.dt, cfg_.k_percent, cfg_.milestone_period);
  try {
    for (int k = 0; k < cfg_.substeps; ++k) {
      const double t_sub = static_cast<double>(first_sub + k) * cfg_.dt;
      const Lesson x = milestone_strength(range_, t_sub, cfg_.k_percent, cfg_.milestone_period);
      const AssistResult assist = spd_assist_force(m, state_, x, target_velocity(t_sub, cfg_.reward), cfg_.dt);
      out.assist_force += Eigen::Vector2d(assist.force.force.x(), assist.force.force.z()) / cfg_.substeps;
      if (assist.clamped) ++out.clamped_assist_substeps;
      state_ = gaitforge::step(m, state_, tau, {assist.force}, cfg_.dt, cfg_.sim);
    }
  } catch (const NumericalError&) {
    ++steps_;
    done_ = true;
    out.done = true;
    out.reason = Termination::kSimDiverged;
    out.reward = 0.0;
    out.observation = observation();
    return out;
  }
  ++steps_;

  const Kinematics kin = forward_kinematics(m, state_.q, state_.qd);
  const Eigen::Vector3d c = com(m, kin);
  hist_t_.push_back(time());
  hist_z_.push_back(c.z());
  const double v_avg =
      average_velocity(hist_t_, hist_z_, time(), com_velocity(m, kin).z(), cfg_.velocity_window);
  out.terms = reward_terms(cfg_.reward, v_avg, target_velocity_now(), kin.rotation[m.torso_link], c.x(), out.action);
  out.reward = combine_reward(cfg_.reward, out.terms);

  out.reason = check_termination(m, state_, cfg_, ref_com_height_);
  if (out.reason == Termination::kNone && steps_ >= cfg_.horizon_steps) out.reason = Termination::kHorizon;
  out.done = out.reason != Termination::kNone;
  done_ = out.done;
  out.observation = observation();
  return out;
}

}  // namespace gaitforge
