#include "gaitforge/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace gaitforge {

using json = nlohmann::json;

namespace {

void append_steps(Trajectory& into, const Trajectory& from) {
  into.steps.insert(into.steps.end(), from.steps.begin(), from.steps.end());
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("trajectory line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

}  // namespace

void Trajectory::check() const {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const TrajectoryStep& s = steps[i];
    if (s.q.size() != dofs || s.qd.size() != dofs || s.action.size() != actions || s.torques.size() != actions ||
        s.contacts.size() != end_effectors) {
      throw DegenerateInput("trajectory step " + std::to_string(i) + " has the wrong dimensions");
    }
  }
  if (steps.size() < 2) return;
  const double dt = steps[1].t - steps[0].t;
  if (!(dt > 0.0)) throw DegenerateInput("trajectory times must increase");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    const double d = steps[i].t - steps[i - 1].t;
    if (!(d > 0.0) || std::abs(d - dt) > 1e-9 * std::max(1.0, std::abs(steps[i].t))) {
      throw DegenerateInput("trajectory times are not uniformly spaced");
    }
  }
}

Trajectory empty_trajectory(const CharacterModel& model) {
  Trajectory t;
  t.dofs = model.dof_count();
  t.actions = model.action_dim();
  t.end_effectors = static_cast<int>(model.end_effectors.size());
  return t;
}

double symmetry_index(double xl, double xr) {
  if (xl < 0.0 || xr < 0.0) throw std::invalid_argument("symmetry_index: averages must be non-negative");
  if (xl + xr == 0.0) throw DegenerateInput("symmetry_index: both sides are zero");
  return 2.0 * std::abs(xl - xr) / (xl + xr);
}

double symmetry_index(const Trajectory& traj, const CharacterModel& model) {
  if (traj.empty()) throw DegenerateInput("symmetry_index: empty trajectory");
  if (model.left_leg_dofs.empty() || model.right_leg_dofs.empty()) {
    throw DegenerateInput("symmetry_index: model has no leg DOF sets");
  }
  auto side = [&](const std::vector<int>& dofs) {
    double sum = 0.0;
    for (const auto& s : traj.steps) {
      for (int d : dofs) sum += std::abs(s.torques[d]);
    }
    return sum / (static_cast<double>(traj.steps.size()) * dofs.size());
  };
  return symmetry_index(side(model.left_leg_dofs), side(model.right_leg_dofs));
}

double avg_actuation(const Trajectory& traj, const Eigen::VectorXd& limits) {
  if (traj.empty()) throw DegenerateInput("avg_actuation: empty trajectory");
  double sum = 0.0;
  for (const auto& s : traj.steps) {
    sum += limits.size() ? s.torques.cwiseQuotient(limits).norm() : s.torques.norm();
  }
  return sum / static_cast<double>(traj.steps.size());
}

std::optional<double> gait_period(const Trajectory& traj, double control_dt) {
  const int n = static_cast<int>(traj.steps.size());
  double total = 0.0;
  int found = 0;
  for (int e = 0; e < traj.end_effectors; ++e) {
    Eigen::VectorXd c(n);
    for (int i = 0; i < n; ++i) c[i] = traj.steps[i].contacts[e];
    c.array() -= c.mean();
    const double var = c.squaredNorm();
    if (var < 1e-12) continue;
    // First local maximum after the autocorrelation has dipped below zero.
    bool dipped = false;
    double prev = 1.0;
    for (int lag = 1; lag < n - 1; ++lag) {
      const double r = c.head(n - lag).dot(c.tail(n - lag)) / var;
      const double next = c.head(n - lag - 1).dot(c.tail(n - lag - 1)) / var;
      if (r < 0.0) dipped = true;
      if (dipped && r > 0.1 && r >= prev && r >= next) {
        total += lag * control_dt;
        ++found;
        break;
      }
      prev = r;
    }
  }
  if (found == 0) return std::nullopt;
  return total / found;
}

std::string trajectory_csv_header(int dofs, int actions, int ees) {
  std::string h = "t";
  for (int i = 0; i < dofs; ++i) h += ",q_" + std::to_string(i);
  for (int i = 0; i < dofs; ++i) h += ",qd_" + std::to_string(i);
  for (int i = 0; i < actions; ++i) h += ",a_" + std::to_string(i);
  for (int i = 0; i < actions; ++i) h += ",tau_" + std::to_string(i);
  h += ",E_v,E_u,E_l,E_a,E_e";
  for (int i = 0; i < ees; ++i) h += ",c_" + std::to_string(i);
  h += ",assist_fx,assist_fz";
  return h;
}

void export_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  traj.check();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write trajectory to " + path.string());
  out << trajectory_csv_header(traj.dofs, traj.actions, traj.end_effectors) << '\n';
  char buf[40];
  auto put = [&](double v, bool first = false) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    if (!first) out << ',';
    out << buf;
  };
  for (const auto& s : traj.steps) {
    put(s.t, true);
    for (double v : s.q) put(v);
    for (double v : s.qd) put(v);
    for (double v : s.action) put(v);
    for (double v : s.torques) put(v);
    put(s.terms.E_v);
    put(s.terms.E_u);
    put(s.terms.E_l);
    put(s.terms.E_a);
    put(s.terms.E_e);
    for (double v : s.contacts) put(v);
    put(s.assist[0]);
    put(s.assist[1]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing trajectory to " + path.string());
}

Trajectory import_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read trajectory " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("trajectory " + path.string() + " has no header");
  const auto cols = split(line);
  Trajectory t;
  for (const auto& c : cols) {
    if (c.rfind("q_", 0) == 0) ++t.dofs;
    if (c.rfind("a_", 0) == 0) ++t.actions;
    if (c.rfind("c_", 0) == 0) ++t.end_effectors;
  }
  if (line != trajectory_csv_header(t.dofs, t.actions, t.end_effectors)) {
    throw IoError("trajectory " + path.string() + " has an unexpected header");
  }
  const std::size_t width = cols.size();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != width) throw IoError("trajectory line " + std::to_string(lineno) + ": wrong column count");
    std::size_t k = 0;
    auto next = [&] { return parse_double(cells[k++], lineno); };
    auto vec = [&](int n) {
      Eigen::VectorXd v(n);
      for (int i = 0; i < n; ++i) v[i] = next();
      return v;
    };
    TrajectoryStep s;
    s.t = next();
    s.q = vec(t.dofs);
    s.qd = vec(t.dofs);
    s.action = vec(t.actions);
    s.torques = vec(t.actions);
    s.terms.E_v = next();
    s.terms.E_u = next();
    s.terms.E_l = next();
    s.terms.E_a = next();
    s.terms.E_e = next();
    s.contacts = vec(t.end_effectors);
    s.assist[0] = next();
    s.assist[1] = next();
    t.steps.push_back(std::move(s));
  }
  return t;
}

namespace {

template <class ActionFn>
RolloutRecord run_episode(Environment& env, ActionFn&& action_at, std::size_t max_steps) {
  RolloutRecord rec;
  rec.traj = empty_trajectory(env.model());
  Eigen::VectorXd obs = env.observation();
  for (std::size_t k = 0; k < max_steps && !env.done(); ++k) {
    TrajectoryStep s;
    s.t = env.time();
    s.q = env.state().q;
    s.qd = env.state().qd;
    s.contacts = Eigen::Map<const Eigen::VectorXi>(env.state().contacts.data(),
                                                   static_cast<Eigen::Index>(env.state().contacts.size()))
                     .cast<double>();
    StepResult r = env.step(action_at(obs, k));
    s.action = r.action;
    s.torques = r.torques;
    s.terms = r.terms;
    s.assist = r.assist_force;
    rec.traj.steps.push_back(std::move(s));
    rec.ret += r.reward;
    ++rec.steps;
    rec.reason = r.reason;
    obs = std::move(r.observation);
  }
  return rec;
}

}  // namespace

RolloutRecord record_rollout(Environment& env, const PolicyParams& policy, const LessonRange& range,
                             std::uint64_t seed) {
  env.reset(range, seed);
  RolloutRecord rec = run_episode(
      env, [&](const Eigen::VectorXd& obs, std::size_t) { return mean_action(policy, obs); },
      static_cast<std::size_t>(-1));
  rec.seed = seed;
  return rec;
}

RolloutRecord replay_actions(Environment& env, const SimState& initial, const LessonRange& range,
                             const std::vector<Eigen::VectorXd>& actions) {
  env.reset_to_state(initial, range);
  return run_episode(
      env, [&](const Eigen::VectorXd&, std::size_t k) { return actions[k]; }, actions.size());
}

EvalSummary summarize_eval(std::vector<RolloutRecord> episodes, const CharacterModel& model, double control_dt) {
  if (episodes.empty()) throw DegenerateInput("no evaluation episodes");
  EvalSummary s;
  Trajectory all = empty_trajectory(model);
  double periods = 0.0;
  int with_period = 0;
  for (const auto& e : episodes) {
    s.avg_return += e.ret;
    s.avg_episode_length += e.steps;
    append_steps(all, e.traj);
    if (auto p = gait_period(e.traj, control_dt)) {
      periods += *p;
      ++with_period;
    }
  }
  s.avg_return /= static_cast<double>(episodes.size());
  s.avg_episode_length /= static_cast<double>(episodes.size());
  try {
    s.symmetry_index = symmetry_index(all, model);
  } catch (const DegenerateInput&) {
    s.symmetry_index.reset();
  }
  s.avg_actuation = all.empty() ? 0.0 : avg_actuation(all, model.torque_limits());
  if (with_period > 0) s.gait_period_s = periods / with_period;
  s.episodes = std::move(episodes);
  return s;
}

std::string eval_report_json(const EvalSummary& s) {
  json eps = json::array();
  for (const auto& e : s.episodes) {
    eps.push_back({{"seed", e.seed},
                   {"return", e.ret},
                   {"length", e.steps},
                   {"termination", std::string(to_string(e.reason))}});
  }
  const json j = {{"schema", kEvalReportSchema},
                  {"checkpoint", s.checkpoint},
                  {"character", s.character},
                  {"assist", {s.assist.kp, s.assist.kd}},
                  {"rollouts", s.episodes.size()},
                  {"avg_return", s.avg_return},
                  {"avg_episode_length", s.avg_episode_length},
                  {"symmetry_index", s.symmetry_index ? json(*s.symmetry_index) : json(nullptr)},
                  {"avg_actuation", s.avg_actuation},
                  {"gait_period_s", s.gait_period_s ? json(*s.gait_period_s) : json(nullptr)},
                  {"episodes", eps}};
  return j.dump(2);
}

}  // namespace gaitforge
