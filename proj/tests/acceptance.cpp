// Acceptance checks 1-9. One PASS/FAIL/SKIP line per criterion; exit status is
// non-zero if any criterion fails.
#include "gaitforge/assistant.hpp"
#include "gaitforge/charmodel.hpp"
#include "gaitforge/cli.hpp"
#include "gaitforge/curriculum.hpp"
#include "gaitforge/dynamics.hpp"
#include "gaitforge/env.hpp"
#include "gaitforge/learner.hpp"
#include "gaitforge/metrics.hpp"

#include "gradcheck.hpp"
#include "mock_curriculum.hpp"
#include "test_models.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace gaitforge;
namespace fs = std::filesystem;

namespace {

enum class Verdict { kPass, kFail, kSkip };

struct Result {
  Verdict verdict = Verdict::kFail;
  std::string detail;
};

Result pass_if(bool ok, std::string detail) { return {ok ? Verdict::kPass : Verdict::kFail, std::move(detail)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool env_flag(const char* name) {
  const char* v = std::getenv(name);
  return v && *v && std::string(v) != "0";
}

std::shared_ptr<const CharacterModel> biped() {
  static auto m = std::make_shared<const CharacterModel>(load_character(builtin_biped9()));
  return m;
}

Eigen::VectorXd uniform(int n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

SimState rest_state(const CharacterModel& m) {
  SimState s;
  s.q = m.reference_q;
  s.qd = Eigen::VectorXd::Zero(m.dof_count());
  return s;
}

// ---------------------------------------------------------------- 1

Result gradients() {
  double worst = 0.0;
  int checks = 0;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const gftest::GradCase c = gftest::random_grad_case(seed, 32);
    const std::function<LossGrad(const PolicyParams&)> fs[] = {
        [&](const PolicyParams& q) { return ppo_loss(q, c.obs, c.actions, c.log_prob_old, c.adv, 0.2); },
        [&](const PolicyParams& q) { return sym_loss(q, c.obs, c.mirror_obs, c.mirror_act); },
        [&](const PolicyParams& q) { return value_loss(q, c.obs, c.targets); }};
    for (const auto& f : fs) {
      worst = std::max(worst, gftest::max_fd_error(c.params, f));
      ++checks;
    }
  }
  return pass_if(worst < 1e-4, std::to_string(checks) + " checks, max rel err " + fmt("%.2e", worst));
}

// ---------------------------------------------------------------- 2

Result dynamics_oracles() {
  const CharacterModel& m = *biped();
  std::mt19937_64 rng(3);
  double round_trip = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    SimState s;
    s.q = uniform(m.dof_count(), -0.8, 0.8, rng);
    s.qd = uniform(m.dof_count(), -2.0, 2.0, rng);
    s.q[1] += 1.5;
    Eigen::VectorXd tau = Eigen::VectorXd::Zero(m.dof_count());
    for (int d : m.actuated_dofs()) tau[d] = uniform(1, -50.0, 50.0, rng)[0];
    const Eigen::VectorXd qdd = forward_dynamics(m, s, tau, {});
    const Eigen::VectorXd back = inverse_dynamics(m, s.q, s.qd, qdd, {});
    round_trip = std::max(round_trip, (back - tau).norm() / std::max(1.0, tau.norm()));
  }

  const CharacterModel pend = gftest::pendulum2();
  SimOptions free_opt;
  free_opt.ground = false;
  free_opt.joint_limits = false;
  SimState s = rest_state(pend);
  s.q << 1.2, -0.6, 0.4;
  const double e_ref = total_energy(pend, rest_state(pend));
  const double e0 = total_energy(pend, s) - e_ref;
  double drift = 0.0;
  const Eigen::VectorXd zero3 = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < 100000; ++i) {
    s = step(pend, s, zero3, {}, 1e-4, free_opt);
    if (i % 100 == 0) drift = std::max(drift, std::abs(total_energy(pend, s) - e_ref - e0) / std::abs(e0));
  }

  const CharacterModel ball = gftest::free_body();
  SimState b = rest_state(ball);
  b.q[1] = 0.6;
  double pen = 0.0;
  for (int i = 0; i < 1500; ++i) {
    b = step(ball, b, Eigen::VectorXd::Zero(6), {}, 0.002, {});
    pen = std::max(pen, 0.1 - b.q[1]);
  }
  const bool resting = std::abs(b.qd[1]) < 1e-3 && b.contacts[0] == 1;

  return pass_if(round_trip < 1e-8 && drift < 0.02 && pen < 0.01 && resting,
                 "FD/ID rel err " + fmt("%.1e", round_trip) + ", energy drift " + fmt("%.3f%%", 100 * drift) +
                     ", max penetration " + fmt("%.2f mm", 1000 * pen) + (resting ? ", at rest" : ", NOT at rest"));
}

// ---------------------------------------------------------------- 3

// 1-DOF lateral mass under the balance controller: stiffness kp, damping 0.1 kp.
struct Lateral {
  bool diverged = false;
  int settle_step = -1;  // first step after which |x| stays below 1e-3
  double final = 0.0;
};

Lateral run_lateral(bool spd) {
  const CharacterModel m = gftest::free_body(50.0);
  SimOptions opt;
  opt.gravity.setZero();
  opt.ground = false;
  const double kp = 2000.0, dt = 0.002;
  SimState s;
  s.q = Eigen::VectorXd::Zero(6);
  s.qd = Eigen::VectorXd::Zero(6);
  s.q[0] = 1.0;
  Lateral out;
  try {
    for (int i = 0; i < 10000; ++i) {
      ExternalForce f;
      if (spd) {
        f = spd_assist_force(m, s, {kp, 0.0}, 0.0, dt).force;
      } else {
        f.link = 0;
        f.force = Eigen::Vector3d(-kp * s.q[0] - kBalanceDampingRatio * kp * s.qd[0], 0.0, 0.0);
      }
      s = step(m, s, Eigen::VectorXd::Zero(6), {f}, dt, opt);
      if (std::abs(s.q[0]) >= 1e-3) out.settle_step = -1;
      else if (out.settle_step < 0) out.settle_step = i + 1;
    }
  } catch (const NumericalError&) {
    out.diverged = true;
  }
  out.final = std::abs(s.q[0]);
  if (!std::isfinite(out.final) || out.final > 1e3) out.diverged = true;
  return out;
}

Result spd_stability() {
  const Lateral spd = run_lateral(true);
  const Lateral pd = run_lateral(false);
  const bool spd_ok = !spd.diverged && spd.settle_step >= 0;
  std::string d = "SPD " + (spd_ok ? "settles below 1 mm by step " + std::to_string(spd.settle_step)
                                   : std::string("does not settle"));
  d += "; explicit PD " + (pd.diverged ? std::string("diverges")
                                       : "stays bounded (final |x| " + fmt("%.1e", pd.final) + ", no divergence)");
  return pass_if(spd_ok && pd.diverged, d);
}

// ---------------------------------------------------------------- 4

Result mirror_algebra() {
  const CharacterModel& m = *biped();
  std::mt19937_64 rng(11);
  bool involution = true, norm_kept = true;
  Eigen::MatrixXd obs(m.observation_dim(), 64);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::VectorXd s = uniform(m.observation_dim(), -3.0, 3.0, rng);
    const Eigen::VectorXd a = uniform(m.action_dim(), -3.0, 3.0, rng);
    involution = involution && mirror_observation(mirror_observation(s, m), m) == s &&
                 mirror_action(mirror_action(a, m), m) == a;
    norm_kept = norm_kept && std::abs(mirror_observation(s, m).norm() - s.norm()) <= 1e-14 * s.norm() &&
                std::abs(mirror_action(a, m).norm() - a.norm()) <= 1e-14 * a.norm();
    if (trial < 64) obs.col(trial) = s;
  }
  // Linear policy W with Pa W Po = W and Pa b = b is mirror-equivariant.
  PolicyInit init;
  init.hidden = {};
  init.output_gain = 1.0;
  PolicyParams p = PolicyParams::create(m.observation_dim(), m.action_dim(), 5, init);
  Layer& l = p.weights.mean.layers[0];
  const Eigen::MatrixXd Pa = m.mirror_act.matrix(), Po = m.mirror_obs.matrix();
  l.w = 0.5 * (l.w + Pa * l.w * Po).eval();
  l.b = 0.5 * (uniform(m.action_dim(), -1, 1, rng) + Pa * uniform(m.action_dim(), -1, 1, rng));
  l.b = 0.5 * (l.b + Pa * l.b).eval();
  const double ls = sym_loss(p, obs, m.mirror_obs, m.mirror_act).loss;
  return pass_if(involution && norm_kept && ls < 1e-20,
                 std::string(involution ? "involution ok" : "involution FAILED") +
                     (norm_kept ? ", norms kept" : ", norm FAILED") + ", L_sym(equivariant) " + fmt("%.1e", ls));
}

// ---------------------------------------------------------------- 5

Result curriculum_mock() {
  CurriculumConfig cfg;
  std::string d;
  bool ok = true;

  gftest::MockTrainer lm(cfg.x0);
  const CurriculumTrace lt = run_learner_centered(lm, cfg);
  double prev = std::numeric_limits<double>::infinity(), last = prev;
  bool strictly = true;
  for (const auto& e : lt.entries) {
    if (!e.accepted) continue;
    strictly = strictly && e.lesson.begin.norm() < prev;
    prev = e.lesson.begin.norm();
  }
  last = lt.updates.empty() ? last : lt.updates.back().to.norm();
  ok = ok && lt.success && strictly && last < cfg.eps_term;
  d += "learner: |x| " + fmt("%.3g", last) + (strictly ? " strictly decreasing" : " NOT decreasing") + ", " +
       std::to_string(lt.entries.size()) + " iters";

  gftest::MockTrainer em(cfg.x0);
  const CurriculumTrace et = run_env_centered(em, cfg);
  int accepts = 0;
  double expect = 2000.0;
  bool exact = true;
  for (const auto& e : et.entries) {
    if (!e.accepted) continue;
    exact = exact && e.lesson.begin.kp == expect && e.lesson.begin.kd == expect;
    expect *= 0.25;
    ++accepts;
  }
  ok = ok && et.success && exact && accepts == 5;
  d += "; env: " + std::to_string(accepts) + " accepts" + (exact ? ", begins 2000*0.25^n exact" : ", begins WRONG");

  auto eval = [](const Lesson& y) { return y.norm() >= 100.0 ? 50.0 : 0.0; };
  const LessonUpdate u = update_lesson({200, 200}, 50.0, eval, cfg);
  const bool diag = u.direction == Eigen::Vector2d(-1, -1);
  const double err = std::abs(u.to.norm() - 100.0);
  ok = ok && diag && err <= cfg.fine_resolution * std::sqrt(2.0);
  d += "; line search " + std::string(diag ? "(-1,-1)" : "WRONG direction") + " at |x| " + fmt("%.3f", u.to.norm());
  return pass_if(ok, d);
}

// ---------------------------------------------------------------- 6

Result milestones() {
  EnvConfig cfg;
  cfg.sim.gravity.setZero();
  cfg.sim.ground = false;
  cfg.com_low_fraction = 0.0;
  cfg.max_torso_tilt = 10.0;
  Environment env(biped(), cfg);
  const Lesson begin{2000.0, 2000.0};
  env.reset_to_state(rest_state(*biped()), LessonRange::milestones(begin, 25.0));
  int step = 0, bad = 0;
  while (!env.done()) {
    const StepResult r = env.step(Eigen::VectorXd::Zero(biped()->action_dim()));
    const double t = step * cfg.control_dt();
    const Lesson want = t < 3.0 - 1e-9 ? begin : (t < 6.0 - 1e-9 ? begin.scaled(0.25) : begin.scaled(0.0625));
    if (!(r.assist_strength == want)) ++bad;
    ++step;
  }
  const LessonRange range = LessonRange::milestones(begin, 25.0);
  const bool ends = range.end == begin.scaled(0.0625);
  return pass_if(bad == 0 && step == 297 && ends, std::to_string(step) + " steps over " +
                                                      fmt("%.2f s", step * cfg.control_dt()) + ", " +
                                                      std::to_string(bad) + " mismatching strengths");
}

// ---------------------------------------------------------------- 7

Result symmetry_metric() {
  const CharacterModel& m = *biped();
  const bool exact = symmetry_index(1.0, 3.0) == 1.0;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  Trajectory t = empty_trajectory(m);
  for (int i = 0; i < 100; ++i) {
    TrajectoryStep s;
    s.t = i * 0.03;
    s.q = Eigen::VectorXd::Zero(t.dofs);
    s.qd = Eigen::VectorXd::Zero(t.dofs);
    s.action = Eigen::VectorXd::Zero(t.actions);
    s.torques = Eigen::VectorXd::NullaryExpr(t.actions, [&] { return 40.0 * g(rng); });
    s.contacts = Eigen::VectorXd::Zero(t.end_effectors);
    t.steps.push_back(s);
  }
  Trajectory both = t;
  for (const auto& s : t.steps) {
    TrajectoryStep r = s;
    r.torques = mirror_action(s.torques, m);
    both.steps.push_back(r);
  }
  const double mirrored = symmetry_index(both, m);
  Trajectory scaled = t;
  for (auto& s : scaled.steps) s.torques *= 3.7;
  const double scale_err = std::abs(symmetry_index(scaled, m) - symmetry_index(t, m));
  return pass_if(exact && mirrored < 1e-12 && scale_err < 1e-12,
                 std::string(exact ? "SI(1,3)=1 exact" : "SI(1,3) WRONG") + ", mirrored SI " + fmt("%.1e", mirrored) +
                     ", scaling err " + fmt("%.1e", scale_err));
}

// ---------------------------------------------------------------- 8

struct StatsRow {
  double ret = 0.0, len = 0.0, l_sym = 0.0;
};

std::vector<StatsRow> read_stats(const fs::path& p) {
  std::ifstream in(p);
  std::vector<StatsRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() >= 5) rows.push_back({v[1], v[2], v[4]});
  }
  return rows;
}

double window_mean(const std::vector<StatsRow>& r, std::size_t from, std::size_t n, double StatsRow::*f) {
  double s = 0.0;
  for (std::size_t i = from; i < from + n; ++i) s += r[i].*f;
  return s / n;
}

Result smoke_training(const fs::path& work) {
  if (std::getenv("GAITFORGE_SMOKE") && !env_flag("GAITFORGE_SMOKE")) return {Verdict::kSkip, "GAITFORGE_SMOKE=0"};
  fs::path dir;
  int code = -1;
  if (const char* existing = std::getenv("GAITFORGE_SMOKE_RUN")) {
    dir = existing;
    code = fs::exists(dir / "status.json") ? 0 : -1;
  } else {
    dir = work / "smoke";
    fs::remove_all(dir);
    const std::string out = dir.string();
    const char* argv[] = {"gaitforge",    "train",   "--preset", "biped-walk", "--curriculum", "env",
                          "--max-iters", "30",      "--seed",   "1",          "--out",        out.c_str()};
    code = cli::run(static_cast<int>(std::size(argv)), argv, std::cout, std::cerr);
  }
  // The 30-iteration budget ends the run before the curriculum does, so exit 3 is the expected finish.
  const bool completed = (code == cli::kExitOk || code == cli::kExitBudget) && fs::exists(dir / "status.json") &&
                         fs::exists(dir / "checkpoints" / "final.gfpk");
  const auto rows = read_stats(dir / "stats.csv");
  if (!completed || rows.size() < 30) {
    return {Verdict::kFail, "run did not complete (exit " + std::to_string(code) + ", " + std::to_string(rows.size()) +
                                " iterations logged)"};
  }
  const std::size_t w = 5, n = rows.size();
  const double r0 = window_mean(rows, 0, w, &StatsRow::ret), r1 = window_mean(rows, n - w, w, &StatsRow::ret);
  const double s0 = window_mean(rows, 0, w, &StatsRow::l_sym), s1 = window_mean(rows, n - w, w, &StatsRow::l_sym);
  const double l0 = window_mean(rows, 0, w, &StatsRow::len), l1 = window_mean(rows, n - w, w, &StatsRow::len);
  const bool ok = r1 > r0 && s1 < s0 && l1 >= 1.5 * l0;
  return pass_if(ok, "MA5 return " + fmt("%.2f", r0) + " -> " + fmt("%.2f", r1) + ", L_sym " + fmt("%.3g", s0) +
                         " -> " + fmt("%.3g", s1) + ", episode length " + fmt("%.2f", l0) + " -> " + fmt("%.2f", l1) +
                         " (" + fmt("%+.0f%%", 100.0 * (l1 / l0 - 1.0)) + ")");
}

// ---------------------------------------------------------------- 9

Result full_reproduction(const fs::path& work) {
  if (!env_flag("GAITFORGE_FULL_REPRO")) return {Verdict::kSkip, "overnight run; set GAITFORGE_FULL_REPRO=1"};
  const fs::path dir = work / "full";
  int code = cli::kExitOk;
  if (!fs::exists(dir / "scheduler_state.json")) {
    fs::remove_all(dir);
    const std::string out = dir.string();
    const char* argv[] = {"gaitforge", "train",       "--preset", "biped-walk", "--curriculum",
                          "env",       "--max-iters", "1500",     "--out",      out.c_str()};
    code = cli::run(static_cast<int>(std::size(argv)), argv, std::cout, std::cerr);
  } else {
    const std::string out = dir.string();
    const char* argv[] = {"gaitforge", "train", "--resume", out.c_str(), "--max-iters", "1500"};
    code = cli::run(static_cast<int>(std::size(argv)), argv, std::cout, std::cerr);
  }
  if (code != cli::kExitOk) return {Verdict::kFail, "training exit code " + std::to_string(code)};
  const std::string out = dir.string();
  const char* eargv[] = {"gaitforge", "eval", out.c_str(), "--episodes", "5"};
  std::ostringstream report;
  if (cli::run(static_cast<int>(std::size(eargv)), eargv, report, std::cerr) != cli::kExitOk) {
    return {Verdict::kFail, "eval failed"};
  }
  std::ifstream in(dir / "eval" / "report.json");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const Trajectory first = import_trajectory(dir / "eval" / "episode_000.csv");
  // Minimal field extraction; the report schema is fixed.
  auto field = [&](const std::string& key) {
    const auto at = text.find("\"" + key + "\":");
    return at == std::string::npos ? NAN : std::atof(text.c_str() + at + key.size() + 3);
  };
  const double len = field("avg_episode_length"), si = field("symmetry_index"), ee = field("avg_actuation");
  const bool ok = len >= 297.0 && si < 0.1 && ee < 5.0 && !first.empty();
  return pass_if(ok, "unassisted episode length " + fmt("%.1f", len) + ", SI " + fmt("%.4f", si) + ", E_e " +
                         fmt("%.3f", ee));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "gaitforge_acceptance";
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Result()>>> criteria = {
      {"gradient correctness", gradients},
      {"dynamics oracle suite", dynamics_oracles},
      {"SPD stability vs explicit PD", spd_stability},
      {"mirror algebra", mirror_algebra},
      {"curriculum state machines", curriculum_mock},
      {"milestone schedule", milestones},
      {"symmetry index", symmetry_metric},
      {"smoke training", [&] { return smoke_training(work); }},
      {"full reproduction", [&] { return full_reproduction(work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Result r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {Verdict::kFail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = r.verdict == Verdict::kPass ? "PASS" : r.verdict == Verdict::kFail ? "FAIL" : "SKIP";
    if (r.verdict == Verdict::kFail) ++failed;
    std::printf("criterion %zu %s: %s - %s (%.1f s)\n", i + 1, tag, criteria[i].first, r.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
