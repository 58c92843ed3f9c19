#include "gaitforge/curriculum.hpp"

#include "config_json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace gaitforge {

using detail::json;

namespace {

const Eigen::Vector2d kDirections[] = {{-1.0, 0.0}, {-1.0, -0.5}, {-1.0, -1.0}, {-0.5, -1.0}, {0.0, -1.0}};

Eigen::Vector2d vec(const Lesson& x) { return {x.kp, x.kd}; }
Lesson lesson(const Eigen::Vector2d& v) { return {std::max(0.0, v[0]), std::max(0.0, v[1])}; }

// Step along d at which every decreasing component has been clamped to zero.
double alpha_limit(const Lesson& x, const Eigen::Vector2d& d) {
  double a = 0.0;
  const Eigen::Vector2d v = vec(x);
  for (int i = 0; i < 2; ++i) {
    if (d[i] < 0.0) a = std::max(a, v[i] / -d[i]);
  }
  return a;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// Convergence test: the reference return has not improved by the relative
// tolerance for `window` iterations, or the phase hit its cap.
bool plateau_push(SchedulerState& s, double r, const CurriculumConfig& cfg) {
  ++s.phase_iterations;
  s.recent_returns.push_back(r);
  if (static_cast<int>(s.recent_returns.size()) > cfg.plateau_window) s.recent_returns.erase(s.recent_returns.begin());
  if (s.phase_iterations == 1 || r > s.plateau_ref + cfg.plateau_tolerance * std::abs(s.plateau_ref)) {
    s.plateau_ref = r;
    s.plateau_since = 0;
  } else {
    ++s.plateau_since;
  }
  return s.plateau_since >= cfg.plateau_window || s.phase_iterations >= cfg.plateau_max_iterations;
}

void start_phase(SchedulerState& s, const char* phase, const LessonRange& lesson) {
  s.phase = phase;
  s.lesson = lesson;
  s.phase_iterations = 0;
  s.plateau_ref = 0.0;
  s.plateau_since = 0;
  s.recent_returns.clear();
}

json lesson_json(const Lesson& x) { return json::array({x.kp, x.kd}); }
Lesson lesson_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

// Shared driver: `step` consumes one training outcome and advances the state.
template <class Step>
CurriculumTrace drive(PolicyTrainer& trainer, const CurriculumConfig& cfg, const SchedulerHooks& hooks,
                      SchedulerState state, CurriculumTrace trace, Step&& step) {
  trace.r_bar = state.r_bar;
  while (state.phase != "done") {
    if (cfg.max_iterations > 0 && state.iteration >= cfg.max_iterations) {
      if (state.phase == "final") break;
      throw BudgetExceeded("iteration budget of " + std::to_string(cfg.max_iterations) +
                               " exhausted before the assistance reached zero",
                           trace);
    }
    TraceEntry entry;
    entry.lesson = state.lesson;
    const IterationOutcome out = trainer.train_iteration(state.lesson);
    ++state.iteration;
    entry.iteration = state.iteration;
    entry.avg_return = out.avg_return;
    step(state, out, entry, trace);
    trace.r_bar = state.r_bar;
    trace.entries.push_back(entry);
    if (hooks.on_iteration) hooks.on_iteration(entry, out, state);
  }
  trace.success = true;
  return trace;
}

}  // namespace

void validate(const CurriculumConfig& c) {
  auto fail = [](const char* f, const char* what) {
    throw ConfigError(std::string("config field 'curriculum.") + f + "' " + what);
  };
  auto pct = [&](double v, const char* f) {
    if (!(v > 0.0 && v <= 100.0)) fail(f, "must be in (0, 100]");
  };
  if (!(c.x0.kp >= 0.0 && c.x0.kd >= 0.0)) fail("x0", "must be non-negative");
  if (!(c.eps_term > 0.0)) fail("eps_term", "must be > 0");
  // h is a gate on the reference return; values above 100 are allowed (they make the gate unreachable).
  if (!(c.h_percent > 0.0)) fail("h_percent", "must be > 0");
  pct(c.l_percent, "l_percent");
  pct(c.g_percent, "g_percent");
  if (!(c.k_percent > 0.0 && c.k_percent < 100.0)) fail("k_percent", "must be in (0, 100)");
  if (!(c.period > 0.0)) fail("period", "must be > 0");
  if (c.eval_rollouts < 1) fail("eval_rollouts", "must be >= 1");
  if (!(c.coarse_resolution > 0.0)) fail("coarse_resolution", "must be > 0");
  if (!(c.fine_resolution > 0.0 && c.fine_resolution <= c.coarse_resolution)) {
    fail("fine_resolution", "must be in (0, coarse_resolution]");
  }
  if (!(c.balance_threshold > 0.0 && c.balance_threshold <= 1.0)) fail("balance_threshold", "must be in (0, 1]");
  if (c.plateau_window < 1) fail("plateau_window", "must be >= 1");
  if (!(c.plateau_tolerance >= 0.0)) fail("plateau_tolerance", "must be >= 0");
  if (c.plateau_max_iterations < 1) fail("plateau_max_iterations", "must be >= 1");
  if (c.max_iterations < 0) fail("max_iterations", "must be >= 0");
}

void apply_curriculum_config_json(CurriculumConfig& out, std::string_view doc) {
  CurriculumConfig c = out;
  const json j = detail::parse_section(doc, "curriculum");
  detail::reject_unknown(j,
                         {"x0", "eps_term", "h_percent", "l_percent", "g_percent", "k_percent", "period",
                          "eval_rollouts", "coarse_resolution", "fine_resolution", "balance_threshold",
                          "plateau_window", "plateau_tolerance", "plateau_max_iterations", "max_iterations"},
                         "curriculum.");
  const std::string p = "curriculum.";
  if (j.contains("x0")) {
    const json& x = j["x0"];
    if (!x.is_array() || x.size() != 2 || !x[0].is_number() || !x[1].is_number()) {
      throw ConfigError("config field 'curriculum.x0' must be [kp, kd]");
    }
    c.x0 = lesson_from(x);
  }
  detail::read(j, "eps_term", c.eps_term, p);
  detail::read(j, "h_percent", c.h_percent, p);
  detail::read(j, "l_percent", c.l_percent, p);
  detail::read(j, "g_percent", c.g_percent, p);
  detail::read(j, "k_percent", c.k_percent, p);
  detail::read(j, "period", c.period, p);
  detail::read(j, "eval_rollouts", c.eval_rollouts, p);
  detail::read(j, "coarse_resolution", c.coarse_resolution, p);
  detail::read(j, "fine_resolution", c.fine_resolution, p);
  detail::read(j, "balance_threshold", c.balance_threshold, p);
  detail::read(j, "plateau_window", c.plateau_window, p);
  detail::read(j, "plateau_tolerance", c.plateau_tolerance, p);
  detail::read(j, "plateau_max_iterations", c.plateau_max_iterations, p);
  detail::read(j, "max_iterations", c.max_iterations, p);
  validate(c);
  out = c;
}

std::string curriculum_config_to_json(const CurriculumConfig& c) {
  const json j = {{"x0", lesson_json(c.x0)},
                  {"eps_term", c.eps_term},
                  {"h_percent", c.h_percent},
                  {"l_percent", c.l_percent},
                  {"g_percent", c.g_percent},
                  {"k_percent", c.k_percent},
                  {"period", c.period},
                  {"eval_rollouts", c.eval_rollouts},
                  {"coarse_resolution", c.coarse_resolution},
                  {"fine_resolution", c.fine_resolution},
                  {"balance_threshold", c.balance_threshold},
                  {"plateau_window", c.plateau_window},
                  {"plateau_tolerance", c.plateau_tolerance},
                  {"plateau_max_iterations", c.plateau_max_iterations},
                  {"max_iterations", c.max_iterations}};
  return j.dump(2);
}

PpoPolicyTrainer::PpoPolicyTrainer(PpoTrainer& trainer, std::uint64_t eval_seed)
    : trainer_(trainer), eval_seed_(eval_seed) {}

IterationOutcome PpoPolicyTrainer::train_iteration(const LessonRange& range) {
  IterationResult r = trainer_.train_iteration(range);
  IterationOutcome o = outcome_from_batch(r.batch, static_cast<int>(std::lround(trainer_.control_rate())));
  o.avg_return = r.stats.avg_return;
  o.stats = r.stats;
  return o;
}

double PpoPolicyTrainer::eval_return(const Lesson& x, int n) { return trainer_.eval_return(x, n, eval_seed_); }

IterationOutcome outcome_from_batch(const RolloutBatch& b, int steps_per_second) {
  IterationOutcome o;
  o.avg_return = avg_return(b);
  o.steps_per_second = steps_per_second;
  for (int r = 0; r < b.rollouts(); ++r) {
    o.episode_steps.push_back(b.rollout_length(r));
    o.episode_complete.push_back(b.rollout_complete(r));
  }
  return o;
}

double balance_fraction(const IterationOutcome& o, double p) {
  const int need = static_cast<int>(std::ceil(2.0 * p * o.steps_per_second - 1e-9));
  int eligible = 0, pass = 0;
  for (std::size_t i = 0; i < o.episode_steps.size(); ++i) {
    const bool long_enough = o.episode_steps[i] >= need;
    if (!long_enough && !o.episode_complete[i]) continue;
    ++eligible;
    pass += long_enough ? 1 : 0;
  }
  return eligible == 0 ? 0.0 : static_cast<double>(pass) / eligible;
}

bool balance_test(const IterationOutcome& o, double p, double threshold) {
  // 9/10 is not exactly 0.9 in binary.
  const double f = balance_fraction(o, p);
  return f >= threshold - 1e-12;
}

bool balance_test(const RolloutBatch& batch, double p, double threshold, int steps_per_second) {
  return balance_test(outcome_from_batch(batch, steps_per_second), p, threshold);
}

LessonUpdate update_lesson(const Lesson& x, double r_bar, const std::function<double(const Lesson&)>& eval,
                           const CurriculumConfig& cfg) {
  if (!(r_bar > 0.0)) throw std::invalid_argument("update_lesson needs a positive reference return");
  const double bar = cfg.l_percent / 100.0 * r_bar;
  LessonUpdate upd;
  upd.from = upd.to = x;

  std::map<std::pair<double, double>, bool> seen;
  auto admissible = [&](const Lesson& y) {
    const auto key = std::make_pair(y.kp, y.kd);
    if (auto it = seen.find(key); it != seen.end()) return it->second;
    const double r = eval(y);
    const bool ok = r > bar;
    upd.probes.push_back({y, r, ok});
    seen.emplace(key, ok);
    return ok;
  };

  struct Candidate {
    Eigen::Vector2d d;
    double alpha;
    Lesson y;
  };
  std::vector<Candidate> found;
  for (const Eigen::Vector2d& d : kDirections) {
    const double amax = alpha_limit(x, d);
    if (!(amax > 0.0)) continue;
    auto at = [&](double a) { return lesson(vec(x) + a * d); };

    double best = 0.0;
    if (admissible(at(amax))) {
      best = amax;
    } else {
      // Largest admissible grid point, assuming admissibility only shrinks with alpha.
      auto search = [&](double lo, double hi, double step) {
        std::vector<double> grid;
        for (int k = 1;; ++k) {
          const double a = lo + k * step;
          if (a >= hi - 1e-9 * step) break;
          grid.push_back(a);
        }
        int good = -1, bad = static_cast<int>(grid.size());
        while (bad - good > 1) {
          const int mid = (good + bad) / 2;
          if (admissible(at(grid[mid])))
            good = mid;
          else
            bad = mid;
        }
        const double next = bad < static_cast<int>(grid.size()) ? grid[bad] : hi;
        return std::make_pair(good >= 0 ? grid[good] : lo, next);
      };
      const auto [coarse, coarse_fail] = search(0.0, amax, cfg.coarse_resolution);
      best = search(coarse, coarse_fail, cfg.fine_resolution).first;
    }
    if (best > 0.0) found.push_back({d, best, at(best)});
  }
  if (found.empty()) return upd;

  double min_norm = std::numeric_limits<double>::infinity();
  for (const auto& c : found) min_norm = std::min(min_norm, c.y.norm());
  // Candidates within one fine step of the minimum are ties; prefer the
  // direction that points most directly at the origin.
  const double tol = cfg.fine_resolution * std::sqrt(2.0);
  const Eigen::Vector2d to_origin = -vec(x).normalized();
  const Candidate* pick = nullptr;
  double best_cos = -2.0;
  for (const auto& c : found) {
    if (c.y.norm() > min_norm + tol) continue;
    const double cos = c.d.normalized().dot(to_origin);
    if (cos > best_cos) {
      best_cos = cos;
      pick = &c;
    }
  }
  upd.to = pick->y;
  upd.direction = pick->d;
  upd.alpha = pick->alpha;
  upd.stalled = upd.to == x;
  return upd;
}

void write_trace_header(std::ostream& out) { out << "iteration,kp_begin,kd_begin,kp_end,kd_end,avg_return,accepted\n"; }

void write_trace_row(std::ostream& out, const TraceEntry& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", e.iteration, e.lesson.begin.kp,
                e.lesson.begin.kd, e.lesson.end.kp, e.lesson.end.kd, e.avg_return, e.accepted ? 1 : 0);
  out << buf;
}

std::vector<TraceEntry> read_trace_csv(std::istream& in) {
  std::vector<TraceEntry> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    TraceEntry e;
    char c1, c2, c3, c4, c5, c6;
    int acc = 0;
    if (!(ss >> e.iteration >> c1 >> e.lesson.begin.kp >> c2 >> e.lesson.begin.kd >> c3 >> e.lesson.end.kp >> c4 >>
          e.lesson.end.kd >> c5 >> e.avg_return >> c6 >> acc)) {
      throw std::runtime_error("malformed curriculum trace line: " + line);
    }
    e.accepted = acc != 0;
    out.push_back(e);
  }
  return out;
}

std::string_view to_string(CurriculumMode m) { return m == CurriculumMode::kLearner ? "learner" : "env"; }

CurriculumMode curriculum_mode_from_string(std::string_view s) {
  if (s == "learner") return CurriculumMode::kLearner;
  if (s == "env") return CurriculumMode::kEnv;
  throw ConfigError("curriculum must be 'learner' or 'env', got '" + std::string(s) + "'");
}

std::string SchedulerState::to_json() const {
  const json j = {{"mode", std::string(to_string(mode))},
                  {"phase", phase},
                  {"lesson_begin", lesson_json(lesson.begin)},
                  {"lesson_end", lesson_json(lesson.end)},
                  {"r_bar", r_bar},
                  {"iteration", iteration},
                  {"phase_iterations", phase_iterations},
                  {"plateau_ref", plateau_ref},
                  {"plateau_since", plateau_since},
                  {"recent_returns", recent_returns},
                  {"accepted", accepted}};
  return j.dump(2);
}

SchedulerState SchedulerState::from_json(std::string_view doc) {
  try {
    const json j = json::parse(doc.begin(), doc.end());
    SchedulerState s;
    s.mode = curriculum_mode_from_string(j.at("mode").get<std::string>());
    s.phase = j.at("phase").get<std::string>();
    s.lesson = {lesson_from(j.at("lesson_begin")), lesson_from(j.at("lesson_end"))};
    s.r_bar = j.at("r_bar").get<double>();
    s.iteration = j.at("iteration").get<int>();
    s.phase_iterations = j.at("phase_iterations").get<int>();
    s.plateau_ref = j.at("plateau_ref").get<double>();
    s.plateau_since = j.at("plateau_since").get<int>();
    s.recent_returns = j.at("recent_returns").get<std::vector<double>>();
    s.accepted = j.at("accepted").get<int>();
    if (s.phase != "initial" && s.phase != "loop" && s.phase != "final" && s.phase != "done") {
      throw ConfigError("unknown scheduler phase '" + s.phase + "'");
    }
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scheduler state: ") + e.what());
  }
}

CurriculumTrace run_learner_centered(PolicyTrainer& trainer, const CurriculumConfig& cfg, const SchedulerHooks& hooks,
                                     const std::optional<SchedulerState>& resume, CurriculumTrace prior) {
  validate(cfg);
  SchedulerState state;
  if (resume) {
    state = *resume;
    if (state.mode != CurriculumMode::kLearner) throw ConfigError("resume state belongs to another scheduler");
  } else {
    state.mode = CurriculumMode::kLearner;
    if (cfg.x0.norm() < cfg.eps_term)
      start_phase(state, "final", LessonRange::constant({}));
    else
      start_phase(state, "initial", LessonRange::constant(cfg.x0));
  }
  auto eval = [&](const Lesson& y) { return trainer.eval_return(y, cfg.eval_rollouts); };

  return drive(trainer, cfg, hooks, state, std::move(prior),
               [&](SchedulerState& s, const IterationOutcome& out, TraceEntry& entry, CurriculumTrace& trace) {
                 if (s.phase == "initial") {
                   if (plateau_push(s, out.avg_return, cfg)) {
                     s.r_bar = mean(s.recent_returns);
                     start_phase(s, "loop", s.lesson);
                   }
                 } else if (s.phase == "loop") {
                   if (out.avg_return >= cfg.h_percent / 100.0 * s.r_bar) {
                     LessonUpdate upd = update_lesson(s.lesson.begin, s.r_bar, eval, cfg);
                     if (!upd.stalled) {
                       entry.accepted = true;
                       ++s.accepted;
                       s.lesson = LessonRange::constant(upd.to);
                       trace.updates.push_back(std::move(upd));
                       if (s.lesson.begin.norm() < cfg.eps_term) start_phase(s, "final", LessonRange::constant({}));
                     }
                   }
                 } else if (s.phase == "final") {
                   if (plateau_push(s, out.avg_return, cfg)) s.phase = "done";
                 }
               });
}

CurriculumTrace run_env_centered(PolicyTrainer& trainer, const CurriculumConfig& cfg, const SchedulerHooks& hooks,
                                 const std::optional<SchedulerState>& resume, CurriculumTrace prior) {
  validate(cfg);
  SchedulerState state;
  if (resume) {
    state = *resume;
    if (state.mode != CurriculumMode::kEnv) throw ConfigError("resume state belongs to another scheduler");
  } else {
    state.mode = CurriculumMode::kEnv;
    if (cfg.x0.norm() < cfg.eps_term)
      start_phase(state, "final", LessonRange::constant({}));
    else
      start_phase(state, "initial", LessonRange::milestones(cfg.x0, cfg.k_percent));
  }
  const double k = cfg.k_percent / 100.0;

  return drive(trainer, cfg, hooks, state, std::move(prior),
               [&](SchedulerState& s, const IterationOutcome& out, TraceEntry& entry, CurriculumTrace&) {
                 if (s.phase == "initial") {
                   if (plateau_push(s, out.avg_return, cfg)) {
                     s.r_bar = cfg.g_percent / 100.0 * mean(s.recent_returns);
                     start_phase(s, "loop", s.lesson);
                   }
                 } else if (s.phase == "loop") {
                   if (balance_test(out, cfg.period, cfg.balance_threshold) && out.avg_return > s.r_bar) {
                     entry.accepted = true;
                     ++s.accepted;
                     const Lesson begin = s.lesson.begin.scaled(k);
                     s.lesson = LessonRange::milestones(begin, cfg.k_percent);
                     if (begin.norm() < cfg.eps_term) start_phase(s, "final", LessonRange::constant({}));
                   }
                 } else if (s.phase == "final") {
                   if (plateau_push(s, out.avg_return, cfg)) s.phase = "done";
                 }
               });
}

}  // namespace gaitforge
