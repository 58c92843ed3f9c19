#include "gaitforge/cli.hpp"

#include "config_json.hpp"
#include "gaitforge/charmodel.hpp"
#include "gaitforge/dynamics.hpp"
#include "gaitforge/metrics.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#ifndef GAITFORGE_VERSION
#define GAITFORGE_VERSION "0.0.0"
#endif

namespace gaitforge::cli {

namespace fs = std::filesystem;
using detail::json;
using detail::read;
using detail::reject_unknown;

namespace {

constexpr const char* kBuiltinPrefix = "builtin:";

json section_json(const std::string& text) { return json::parse(text); }

json policy_json(const PolicyInit& p) {
  return {{"hidden", p.hidden}, {"log_std", p.log_std}, {"hidden_gain", p.hidden_gain}, {"output_gain", p.output_gain}};
}

void apply_policy_json(PolicyInit& out, const json& j) {
  if (!j.is_object()) throw ConfigError("config field 'policy' must be an object");
  reject_unknown(j, {"hidden", "log_std", "hidden_gain", "output_gain"}, "policy.");
  PolicyInit p = out;
  read(j, "hidden", p.hidden, "policy.");
  read(j, "log_std", p.log_std, "policy.");
  read(j, "hidden_gain", p.hidden_gain, "policy.");
  read(j, "output_gain", p.output_gain, "policy.");
  out = p;
}

void validate_policy(const PolicyInit& p) {
  if (p.hidden.empty()) throw ConfigError("config field 'policy.hidden' must name at least one layer");
  for (int h : p.hidden) {
    if (h <= 0) throw ConfigError("config field 'policy.hidden' must hold positive widths");
  }
  if (!(p.log_std >= kLogStdMin && p.log_std <= kLogStdMax)) {
    throw ConfigError("config field 'policy.log_std' must lie in [-5, 2]");
  }
  if (!(p.hidden_gain > 0.0)) throw ConfigError("config field 'policy.hidden_gain' must be > 0");
  if (!(p.output_gain > 0.0)) throw ConfigError("config field 'policy.output_gain' must be > 0");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write to a sibling temp file first so readers never see half a file.
void write_file(const fs::path& p, std::string_view text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("failed writing " + p.string());
  }
  fs::rename(tmp, p);
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct CharacterSource {
  std::string label;  // path or builtin:name
  std::string text;
};

CharacterSource character_source(const std::string& name) {
  if (name.rfind(kBuiltinPrefix, 0) == 0) {
    if (name != "builtin:biped9") throw ConfigError("unknown builtin character '" + name + "'");
    return {name, std::string(builtin_biped9())};
  }
  return {name, read_file(name)};
}

Lesson parse_assist(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("--assist expects kp,kd");
  try {
    std::size_t a = 0, b = 0;
    const std::string kp = s.substr(0, comma), kd = s.substr(comma + 1);
    Lesson x{std::stod(kp, &a), std::stod(kd, &b)};
    if (a != kp.size() || b != kd.size()) throw std::invalid_argument(s);
    if (!(x.kp >= 0.0 && x.kd >= 0.0) || !std::isfinite(x.kp) || !std::isfinite(x.kd)) {
      throw ConfigError("--assist gains must be finite and non-negative");
    }
    return x;
  } catch (const std::logic_error&) {
    throw ConfigError("--assist expects two numbers, got '" + s + "'");
  }
}

struct Run {
  fs::path dir;
  RunConfig cfg;
  std::shared_ptr<const CharacterModel> model;
};

Run open_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("run directory " + dir.string() + " does not exist");
  Run r;
  r.dir = dir;
  apply_run_config_json(r.cfg, read_file(dir / "config.json"));
  validate(r.cfg);
  r.model = std::make_shared<const CharacterModel>(load_character(read_file(dir / "character.model")));
  return r;
}

fs::path default_checkpoint(const fs::path& dir) {
  for (const char* name : {"final.gfpk", "latest.gfpk"}) {
    if (fs::exists(dir / "checkpoints" / name)) return dir / "checkpoints" / name;
  }
  throw IoError("no checkpoint found in " + (dir / "checkpoints").string());
}

void check_policy_fits(const PolicyParams& p, const CharacterModel& m) {
  if (p.obs_dim() != m.observation_dim() || p.act_dim() != m.action_dim()) {
    throw ConfigError("checkpoint shape " + std::to_string(p.obs_dim()) + "x" + std::to_string(p.act_dim()) +
                      " does not match character " + std::to_string(m.observation_dim()) + "x" +
                      std::to_string(m.action_dim()));
  }
}

// Keep only rows up to `last_iteration` so a resumed run appends cleanly.
void truncate_csv(const fs::path& p, int last_iteration) {
  if (!fs::exists(p)) return;
  std::ifstream in(p);
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header || (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= last_iteration)) {
      kept += line + '\n';
    }
    header = false;
  }
  in.close();
  write_file(p, kept);
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string preset;
  std::string config;
  std::string character;
  std::string curriculum;
  double sym_weight = 4.0;
  std::uint64_t seed = 1;
  int workers = 8;
  int max_iters = 0;
  int checkpoint_every = 0;
  std::string out;
  std::string resume;
  std::string assist;
};

RunConfig build_config(const TrainArgs& a, const CLI::App& app) {
  RunConfig cfg;
  std::string file_text;
  if (!a.config.empty()) {
    file_text = read_file(a.config);
    try {
      const json j = json::parse(file_text);
      if (j.is_object() && j.contains("preset") && j["preset"].is_string()) {
        cfg.preset = j["preset"].get<std::string>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config file: ") + e.what());
    }
  }
  if (app.count("--preset")) cfg.preset = a.preset;
  cfg.env.reward = reward_preset(cfg.preset);
  if (!file_text.empty()) {
    // the preset was resolved above; a flag must win over the file's value
    json j = json::parse(file_text);
    if (!j.is_object()) throw ConfigError("config must be an object");
    j.erase("preset");
    apply_run_config_json(cfg, j.dump());
  }
  if (app.count("--curriculum")) cfg.mode = curriculum_mode_from_string(a.curriculum);
  if (app.count("--sym-weight")) cfg.learner.w_sym = a.sym_weight;
  if (app.count("--seed")) cfg.learner.seed = a.seed;
  if (app.count("--workers")) cfg.learner.threads = a.workers;
  if (app.count("--max-iters")) cfg.curriculum.max_iterations = a.max_iters;
  if (app.count("--checkpoint-every")) cfg.checkpoint_every = a.checkpoint_every;
  if (app.count("--assist")) cfg.curriculum.x0 = parse_assist(a.assist);
  validate(cfg);
  return cfg;
}

json manifest_json(const RunConfig& cfg, const CharacterSource& ch, const CharacterModel& model,
                   const std::vector<std::string>& argv) {
  return {{"schema", kManifestSchema},
          {"version", GAITFORGE_VERSION},
          {"start_time", utc_now()},
          {"seed", cfg.learner.seed},
          {"command", argv},
          {"character", {{"source", ch.label}, {"name", model.name}, {"fnv1a64", hex64(fnv1a64(ch.text))}}},
          {"config", json::parse(run_config_to_json(cfg))},
          {"layout",
           {{"config", "config.json"},
            {"character", "character.model"},
            {"stats", "stats.csv"},
            {"timing", "timing.csv"},
            {"curriculum", "curriculum.csv"},
            {"scheduler_state", "scheduler_state.json"},
            {"status", "status.json"},
            {"checkpoints", "checkpoints/"},
            {"eval", "eval/"}}}};
}

int cmd_train(const TrainArgs& a, const CLI::App& app, const std::vector<std::string>& argv, std::ostream& out) {
  const bool resuming = !a.resume.empty();
  RunConfig cfg;
  std::shared_ptr<const CharacterModel> model;
  fs::path dir;
  std::optional<SchedulerState> resume_state;
  CurriculumTrace prior;

  if (resuming) {
    Run r = open_run(a.resume);
    dir = r.dir;
    cfg = r.cfg;
    model = r.model;
    if (app.count("--workers")) cfg.learner.threads = a.workers;
    if (app.count("--max-iters")) cfg.curriculum.max_iterations = a.max_iters;
    validate(cfg);
    resume_state = SchedulerState::from_json(read_file(dir / "scheduler_state.json"));
    if (resume_state->phase == "done") {
      out << "run " << dir.string() << " already finished\n";
      return kExitOk;
    }
    truncate_csv(dir / "stats.csv", resume_state->iteration);
    truncate_csv(dir / "timing.csv", resume_state->iteration);
    truncate_csv(dir / "curriculum.csv", resume_state->iteration);
    std::ifstream trace_in(dir / "curriculum.csv");
    prior.entries = read_trace_csv(trace_in);
    prior.r_bar = resume_state->r_bar;
  } else {
    cfg = build_config(a, app);
    std::string char_name = a.character;
    if (char_name.empty()) {
      if (cfg.preset.rfind("biped-", 0) != 0) {
        throw ConfigError("preset '" + cfg.preset + "' needs --character (only the biped ships)");
      }
      char_name = "builtin:biped9";
    }
    const CharacterSource ch = character_source(char_name);
    model = std::make_shared<const CharacterModel>(load_character(ch.text));
    dir = a.out.empty() ? fs::path("runs") / (cfg.preset + "-s" + std::to_string(cfg.learner.seed)) : fs::path(a.out);
    if (fs::exists(dir) && !fs::is_empty(dir)) {
      throw ConfigError("output directory " + dir.string() + " is not empty (use --resume to continue a run)");
    }
    fs::create_directories(dir / "checkpoints");
    write_file(dir / "character.model", ch.text);
    write_file(dir / "config.json", run_config_to_json(cfg) + "\n");
    write_file(dir / "manifest.json", manifest_json(cfg, ch, *model, argv).dump(2) + "\n");
    {
      std::ofstream s(dir / "stats.csv");
      write_stats_header(s);
      std::ofstream t(dir / "timing.csv");
      t << "iteration,wall_time_s\n";
      std::ofstream c(dir / "curriculum.csv");
      write_trace_header(c);
    }
  }

  PolicyParams params = resuming ? load_checkpoint(dir / "checkpoints" / "latest.gfpk")
                                 : PolicyParams::create(model->observation_dim(), model->action_dim(),
                                                        cfg.learner.seed, cfg.policy);
  check_policy_fits(params, *model);
  PpoTrainer ppo(std::move(params), cfg.learner, physics_env_factory(model, cfg.env), &model->mirror_obs,
                 &model->mirror_act);
  if (resume_state) ppo.set_iteration(resume_state->iteration);
  PpoPolicyTrainer trainer(ppo);

  std::ofstream stats(dir / "stats.csv", std::ios::app);
  std::ofstream timing(dir / "timing.csv", std::ios::app);
  std::ofstream trace(dir / "curriculum.csv", std::ios::app);
  if (!stats || !timing || !trace) throw IoError("cannot append to the logs in " + dir.string());

  SchedulerHooks hooks;
  hooks.on_iteration = [&](const TraceEntry& e, const IterationOutcome& o, const SchedulerState& s) {
    if (o.stats) {
      write_stats_row(stats, *o.stats);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%d,%.3f\n", e.iteration, o.stats->wall_time_s);
      timing << buf;
      out << "iter " << e.iteration << "  return " << o.stats->avg_return << "  len " << o.stats->avg_len
          << "  L_sym " << o.stats->l_sym << "  x=(" << e.lesson.begin.kp << "," << e.lesson.begin.kd << ")"
          << (e.accepted ? "  lesson advanced" : "") << "\n";
    }
    write_trace_row(trace, e);
    stats.flush();
    timing.flush();
    trace.flush();
    save_checkpoint(ppo.params(), dir / "checkpoints" / "latest.gfpk.tmp");
    fs::rename(dir / "checkpoints" / "latest.gfpk.tmp", dir / "checkpoints" / "latest.gfpk");
    if (cfg.checkpoint_every > 0 && e.iteration % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06d.gfpk", e.iteration);
      fs::copy_file(dir / "checkpoints" / "latest.gfpk", dir / "checkpoints" / name,
                    fs::copy_options::overwrite_existing);
    }
    // written last: the commit point for --resume
    write_file(dir / "scheduler_state.json", s.to_json() + "\n");
  };

  auto finish = [&](const char* status, const CurriculumTrace& t) {
    save_checkpoint(ppo.params(), dir / "checkpoints" / "final.gfpk");
    int accepted = 0;
    for (const auto& e : t.entries) accepted += e.accepted ? 1 : 0;
    const json j = {{"status", status},
                    {"iterations", t.entries.empty() ? 0 : t.entries.back().iteration},
                    {"accepted_lessons", accepted},
                    {"r_bar", t.r_bar},
                    {"final_lesson",
                     t.entries.empty() ? json(nullptr)
                                       : json::array({t.entries.back().lesson.begin.kp,
                                                      t.entries.back().lesson.begin.kd})}};
    write_file(dir / "status.json", j.dump(2) + "\n");
  };

  try {
    const CurriculumTrace t = cfg.mode == CurriculumMode::kEnv
                                  ? run_env_centered(trainer, cfg.curriculum, hooks, resume_state, prior)
                                  : run_learner_centered(trainer, cfg.curriculum, hooks, resume_state, prior);
    finish("success", t);
    out << "training finished: " << dir.string() << "\n";
    return kExitOk;
  } catch (const BudgetExceeded& e) {
    finish("budget_exceeded", e.trace());
    out << "iteration budget exhausted: " << e.what() << "\n";
    return kExitBudget;
  } catch (const NumericalError& e) {
    write_file(dir / "status.json", json({{"status", "numerical_error"}, {"message", e.what()}}).dump(2) + "\n");
    throw;
  }
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string run;
  std::string checkpoint;
  int episodes = 5;
  std::uint64_t seed = 0;
  std::string assist = "0,0";
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Run r = open_run(a.run);
  const fs::path ck = a.checkpoint.empty() ? default_checkpoint(r.dir) : fs::path(a.checkpoint);
  const PolicyParams policy = load_checkpoint(ck);
  check_policy_fits(policy, *r.model);
  if (a.episodes <= 0) throw ConfigError("--episodes must be > 0");
  const Lesson x = parse_assist(a.assist);

  Environment env(r.model, r.cfg.env);
  std::vector<RolloutRecord> eps;
  for (int i = 0; i < a.episodes; ++i) {
    eps.push_back(record_rollout(env, policy, LessonRange::constant(x), a.seed + static_cast<std::uint64_t>(i)));
  }
  EvalSummary sum = summarize_eval(eps, *r.model, r.cfg.env.control_dt());
  sum.checkpoint = ck.string();
  sum.character = r.model->name;
  sum.assist = x;

  const fs::path dir = a.out.empty() ? r.dir / "eval" : fs::path(a.out);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < sum.episodes.size(); ++i) {
    char name[40];
    std::snprintf(name, sizeof name, "episode_%03zu.csv", i);
    export_trajectory(sum.episodes[i].traj, dir / name);
  }
  const std::string report = eval_report_json(sum);
  write_file(dir / "report.json", report + "\n");
  out << report << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- replay

struct ReplayArgs {
  std::string run;
  std::string trajectory;
  std::string assist;
  std::string out;
  std::string perturb;  // step,index,delta
};

int cmd_replay(const ReplayArgs& a, std::ostream& out) {
  const Run r = open_run(a.run);
  const Trajectory logged = import_trajectory(a.trajectory);
  if (logged.empty()) throw ConfigError("trajectory " + a.trajectory + " has no steps");
  if (logged.dofs != r.model->dof_count() || logged.actions != r.model->action_dim()) {
    throw ConfigError("trajectory " + a.trajectory + " does not match the run's character");
  }

  Lesson x;
  if (!a.assist.empty()) {
    x = parse_assist(a.assist);
  } else if (const fs::path rep = fs::path(a.trajectory).parent_path() / "report.json"; fs::exists(rep)) {
    const json j = json::parse(read_file(rep));
    x = {j.at("assist").at(0).get<double>(), j.at("assist").at(1).get<double>()};
  }

  std::vector<Eigen::VectorXd> actions;
  for (const auto& s : logged.steps) actions.push_back(s.action);
  if (!a.perturb.empty()) {
    std::istringstream ss(a.perturb);
    std::string f[3];
    for (auto& v : f) std::getline(ss, v, ',');
    try {
      const std::size_t step = std::stoul(f[0]);
      const auto idx = static_cast<Eigen::Index>(std::stol(f[1]));
      const double delta = std::stod(f[2]);
      if (step >= actions.size() || idx < 0 || idx >= actions[step].size()) {
        throw ConfigError("--perturb step or index out of range");
      }
      actions[step][idx] += delta;
    } catch (const std::logic_error&) {
      throw ConfigError("--perturb expects step,index,delta");
    }
  }

  Environment env(r.model, r.cfg.env);
  const SimState init{logged.steps[0].q, logged.steps[0].qd, logged.steps[0].t, {}};
  const RolloutRecord again = replay_actions(env, init, LessonRange::constant(x), actions);

  const fs::path dst = a.out.empty() ? fs::path(a.trajectory).replace_extension(".replay.csv") : fs::path(a.out);
  export_trajectory(again.traj, dst);

  const std::size_t n = std::min(again.traj.steps.size(), logged.steps.size());
  std::optional<std::size_t> diverged;
  for (std::size_t k = 0; k < n && !diverged; ++k) {
    const auto &p = again.traj.steps[k], &q = logged.steps[k];
    if (p.q != q.q || p.qd != q.qd) diverged = k;
  }
  if (!diverged && again.traj.steps.size() != logged.steps.size()) diverged = n;
  if (diverged) {
    out << "replay diverged at step " << *diverged << " (t=" << *diverged * r.cfg.env.control_dt() << " s); "
        << again.traj.steps.size() << " replayed vs " << logged.steps.size() << " logged steps\n";
    return kExitMismatch;
  }
  out << "replay matches bit for bit over " << n << " steps; written to " << dst.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
  std::string target;
  bool presets = false;
};

void describe_model(const CharacterModel& m, std::ostream& out) {
  out << "character " << m.name << ": " << m.links.size() << " links, " << m.joints.size() << " joints, "
      << m.dof_count() << " dofs, " << m.action_dim() << " actuators, " << m.end_effectors.size()
      << " end effectors, mass " << m.total_mass() << " kg, observation dim " << m.observation_dim() << "\n";
  for (const auto& j : m.joints) {
    out << "  " << j.name << " (" << to_string(j.kind) << ", " << j.dof_count() << " dof)";
    if (!j.torque_limit.empty()) {
      out << " limits";
      for (double t : j.torque_limit) out << " " << t;
    }
    out << "\n";
  }
}

void describe_policy(const PolicyParams& p, std::ostream& out) {
  out << "policy: obs " << p.obs_dim() << ", act " << p.act_dim() << ", hidden";
  for (std::size_t i = 0; i + 1 < p.weights.mean.layers.size(); ++i) out << " " << p.weights.mean.layers[i].b.size();
  out << ", parameters " << p.weights.size() << ", value scale " << p.value_scale << ", normalizer count "
      << p.normalizer.count << ", std " << p.weights.log_std.array().exp().mean() << " (mean)\n";
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  if (a.presets) {
    for (const auto& n : reward_preset_names()) {
      const RewardConfig c = reward_preset(n);
      out << n << ": v_hat " << c.v_hat_final << ", w_v " << c.w_v << ", w_u (" << c.w_ux << "," << c.w_uy << ","
          << c.w_uz << "), w_l " << c.w_l << ", E_a " << c.E_a << ", w_e " << c.w_e << "\n";
    }
    if (a.target.empty()) return kExitOk;
  }
  if (a.target.empty()) throw ConfigError("inspect needs a run directory, checkpoint or character");
  const fs::path t = a.target;
  if (a.target.rfind(kBuiltinPrefix, 0) == 0) {
    describe_model(load_character(character_source(a.target).text), out);
  } else if (fs::is_directory(t)) {
    const Run r = open_run(t);
    const json man = json::parse(read_file(t / "manifest.json"));
    out << "run " << t.string() << "\n  started " << man.value("start_time", "?") << ", seed " << r.cfg.learner.seed
        << ", version " << man.value("version", "?") << ", curriculum " << to_string(r.cfg.mode) << ", preset "
        << r.cfg.preset << "\n";
    const std::string ch = read_file(t / "character.model");
    const std::string want = man.at("character").at("fnv1a64").get<std::string>();
    out << "  character hash " << hex64(fnv1a64(ch)) << (hex64(fnv1a64(ch)) == want ? " (matches manifest)" : " (MISMATCH)")
        << "\n";
    if (fs::exists(t / "status.json")) out << "  status " << json::parse(read_file(t / "status.json")).dump() << "\n";
    std::ifstream stats(t / "stats.csv");
    std::string line, last;
    int rows = -1;
    while (std::getline(stats, line)) {
      ++rows;
      last = line;
    }
    out << "  " << std::max(rows, 0) << " iterations logged";
    if (rows > 0) out << "; last: " << last;
    out << "\n";
    describe_model(*r.model, out);
    if (fs::exists(t / "checkpoints")) {
      std::vector<std::string> names;
      for (const auto& e : fs::directory_iterator(t / "checkpoints")) names.push_back(e.path().filename().string());
      std::sort(names.begin(), names.end());
      out << "checkpoints:";
      for (const auto& n : names) out << " " << n;
      out << "\n";
    }
  } else if (t.extension() == ".gfpk") {
    describe_policy(load_checkpoint(t), out);
  } else {
    describe_model(load_character_file(t), out);
  }
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------- config

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void apply_run_config_json(RunConfig& out, std::string_view doc) {
  json j;
  try {
    j = json::parse(doc.begin(), doc.end());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be an object");
  reject_unknown(j, {"preset", "curriculum_mode", "checkpoint_every", "env", "learner", "curriculum", "policy"}, "");
  RunConfig cfg = out;
  std::string mode = std::string(to_string(cfg.mode));
  read(j, "preset", cfg.preset, "");
  read(j, "curriculum_mode", mode, "");
  read(j, "checkpoint_every", cfg.checkpoint_every, "");
  try {
    cfg.mode = curriculum_mode_from_string(mode);
  } catch (const std::exception&) {
    throw ConfigError("config field 'curriculum_mode' must be 'learner' or 'env'");
  }
  if (j.contains("preset")) cfg.env.reward = reward_preset(cfg.preset);

  bool env_k = false, cur_k = false, env_p = false, cur_p = false;
  if (j.contains("env")) {
    const json& e = j["env"];
    env_k = e.is_object() && e.contains("k_percent");
    env_p = e.is_object() && e.contains("milestone_period");
    apply_env_config_json(cfg.env, e.dump());
  }
  if (j.contains("learner")) apply_learner_config_json(cfg.learner, j["learner"].dump());
  if (j.contains("curriculum")) {
    const json& c = j["curriculum"];
    cur_k = c.is_object() && c.contains("k_percent");
    cur_p = c.is_object() && c.contains("period");
    apply_curriculum_config_json(cfg.curriculum, c.dump());
  }
  if (j.contains("policy")) apply_policy_json(cfg.policy, j["policy"]);

  if (env_k && !cur_k) cfg.curriculum.k_percent = cfg.env.k_percent;
  if (cur_k && !env_k) cfg.env.k_percent = cfg.curriculum.k_percent;
  if (env_p && !cur_p) cfg.curriculum.period = cfg.env.milestone_period;
  if (cur_p && !env_p) cfg.env.milestone_period = cfg.curriculum.period;
  out = cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  const json j = {{"preset", cfg.preset},
                  {"curriculum_mode", std::string(to_string(cfg.mode))},
                  {"checkpoint_every", cfg.checkpoint_every},
                  {"env", section_json(env_config_to_json(cfg.env))},
                  {"learner", section_json(learner_config_to_json(cfg.learner))},
                  {"curriculum", section_json(curriculum_config_to_json(cfg.curriculum))},
                  {"policy", policy_json(cfg.policy)}};
  return j.dump(2);
}

void validate(const RunConfig& cfg) {
  gaitforge::validate(cfg.env);
  gaitforge::validate(cfg.learner);
  gaitforge::validate(cfg.curriculum);
  validate_policy(cfg.policy);
  if (cfg.checkpoint_every < 0) throw ConfigError("config field 'checkpoint_every' must be >= 0");
  if (cfg.env.k_percent != cfg.curriculum.k_percent) {
    throw ConfigError("config fields 'env.k_percent' and 'curriculum.k_percent' disagree");
  }
  if (cfg.env.milestone_period != cfg.curriculum.period) {
    throw ConfigError("config fields 'env.milestone_period' and 'curriculum.period' disagree");
  }
}

// ---------------------------------------------------------------- entry

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gaitforge: symmetric low-energy locomotion learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", GAITFORGE_VERSION);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a policy under an assistance curriculum");
  train->add_option("--preset", ta.preset, "reward preset (see inspect --presets)")->default_str("biped-walk");
  train->add_option("--config", ta.config, "JSON config with env/learner/curriculum/policy sections");
  train->add_option("--character", ta.character, "character model file or builtin:biped9");
  train->add_option("--curriculum", ta.curriculum, "learner or env")->check(CLI::IsMember({"learner", "env"}));
  train->add_option("--sym-weight", ta.sym_weight, "mirror symmetry loss weight")->default_str("4");
  train->add_option("--seed", ta.seed, "run seed")->default_str("1");
  train->add_option("--workers", ta.workers, "rollout threads (GAITFORGE_THREADS overrides)")->default_str("8");
  train->add_option("--max-iters", ta.max_iters, "iteration budget, 0 for none")->default_str("0");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "keep a checkpoint every N iterations")
      ->default_str("10");
  train->add_option("--assist", ta.assist, "starting assistance kp,kd")->default_str("2000,2000");
  train->add_option("--out", ta.out, "run directory");
  train->add_option("--resume", ta.resume, "continue the run in this directory");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "deterministic rollouts of a checkpoint");
  eval->add_option("run", ea.run, "run directory")->required();
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint file (default: final, else latest)");
  eval->add_option("--episodes", ea.episodes, "number of rollouts")->default_str("5");
  eval->add_option("--seed", ea.seed, "first rollout seed")->default_str("0");
  eval->add_option("--assist", ea.assist, "constant assistance kp,kd")->default_str("0,0");
  eval->add_option("--out", ea.out, "output directory (default: <run>/eval)");

  ReplayArgs ra;
  auto* replay = app.add_subcommand("replay", "re-simulate logged actions and compare states");
  replay->add_option("run", ra.run, "run directory")->required();
  replay->add_option("trajectory", ra.trajectory, "trajectory CSV written by eval")->required();
  replay->add_option("--assist", ra.assist, "constant assistance kp,kd (default: from report.json, else 0,0)");
  replay->add_option("--out", ra.out, "replayed trajectory CSV");
  replay->add_option("--perturb", ra.perturb, "add delta to one logged action: step,index,delta");

  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect", "describe a run directory, checkpoint or character");
  inspect->add_option("target", ia.target, "run directory, .gfpk checkpoint, character file or builtin:biped9");
  inspect->add_flag("--presets", ia.presets, "list reward presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      std::vector<std::string> args(argv, argv + argc);
      return cmd_train(ta, *train, args, out);
    }
    if (*eval) return cmd_eval(ea, out);
    if (*replay) return cmd_replay(ra, out);
    return cmd_inspect(ia, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const BudgetExceeded& e) {
    err << e.what() << "\n";
    return kExitBudget;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
  } catch (const ParseError& e) {
    err << "character parse error: " << e.what() << "\n";
  } catch (const ValidationError& e) {
    err << "character validation error: " << e.what() << "\n";
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
  } catch (const json::exception& e) {
    err << "malformed JSON: " << e.what() << "\n";
  }
  return kExitConfig;
}

}  // namespace gaitforge::cli
