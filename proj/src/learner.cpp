#include "gaitforge/learner.hpp"

#include "config_json.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

namespace gaitforge {

using detail::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  for (std::uint64_t p : parts) h = splitmix(h ^ p);
  return h;
}

constexpr std::uint64_t kWarmupTag = 0x5741524D;
constexpr std::uint64_t kCollectTag = 0x434F4C4C;
constexpr std::uint64_t kShuffleTag = 0x53485546;

class PhysicsRolloutEnv final : public RolloutEnv {
 public:
  PhysicsRolloutEnv(std::shared_ptr<const CharacterModel> model, const EnvConfig& cfg) : env_(std::move(model), cfg) {}
  int observation_dim() const override { return env_.model().observation_dim(); }
  int action_dim() const override { return env_.model().action_dim(); }
  Eigen::VectorXd reset(const LessonRange& range, std::uint64_t seed) override { return env_.reset(range, seed); }
  EnvTransition step(const Eigen::VectorXd& action) override {
    StepResult r = env_.step(action);
    return {std::move(r.observation), r.reward, r.done, r.reason};
  }
  double control_rate() const override { return 1.0 / env_.config().control_dt(); }

 private:
  Environment env_;
};

// Per-stream rollout output before concatenation.
struct StreamData {
  std::vector<Eigen::VectorXd> obs, act;
  std::vector<double> logp, rew, val;
  std::vector<std::uint8_t> done;
  std::vector<int> starts;
  std::vector<double> bootstrap;
  std::vector<Termination> reason;
};

// Rollouts used for return/length statistics: the complete ones when any exist.
template <class F>
double rollout_mean(const RolloutBatch& b, F&& per_rollout) {
  if (b.size() == 0 || b.rollouts() == 0) throw EmptyBatch("empty rollout batch");
  bool any_complete = false;
  for (int r = 0; r < b.rollouts(); ++r) any_complete = any_complete || b.rollout_complete(r);
  double sum = 0.0;
  int n = 0;
  for (int r = 0; r < b.rollouts(); ++r) {
    if (any_complete && !b.rollout_complete(r)) continue;
    sum += per_rollout(r);
    ++n;
  }
  return sum / n;
}

}  // namespace

EnvFactory physics_env_factory(std::shared_ptr<const CharacterModel> model, EnvConfig cfg) {
  validate(cfg);
  return [model = std::move(model), cfg](int) -> std::unique_ptr<RolloutEnv> {
    return std::make_unique<PhysicsRolloutEnv>(model, cfg);
  };
}

void RolloutBatch::check() const {
  const int n = size();
  if (n == 0) throw EmptyBatch("empty rollout batch");
  if (observations.cols() != n || actions.cols() != n || log_prob_old.size() != n || value_old.size() != n ||
      static_cast<int>(done.size()) != n) {
    throw ShapeMismatch("rollout batch arrays disagree in length");
  }
  if (starts.size() < 2 || starts.front() != 0 || starts.back() != n) {
    throw ShapeMismatch("rollout boundaries do not partition the batch");
  }
  for (std::size_t i = 1; i < starts.size(); ++i) {
    if (starts[i] <= starts[i - 1]) throw ShapeMismatch("rollout boundaries must increase");
  }
  if (bootstrap.size() + 1 != starts.size()) throw ShapeMismatch("one bootstrap value per rollout");
  if (!log_prob_old.allFinite()) throw std::invalid_argument("non-finite log_prob_old");
}

void validate(const LearnerConfig& c) {
  auto fail = [](const char* f, const char* what) {
    throw ConfigError(std::string("config field 'learner.") + f + "' " + what);
  };
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) fail("gamma", "must be in (0, 1]");
  if (!(c.lambda > 0.0 && c.lambda <= 1.0)) fail("lambda", "must be in (0, 1]");
  if (!(c.clip > 0.0)) fail("clip", "must be > 0");
  if (!(c.learning_rate > 0.0)) fail("learning_rate", "must be > 0");
  if (c.lr_decay_iterations < 1) fail("lr_decay_iterations", "must be >= 1");
  if (!(c.lr_floor >= 0.0 && c.lr_floor <= 1.0)) fail("lr_floor", "must be in [0, 1]");
  if (c.epochs < 1) fail("epochs", "must be >= 1");
  if (c.minibatch < 1) fail("minibatch", "must be >= 1");
  if (!(c.w_sym >= 0.0)) fail("w_sym", "must be >= 0");
  if (!(c.value_coef >= 0.0)) fail("value_coef", "must be >= 0");
  if (c.batch_steps < 1) fail("batch_steps", "must be >= 1");
  if (c.streams < 1) fail("streams", "must be >= 1");
  if (c.threads < 1) fail("threads", "must be >= 1");
  if (c.normalizer_warmup < 0) fail("normalizer_warmup", "must be >= 0");
}

void apply_learner_config_json(LearnerConfig& out, std::string_view doc) {
  LearnerConfig c = out;
  const json j = detail::parse_section(doc, "learner");
  detail::reject_unknown(j,
                         {"gamma", "lambda", "clip", "learning_rate", "lr_decay_iterations", "lr_floor", "epochs",
                          "minibatch", "w_sym", "value_coef", "max_grad_norm", "batch_steps", "streams", "threads",
                          "normalizer_warmup", "seed"},
                         "learner.");
  const std::string p = "learner.";
  detail::read(j, "gamma", c.gamma, p);
  detail::read(j, "lambda", c.lambda, p);
  detail::read(j, "clip", c.clip, p);
  detail::read(j, "learning_rate", c.learning_rate, p);
  detail::read(j, "lr_decay_iterations", c.lr_decay_iterations, p);
  detail::read(j, "lr_floor", c.lr_floor, p);
  detail::read(j, "epochs", c.epochs, p);
  detail::read(j, "minibatch", c.minibatch, p);
  detail::read(j, "w_sym", c.w_sym, p);
  detail::read(j, "value_coef", c.value_coef, p);
  detail::read(j, "max_grad_norm", c.max_grad_norm, p);
  detail::read(j, "batch_steps", c.batch_steps, p);
  detail::read(j, "streams", c.streams, p);
  detail::read(j, "threads", c.threads, p);
  detail::read(j, "normalizer_warmup", c.normalizer_warmup, p);
  detail::read(j, "seed", c.seed, p);
  validate(c);
  out = c;
}

std::string learner_config_to_json(const LearnerConfig& c) {
  json j = {{"gamma", c.gamma},
            {"lambda", c.lambda},
            {"clip", c.clip},
            {"learning_rate", c.learning_rate},
            {"lr_decay_iterations", c.lr_decay_iterations},
            {"lr_floor", c.lr_floor},
            {"epochs", c.epochs},
            {"minibatch", c.minibatch},
            {"w_sym", c.w_sym},
            {"value_coef", c.value_coef},
            {"max_grad_norm", c.max_grad_norm},
            {"batch_steps", c.batch_steps},
            {"streams", c.streams},
            {"threads", c.threads},
            {"normalizer_warmup", c.normalizer_warmup},
            {"seed", c.seed}};
  return j.dump(2);
}

Advantages compute_gae(const RolloutBatch& b, double gamma, double lambda) {
  b.check();
  Advantages out;
  out.advantages.resize(b.size());
  for (int r = 0; r < b.rollouts(); ++r) {
    double next_adv = 0.0;
    double next_value = b.bootstrap[r];
    for (int t = b.starts[r + 1] - 1; t >= b.starts[r]; --t) {
      const double live = b.done[t] ? 0.0 : 1.0;
      const double delta = b.rewards[t] + gamma * next_value * live - b.value_old[t];
      next_adv = delta + gamma * lambda * live * next_adv;
      out.advantages[t] = next_adv;
      next_value = b.value_old[t];
    }
  }
  out.targets = out.advantages + b.value_old;
  return out;
}

Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& adv) {
  if (adv.size() == 0) throw EmptyBatch("no advantages to normalize");
  const Eigen::VectorXd centered = adv.array() - adv.mean();
  const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(adv.size()));
  if (!(sd > 1e-12)) return Eigen::VectorXd::Zero(adv.size());
  return centered / sd;
}

double avg_return(const RolloutBatch& b) {
  return rollout_mean(b, [&](int r) { return b.rewards.segment(b.starts[r], b.rollout_length(r)).sum(); });
}

double avg_episode_length(const RolloutBatch& b) {
  return rollout_mean(b, [&](int r) { return static_cast<double>(b.rollout_length(r)); });
}

double ppo_surrogate(const Eigen::VectorXd& lp_new, const Eigen::VectorXd& lp_old, const Eigen::VectorXd& adv,
                     double clip, Eigen::VectorXd* d_log_prob) {
  const Eigen::Index n = adv.size();
  if (n == 0) throw EmptyBatch("empty minibatch");
  if (lp_new.size() != n || lp_old.size() != n) throw ShapeMismatch("ppo_surrogate: length mismatch");
  if (d_log_prob) d_log_prob->setZero(n);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ratio = std::exp(lp_new[i] - lp_old[i]);
    const double unclipped = ratio * adv[i];
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv[i];
    if (unclipped <= clipped) {
      sum += unclipped;
      if (d_log_prob) (*d_log_prob)[i] = -unclipped / static_cast<double>(n);
    } else {
      sum += clipped;
    }
  }
  return -sum / static_cast<double>(n);
}

namespace {

struct PpoParts {
  double loss = 0.0;
  Eigen::MatrixXd d_mean;
  Eigen::VectorXd d_log_std;
};

PpoParts ppo_parts(const PolicyParams& p, const Eigen::MatrixXd& mean, const Eigen::MatrixXd& actions,
                   const Eigen::VectorXd& lp_old, const Eigen::VectorXd& adv, double clip) {
  PpoParts out;
  const Eigen::VectorXd lp = gaussian_log_prob(mean, p.weights.log_std, actions);
  Eigen::VectorXd dlp;
  out.loss = ppo_surrogate(lp, lp_old, adv, clip, &dlp);
  const LogProbGrad g = gaussian_log_prob_grad(mean, p.weights.log_std, actions);
  out.d_mean = g.d_mean * dlp.asDiagonal();
  out.d_log_std = g.d_log_std * dlp;
  return out;
}

struct SymParts {
  double loss = 0.0;
  Eigen::MatrixXd d_mean;  // act x 2B: original columns then mirrored ones
};

SymParts sym_parts(const Eigen::MatrixXd& mean_both, const SignedPermutation& mirror_act) {
  const Eigen::Index n = mean_both.cols() / 2;
  if (n == 0) throw EmptyBatch("empty minibatch");
  const Eigen::MatrixXd diff = mean_both.leftCols(n) - mirror_act.apply_columns(mean_both.rightCols(n));
  SymParts out;
  out.loss = diff.squaredNorm() / static_cast<double>(n);
  const Eigen::MatrixXd g = (2.0 / static_cast<double>(n)) * diff;
  out.d_mean.resize(mean_both.rows(), 2 * n);
  out.d_mean.leftCols(n) = g;
  out.d_mean.rightCols(n) = -mirror_act.matrix().transpose() * g;
  return out;
}

void check_mirrors(const PolicyParams& p, const SignedPermutation& mo, const SignedPermutation& ma) {
  if (mo.size() != p.obs_dim() || ma.size() != p.act_dim()) throw ShapeMismatch("mirror map dimension mismatch");
}

}  // namespace

LossGrad ppo_loss(const PolicyParams& p, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions,
                  const Eigen::VectorXd& log_prob_old, const Eigen::VectorXd& adv, double clip) {
  const PpoParts parts = ppo_parts(p, mean_actions(p, obs), actions, log_prob_old, adv, clip);
  return {parts.loss, backward(p, obs, parts.d_mean, parts.d_log_std, {})};
}

LossGrad sym_loss(const PolicyParams& p, const Eigen::MatrixXd& obs, const SignedPermutation& mirror_obs,
                  const SignedPermutation& mirror_act) {
  check_mirrors(p, mirror_obs, mirror_act);
  Eigen::MatrixXd both(obs.rows(), 2 * obs.cols());
  both << obs, mirror_obs.apply_columns(obs);
  const SymParts parts = sym_parts(mean_actions(p, both), mirror_act);
  return {parts.loss, backward(p, both, parts.d_mean, {}, {})};
}

LossGrad value_loss(const PolicyParams& p, const Eigen::MatrixXd& obs, const Eigen::VectorXd& targets) {
  const Eigen::Index n = obs.cols();
  if (n == 0) throw EmptyBatch("empty minibatch");
  if (targets.size() != n) throw ShapeMismatch("value_loss: target count mismatch");
  const Eigen::VectorXd err = (values(p, obs) - targets) / p.value_scale;
  const Eigen::VectorXd d_value = (2.0 / (static_cast<double>(n) * p.value_scale)) * err;
  return {err.squaredNorm() / static_cast<double>(n), backward(p, obs, {}, {}, d_value)};
}

ObjectiveTerms objective(const PolicyParams& p, const Minibatch& mb, const LearnerConfig& cfg,
                         const SignedPermutation* mirror_obs, const SignedPermutation* mirror_act) {
  const Eigen::Index n = mb.obs.cols();
  if (n == 0) throw EmptyBatch("empty minibatch");
  const bool sym = cfg.w_sym > 0.0;
  if (sym && (!mirror_obs || !mirror_act)) throw std::invalid_argument("symmetry loss needs mirror maps");
  if (sym) check_mirrors(p, *mirror_obs, *mirror_act);

  Eigen::MatrixXd obs_all = mb.obs;
  if (sym) {
    obs_all.resize(mb.obs.rows(), 2 * n);
    obs_all << mb.obs, mirror_obs->apply_columns(mb.obs);
  }
  const Eigen::MatrixXd mean_all = mean_actions(p, obs_all);

  ObjectiveTerms out;
  const PpoParts ppo = ppo_parts(p, mean_all.leftCols(n), mb.actions, mb.log_prob_old, mb.adv, cfg.clip);
  out.ppo = ppo.loss;
  Eigen::MatrixXd d_mean = Eigen::MatrixXd::Zero(mean_all.rows(), mean_all.cols());
  d_mean.leftCols(n) = ppo.d_mean;
  if (sym) {
    const SymParts s = sym_parts(mean_all, *mirror_act);
    out.sym = s.loss;
    d_mean += cfg.w_sym * s.d_mean;
  }

  const Eigen::VectorXd err = (values(p, mb.obs) - mb.targets) / p.value_scale;
  out.value = err.squaredNorm() / static_cast<double>(n);
  Eigen::VectorXd d_value = Eigen::VectorXd::Zero(obs_all.cols());
  d_value.head(n) = (cfg.value_coef * 2.0 / (static_cast<double>(n) * p.value_scale)) * err;

  out.total = out.ppo + cfg.w_sym * out.sym + cfg.value_coef * out.value;
  out.grad = backward(p, obs_all, d_mean, ppo.d_log_std, d_value);
  return out;
}

Adam::Adam(Eigen::Index n, double beta1, double beta2, double eps)
    : m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double lr) {
  if (x.size() != m_.size() || g.size() != m_.size()) throw ShapeMismatch("Adam: parameter count mismatch");
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * g;
  v_ = b2_ * v_ + (1.0 - b2_) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  x.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

void write_stats_header(std::ostream& out) {
  out << "iteration,avg_return,avg_len,L_PPO,L_sym,value_loss,x_norm\n";
}

void write_stats_row(std::ostream& out, const TrainStats& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.iteration, s.avg_return,
                s.avg_len, s.l_ppo, s.l_sym, s.value_loss, s.lesson_norm);
  out << buf;
}

int resolve_thread_count(int requested) {
  if (const char* env = std::getenv("GAITFORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return std::max(1, requested);
}

PpoTrainer::PpoTrainer(PolicyParams params, LearnerConfig cfg, EnvFactory factory,
                       const SignedPermutation* mirror_obs, const SignedPermutation* mirror_act)
    : params_(std::move(params)),
      cfg_(cfg),
      factory_(std::move(factory)),
      mirror_obs_(mirror_obs),
      mirror_act_(mirror_act),
      adam_(params_.weights.size()) {
  validate(cfg_);
  if (cfg_.w_sym > 0.0 && (!mirror_obs_ || !mirror_act_)) throw std::invalid_argument("symmetry loss needs mirror maps");
  if (mirror_obs_ && mirror_act_) check_mirrors(params_, *mirror_obs_, *mirror_act_);
  for (int s = 0; s < cfg_.streams; ++s) {
    envs_.push_back(factory_(s));
    if (envs_.back()->observation_dim() != params_.obs_dim() || envs_.back()->action_dim() != params_.act_dim()) {
      throw ShapeMismatch("policy and environment dimensions differ");
    }
  }
}

void PpoTrainer::set_params(PolicyParams p) {
  if (p.weights.size() != params_.weights.size()) adam_ = Adam(p.weights.size());
  params_ = std::move(p);
}

double PpoTrainer::control_rate() const { return envs_.front()->control_rate(); }

template <class F>
void PpoTrainer::parallel_for(int n, F&& f) {
  const int threads = std::min(cfg_.threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

RolloutBatch PpoTrainer::collect(const LessonRange& range, std::uint64_t seed_base, int steps) {
  const int streams = static_cast<int>(envs_.size());
  std::vector<StreamData> data(streams);
  const PolicyParams& snapshot = params_;

  parallel_for(streams, [&](int s) {
    const int quota = steps / streams + (s < steps % streams ? 1 : 0);
    StreamData& d = data[s];
    if (quota == 0) return;
    RolloutEnv& env = *envs_[s];
    std::mt19937_64 rng(mix_seed({seed_base, static_cast<std::uint64_t>(s), 0}));
    std::uint64_t episode = 0;
    Eigen::VectorXd obs = env.reset(range, mix_seed({seed_base, static_cast<std::uint64_t>(s), 1, episode++}));
    d.starts.push_back(0);
    for (int k = 0; k < quota; ++k) {
      ActionSample a = sample_action(snapshot, obs, rng);
      const double v = value(snapshot, obs);
      EnvTransition tr = env.step(a.action);
      d.obs.push_back(obs);
      d.act.push_back(std::move(a.action));
      d.logp.push_back(a.log_prob);
      d.rew.push_back(tr.reward);
      d.val.push_back(v);
      d.done.push_back(tr.done ? 1 : 0);
      if (tr.done) {
        d.bootstrap.push_back(0.0);
        d.reason.push_back(tr.reason);
        if (k + 1 < quota) {
          d.starts.push_back(k + 1);
          obs = env.reset(range, mix_seed({seed_base, static_cast<std::uint64_t>(s), 1, episode++}));
        }
      } else if (k + 1 == quota) {
        d.bootstrap.push_back(value(snapshot, tr.observation));
        d.reason.push_back(Termination::kNone);
      } else {
        obs = std::move(tr.observation);
      }
    }
  });

  RolloutBatch b;
  int total = 0;
  for (const auto& d : data) total += static_cast<int>(d.rew.size());
  if (total == 0) throw EmptyBatch("no steps collected");
  b.observations.resize(params_.obs_dim(), total);
  b.actions.resize(params_.act_dim(), total);
  b.log_prob_old.resize(total);
  b.rewards.resize(total);
  b.value_old.resize(total);
  b.done.reserve(total);
  int off = 0;
  for (const auto& d : data) {
    for (std::size_t i = 0; i < d.rew.size(); ++i) {
      const int c = off + static_cast<int>(i);
      b.observations.col(c) = d.obs[i];
      b.actions.col(c) = d.act[i];
      b.log_prob_old[c] = d.logp[i];
      b.rewards[c] = d.rew[i];
      b.value_old[c] = d.val[i];
      b.done.push_back(d.done[i]);
    }
    for (int st : d.starts) b.starts.push_back(off + st);
    b.bootstrap.insert(b.bootstrap.end(), d.bootstrap.begin(), d.bootstrap.end());
    b.end_reason.insert(b.end_reason.end(), d.reason.begin(), d.reason.end());
    off += static_cast<int>(d.rew.size());
  }
  b.starts.push_back(total);
  b.check();
  return b;
}

void PpoTrainer::warm_up(const LessonRange& range) {
  const RolloutBatch b = collect(range, mix_seed({cfg_.seed, kWarmupTag}), cfg_.normalizer_warmup);
  params_.normalizer.update(b.observations, mirror_obs_);
}

IterationResult PpoTrainer::train_iteration(const LessonRange& range) {
  const auto t0 = std::chrono::steady_clock::now();
  if (params_.normalizer.is_identity() && cfg_.normalizer_warmup > 0) warm_up(range);

  IterationResult res;
  const std::uint64_t it = static_cast<std::uint64_t>(iteration_);
  res.batch = collect(range, mix_seed({cfg_.seed, kCollectTag, it}), cfg_.batch_steps);
  const RolloutBatch& b = res.batch;

  const Advantages gae = compute_gae(b, cfg_.gamma, cfg_.lambda);
  const Eigen::VectorXd adv = normalize_advantages(gae.advantages);
  const double rms = std::sqrt(gae.targets.squaredNorm() / static_cast<double>(gae.targets.size()));
  params_.rescale_value(std::max(1.0, rms));

  const double lr =
      cfg_.learning_rate * std::max(cfg_.lr_floor, 1.0 - static_cast<double>(iteration_) / cfg_.lr_decay_iterations);
  const int n = b.size();
  const int chunks = std::max(1, (n + cfg_.minibatch - 1) / cfg_.minibatch);
  std::vector<int> perm(n);
  std::mt19937_64 rng(mix_seed({cfg_.seed, kShuffleTag, it}));

  double sum_ppo = 0.0, sum_sym = 0.0, sum_val = 0.0;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int c = 0; c < chunks; ++c) {
      const int lo = static_cast<int>(static_cast<long long>(n) * c / chunks);
      const int hi = static_cast<int>(static_cast<long long>(n) * (c + 1) / chunks);
      const int m = hi - lo;
      Minibatch mb;
      mb.obs.resize(b.observations.rows(), m);
      mb.actions.resize(b.actions.rows(), m);
      mb.log_prob_old.resize(m);
      mb.adv.resize(m);
      mb.targets.resize(m);
      for (int i = 0; i < m; ++i) {
        const int k = perm[lo + i];
        mb.obs.col(i) = b.observations.col(k);
        mb.actions.col(i) = b.actions.col(k);
        mb.log_prob_old[i] = b.log_prob_old[k];
        mb.adv[i] = adv[k];
        mb.targets[i] = gae.targets[k];
      }
      const ObjectiveTerms terms = objective(params_, mb, cfg_, mirror_obs_, mirror_act_);
      if (epoch == 0) {
        sum_ppo += terms.ppo * m;
        sum_sym += terms.sym * m;
        sum_val += terms.value * m;
      }
      Eigen::VectorXd g = terms.grad.flatten();
      if (!g.allFinite()) throw NumericalError("non-finite policy gradient");
      const double gn = g.norm();
      if (cfg_.max_grad_norm > 0.0 && gn > cfg_.max_grad_norm) g *= cfg_.max_grad_norm / gn;
      Eigen::VectorXd x = params_.weights.flatten();
      adam_.step(x, g, lr);
      params_.weights.unflatten(x);
      params_.clamp_log_std();
    }
  }
  params_.normalizer.update(b.observations, mirror_obs_);

  TrainStats& s = res.stats;
  s.iteration = iteration_ + 1;
  s.avg_return = avg_return(b);
  s.avg_len = avg_episode_length(b);
  s.l_ppo = sum_ppo / n;
  s.l_sym = sum_sym / n;
  s.value_loss = sum_val / n;
  s.lesson_norm = range.begin.norm();
  s.rollouts = b.rollouts();
  s.steps = n;
  ++iteration_;
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

double PpoTrainer::eval_return(const Lesson& x, int n, std::uint64_t seed_base) {
  if (n < 1) throw std::invalid_argument("eval_return needs at least one rollout");
  std::vector<double> returns(n, 0.0);
  const LessonRange range = LessonRange::constant(x);
  const PolicyParams& snapshot = params_;
  parallel_for(n, [&](int i) {
    std::unique_ptr<RolloutEnv> env = factory_(i);
    Eigen::VectorXd obs = env->reset(range, mix_seed({seed_base, static_cast<std::uint64_t>(i)}));
    // Environments end their own episodes; the cap only guards a broken one.
    for (int k = 0; k < 1000000; ++k) {
      EnvTransition tr = env->step(mean_action(snapshot, obs));
      returns[i] += tr.reward;
      if (tr.done) break;
      obs = std::move(tr.observation);
    }
  });
  return std::accumulate(returns.begin(), returns.end(), 0.0) / n;
}

}  // namespace gaitforge
