#pragma once

#include "gaitforge/assistant.hpp"
#include "gaitforge/charmodel.hpp"
#include "gaitforge/env.hpp"
#include "gaitforge/policy.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitforge {

class EmptyBatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One rollout-stream step as seen by the learner.
struct EnvTransition {
  Eigen::VectorXd observation;  // after the step
  double reward = 0.0;
  bool done = false;
  Termination reason = Termination::kNone;
};

/// What the learner needs from an environment. The physics environment is one
/// implementation; tests plug in small analytic ones.
class RolloutEnv {
 public:
  virtual ~RolloutEnv() = default;
  virtual int observation_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual Eigen::VectorXd reset(const LessonRange& range, std::uint64_t seed) = 0;
  virtual EnvTransition step(const Eigen::VectorXd& action) = 0;
  /// Control steps per second, used to convert episode lengths to time.
  virtual double control_rate() const = 0;
};

/// Builds the environment for rollout stream `stream`.
using EnvFactory = std::function<std::unique_ptr<RolloutEnv>(int stream)>;

EnvFactory physics_env_factory(std::shared_ptr<const CharacterModel> model, EnvConfig cfg);

struct RolloutBatch {
  Eigen::MatrixXd observations;  // obs_dim x B
  Eigen::MatrixXd actions;       // act_dim x B (as sampled, before env clamping)
  Eigen::VectorXd log_prob_old;
  Eigen::VectorXd rewards;
  std::vector<std::uint8_t> done;
  Eigen::VectorXd value_old;
  /// Rollout r covers [starts[r], starts[r+1]); the last entry is B.
  std::vector<int> starts;
  /// Value of the state after a rollout cut short by the batch end; 0 when done.
  std::vector<double> bootstrap;
  std::vector<Termination> end_reason;  // kNone when cut by the batch end

  int size() const { return static_cast<int>(rewards.size()); }
  int rollouts() const { return starts.empty() ? 0 : static_cast<int>(starts.size()) - 1; }
  int rollout_length(int r) const { return starts[r + 1] - starts[r]; }
  bool rollout_complete(int r) const { return done[starts[r + 1] - 1] != 0; }
  void check() const;
};

struct LearnerConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double learning_rate = 3e-4;
  /// Linear decay to lr_floor * learning_rate over this many iterations.
  int lr_decay_iterations = 1000;
  double lr_floor = 0.1;
  int epochs = 10;
  int minibatch = 4096;
  double w_sym = 4.0;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;  // <= 0 disables
  int batch_steps = 20000;
  int streams = 8;
  int threads = 8;
  int normalizer_warmup = 2048;
  std::uint64_t seed = 1;
};

void validate(const LearnerConfig& cfg);
void apply_learner_config_json(LearnerConfig& cfg, std::string_view doc);
std::string learner_config_to_json(const LearnerConfig& cfg);

struct Advantages {
  Eigen::VectorXd advantages;  // raw
  Eigen::VectorXd targets;     // advantages + value_old
};
Advantages compute_gae(const RolloutBatch& batch, double gamma, double lambda);
/// Zero mean, unit (population) std. A constant vector maps to zeros.
Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& adv);

double avg_return(const RolloutBatch& batch);
double avg_episode_length(const RolloutBatch& batch);

/// Clipped surrogate on precomputed log-probabilities; `d_log_prob` receives dL/dlog_prob_new.
double ppo_surrogate(const Eigen::VectorXd& log_prob_new, const Eigen::VectorXd& log_prob_old,
                     const Eigen::VectorXd& adv, double clip, Eigen::VectorXd* d_log_prob = nullptr);

struct LossGrad {
  double loss = 0.0;
  ParamGradient grad;
};

LossGrad ppo_loss(const PolicyParams& p, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions,
                  const Eigen::VectorXd& log_prob_old, const Eigen::VectorXd& adv, double clip);
/// Mean over the batch of |mu(s) - Psi_a mu(Psi_o s)|^2.
LossGrad sym_loss(const PolicyParams& p, const Eigen::MatrixXd& obs, const SignedPermutation& mirror_obs,
                  const SignedPermutation& mirror_act);
/// Mean squared error against the targets, measured in units of value_scale.
LossGrad value_loss(const PolicyParams& p, const Eigen::MatrixXd& obs, const Eigen::VectorXd& targets);

struct Minibatch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;
  Eigen::VectorXd log_prob_old;
  Eigen::VectorXd adv;  // normalized
  Eigen::VectorXd targets;
};

struct ObjectiveTerms {
  double ppo = 0.0;
  double sym = 0.0;
  double value = 0.0;
  double total = 0.0;
  ParamGradient grad;
};
/// L_PPO + w_sym L_sym + value_coef L_V with a single backward pass. `mirror_*`
/// may be null when w_sym is 0.
ObjectiveTerms objective(const PolicyParams& p, const Minibatch& mb, const LearnerConfig& cfg,
                         const SignedPermutation* mirror_obs, const SignedPermutation* mirror_act);

class Adam {
 public:
  explicit Adam(Eigen::Index n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Eigen::VectorXd& x, const Eigen::VectorXd& grad, double lr);
  std::int64_t steps() const { return t_; }

 private:
  Eigen::VectorXd m_, v_;
  double b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

struct TrainStats {
  int iteration = 0;
  double avg_return = 0.0;
  double avg_len = 0.0;
  double l_ppo = 0.0;
  double l_sym = 0.0;
  double value_loss = 0.0;
  double lesson_norm = 0.0;
  double wall_time_s = 0.0;
  int rollouts = 0;
  int steps = 0;
};

/// Wall time is left out so that equal seeds give byte-identical files.
void write_stats_header(std::ostream& out);
void write_stats_row(std::ostream& out, const TrainStats& s);

struct IterationResult {
  TrainStats stats;
  RolloutBatch batch;
};

class PpoTrainer {
 public:
  /// `mirror_*` are required when cfg.w_sym > 0 and otherwise optional.
  PpoTrainer(PolicyParams params, LearnerConfig cfg, EnvFactory factory, const SignedPermutation* mirror_obs,
             const SignedPermutation* mirror_act);

  /// Collect cfg.batch_steps under `range`, then optimize.
  IterationResult train_iteration(const LessonRange& range);
  RolloutBatch collect(const LessonRange& range, std::uint64_t seed_base, int steps);

  /// Mean return of n full rollouts with mean actions under constant assistance.
  double eval_return(const Lesson& x, int n, std::uint64_t seed_base);

  const PolicyParams& params() const { return params_; }
  void set_params(PolicyParams p);
  const LearnerConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }
  void set_iteration(int it) { iteration_ = it; }
  double control_rate() const;

 private:
  void warm_up(const LessonRange& range);
  template <class F>
  void parallel_for(int n, F&& f);

  PolicyParams params_;
  LearnerConfig cfg_;
  EnvFactory factory_;
  std::vector<std::unique_ptr<RolloutEnv>> envs_;
  const SignedPermutation* mirror_obs_;
  const SignedPermutation* mirror_act_;
  Adam adam_;
  int iteration_ = 0;
};

/// Threads to use: GAITFORGE_THREADS if set to a positive integer, else `requested`.
int resolve_thread_count(int requested);

}  // namespace gaitforge
