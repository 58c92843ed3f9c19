#pragma once

#include "gaitforge/assistant.hpp"
#include "gaitforge/learner.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gaitforge {

struct CurriculumConfig {
  Lesson x0{2000.0, 2000.0};
  double eps_term = 5.0;
  double h_percent = 80.0;
  double l_percent = 60.0;
  double g_percent = 70.0;
  double k_percent = 25.0;
  double period = 3.0;  // s between milestones
  int eval_rollouts = 4;
  double coarse_resolution = 5.0;
  double fine_resolution = 0.5;
  double balance_threshold = 0.9;
  int plateau_window = 20;
  double plateau_tolerance = 0.02;
  /// Hard cap on each convergence phase.
  int plateau_max_iterations = 300;
  /// Total training iterations before BudgetExceeded; 0 means no cap.
  int max_iterations = 0;
};

void validate(const CurriculumConfig& cfg);
void apply_curriculum_config_json(CurriculumConfig& cfg, std::string_view doc);
std::string curriculum_config_to_json(const CurriculumConfig& cfg);

/// Per-iteration feedback a scheduler needs from the learner.
struct IterationOutcome {
  double avg_return = 0.0;
  std::vector<int> episode_steps;
  std::vector<bool> episode_complete;
  /// Nominal control steps per second (33 for the default env).
  int steps_per_second = 33;
  std::optional<TrainStats> stats;
};

class PolicyTrainer {
 public:
  virtual ~PolicyTrainer() = default;
  virtual IterationOutcome train_iteration(const LessonRange& range) = 0;
  /// Mean return of n deterministic rollouts at constant assistance x.
  virtual double eval_return(const Lesson& x, int n) = 0;
};

/// Adapts PpoTrainer; evaluation uses a fixed seed so repeated probes agree.
class PpoPolicyTrainer final : public PolicyTrainer {
 public:
  explicit PpoPolicyTrainer(PpoTrainer& trainer, std::uint64_t eval_seed = 0x4556414C);
  IterationOutcome train_iteration(const LessonRange& range) override;
  double eval_return(const Lesson& x, int n) override;
  PpoTrainer& trainer() { return trainer_; }

 private:
  PpoTrainer& trainer_;
  std::uint64_t eval_seed_;
};

IterationOutcome outcome_from_batch(const RolloutBatch& batch, int steps_per_second);

/// Fraction of rollouts lasting at least 2p seconds. Rollouts cut short by the
/// batch end only count once they have already lasted that long.
double balance_fraction(const IterationOutcome& o, double p);
bool balance_test(const IterationOutcome& o, double p, double threshold = 0.9);
bool balance_test(const RolloutBatch& batch, double p, double threshold = 0.9, int steps_per_second = 33);

struct LineSearchProbe {
  Lesson x;
  double ret = 0.0;
  bool admissible = false;
};

struct LessonUpdate {
  Lesson from;
  Lesson to;
  Eigen::Vector2d direction = Eigen::Vector2d::Zero();
  double alpha = 0.0;
  bool stalled = true;
  std::vector<LineSearchProbe> probes;
};

/// Five-direction line search. `eval` returns the evaluation return of a lesson.
LessonUpdate update_lesson(const Lesson& x, double r_bar, const std::function<double(const Lesson&)>& eval,
                           const CurriculumConfig& cfg);

struct TraceEntry {
  int iteration = 0;
  LessonRange lesson;
  double avg_return = 0.0;
  bool accepted = false;
};

struct CurriculumTrace {
  std::vector<TraceEntry> entries;
  std::vector<LessonUpdate> updates;  // accepted learner-centered updates, in order
  double r_bar = 0.0;
  bool success = false;
};

void write_trace_header(std::ostream& out);
void write_trace_row(std::ostream& out, const TraceEntry& e);
std::vector<TraceEntry> read_trace_csv(std::istream& in);

class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(const std::string& what, CurriculumTrace trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const CurriculumTrace& trace() const { return trace_; }

 private:
  CurriculumTrace trace_;
};

enum class CurriculumMode { kLearner, kEnv };
std::string_view to_string(CurriculumMode m);
CurriculumMode curriculum_mode_from_string(std::string_view s);

/// Everything needed to resume a scheduler after the last completed iteration.
struct SchedulerState {
  CurriculumMode mode = CurriculumMode::kEnv;
  std::string phase = "initial";  // initial, loop, final, done
  LessonRange lesson;
  double r_bar = 0.0;
  int iteration = 0;
  int phase_iterations = 0;
  double plateau_ref = 0.0;
  int plateau_since = 0;
  std::vector<double> recent_returns;
  int accepted = 0;

  std::string to_json() const;
  static SchedulerState from_json(std::string_view doc);
};

struct SchedulerHooks {
  /// Called after every training iteration with the state to resume from.
  std::function<void(const TraceEntry&, const IterationOutcome&, const SchedulerState&)> on_iteration;
};

CurriculumTrace run_learner_centered(PolicyTrainer& trainer, const CurriculumConfig& cfg,
                                     const SchedulerHooks& hooks = {},
                                     const std::optional<SchedulerState>& resume = std::nullopt,
                                     CurriculumTrace prior = {});
CurriculumTrace run_env_centered(PolicyTrainer& trainer, const CurriculumConfig& cfg,
                                 const SchedulerHooks& hooks = {},
                                 const std::optional<SchedulerState>& resume = std::nullopt,
                                 CurriculumTrace prior = {});

}  // namespace gaitforge
