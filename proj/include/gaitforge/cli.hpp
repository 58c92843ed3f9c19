#pragma once

#include "gaitforge/curriculum.hpp"
#include "gaitforge/env.hpp"
#include "gaitforge/learner.hpp"
#include "gaitforge/policy.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

namespace gaitforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitMismatch = 1;  // replay found a divergence
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBudget = 3;
inline constexpr int kExitNumerical = 4;

inline constexpr const char* kManifestSchema = "gaitforge.run.v1";

/// Everything a run needs besides the character. config.json holds exactly this.
struct RunConfig {
  std::string preset = "biped-walk";
  CurriculumMode mode = CurriculumMode::kEnv;
  int checkpoint_every = 10;
  EnvConfig env;
  LearnerConfig learner;
  CurriculumConfig curriculum;
  PolicyInit policy;
};

/// Top-level keys: preset, curriculum_mode, checkpoint_every, env, learner,
/// curriculum, policy. A "preset" key resets the reward weights before the
/// sections are applied. The milestone constants (k%, period) may be given in
/// either the env or the curriculum section and are copied to the other; if
/// both give them they must agree. Throws ConfigError.
void apply_run_config_json(RunConfig& cfg, std::string_view doc);
std::string run_config_to_json(const RunConfig& cfg);
void validate(const RunConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);

/// Full command line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gaitforge::cli
