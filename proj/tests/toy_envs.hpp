#pragma once

#include "gaitforge/learner.hpp"

#include <random>

namespace gftest {

// One-step episodes from a fixed observation; reward = -|a - a*|.
class BanditEnv final : public gaitforge::RolloutEnv {
 public:
  explicit BanditEnv(Eigen::VectorXd target) : target_(std::move(target)) {}
  int observation_dim() const override { return 2; }
  int action_dim() const override { return static_cast<int>(target_.size()); }
  Eigen::VectorXd reset(const gaitforge::LessonRange&, std::uint64_t) override { return obs(); }
  gaitforge::EnvTransition step(const Eigen::VectorXd& a) override {
    return {obs(), -(a - target_).norm(), true, gaitforge::Termination::kHorizon};
  }
  double control_rate() const override { return 1.0; }

 private:
  static Eigen::VectorXd obs() { return Eigen::Vector2d(1.0, -0.5); }
  Eigen::VectorXd target_;
};

// Random 2-D observation, one-step episodes; the optimal action is
// equivariant under swapping both coordinates.
class SwapBanditEnv final : public gaitforge::RolloutEnv {
 public:
  int observation_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  Eigen::VectorXd reset(const gaitforge::LessonRange&, std::uint64_t seed) override {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    s_ = Eigen::Vector2d(u(rng), u(rng));
    return s_;
  }
  gaitforge::EnvTransition step(const Eigen::VectorXd& a) override {
    const Eigen::Vector2d best(0.5 * s_[0] + 0.2 * s_[1], 0.5 * s_[1] + 0.2 * s_[0]);
    return {s_, -(a - best).norm(), true, gaitforge::Termination::kHorizon};
  }
  double control_rate() const override { return 1.0; }

  static gaitforge::SignedPermutation mirror() { return gaitforge::SignedPermutation({1, 0}, {1, 1}); }

 private:
  Eigen::Vector2d s_ = Eigen::Vector2d::Zero();
};

}  // namespace gftest
