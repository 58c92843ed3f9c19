#pragma once

#include "gaitforge/charmodel.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

namespace gaitforge {

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Layer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

/// Fully connected network: tanh on hidden layers, linear output.
/// Batches are column-major: one sample per column.
struct Mlp {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().w.rows()); }

  /// If `acts` is given it receives the input followed by every layer output.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>* acts = nullptr) const;
  /// Accumulates parameter gradients into `grad` (same shape); returns d_input if requested.
  void backward(const std::vector<Eigen::MatrixXd>& acts, const Eigen::MatrixXd& d_out, Mlp& grad,
                Eigen::MatrixXd* d_input = nullptr) const;

  Mlp zeros_like() const;
};

/// The trainable parameters. Also used for gradients (ParamGradient).
struct PolicyWeights {
  Mlp mean;
  Eigen::VectorXd log_std;
  Mlp value;

  Eigen::Index size() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
  PolicyWeights zeros_like() const;
  bool all_finite() const;
};
using ParamGradient = PolicyWeights;

/// Running observation statistics. Every update also counts the mirrored
/// observation, so the statistics are invariant under the mirror map.
struct ObsNormalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 0.0;
  double clip = 10.0;

  static ObsNormalizer identity(int dim);
  void update(const Eigen::MatrixXd& batch, const SignedPermutation* mirror);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& obs) const;
  bool is_identity() const { return count == 0.0; }
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct PolicyInit {
  std::vector<int> hidden{64, 64, 64};
  double log_std = -0.7;
  double hidden_gain = 1.0;
  // A near-zero output layer starts with near-zero L_sym, which then only grows.
  double output_gain = 1.0;
};

struct PolicyParams {
  PolicyWeights weights;
  ObsNormalizer normalizer;
  /// value(s) = value_scale * value-net output; keeps regression targets O(1).
  double value_scale = 1.0;

  static PolicyParams create(int obs_dim, int act_dim, std::uint64_t seed, const PolicyInit& init = {});
  int obs_dim() const { return weights.mean.input_dim(); }
  int act_dim() const { return weights.mean.output_dim(); }
  void clamp_log_std();
  /// Changes value_scale while keeping value(s) unchanged for every s.
  void rescale_value(double new_scale);
};

Eigen::VectorXd mean_action(const PolicyParams& p, const Eigen::VectorXd& obs);
Eigen::MatrixXd mean_actions(const PolicyParams& p, const Eigen::MatrixXd& obs);

struct ActionSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};
ActionSample sample_action(const PolicyParams& p, const Eigen::VectorXd& obs, std::mt19937_64& rng);

/// Diagonal Gaussian log density of each column of `actions` given mean columns.
Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                  const Eigen::MatrixXd& actions);

struct LogProbGrad {
  Eigen::MatrixXd d_mean;     // act_dim x batch
  Eigen::MatrixXd d_log_std;  // act_dim x batch
};
/// Derivatives of each column's log density w.r.t. the mean and log_std.
LogProbGrad gaussian_log_prob_grad(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                   const Eigen::MatrixXd& actions);

double value(const PolicyParams& p, const Eigen::VectorXd& obs);
Eigen::VectorXd values(const PolicyParams& p, const Eigen::MatrixXd& obs);

/// Reverse-mode gradients of sum_j <d_mean_j, mean_j> + <d_log_std, log_std> + sum_j d_value_j * value_j.
/// Any of the upstream terms may be empty (treated as zero).
ParamGradient backward(const PolicyParams& p, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& d_mean,
                       const Eigen::VectorXd& d_log_std, const Eigen::VectorXd& d_value);

void save_checkpoint(const PolicyParams& p, const std::filesystem::path& path);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace gaitforge
