#pragma once

#include "gaitforge/learner.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace gftest {

// Largest relative disagreement between an analytic gradient and central
// differences over every parameter. Entries where both are below `floor`
// are compared in absolute terms.
inline double max_fd_error(const gaitforge::PolicyParams& p,
                           const std::function<gaitforge::LossGrad(const gaitforge::PolicyParams&)>& f,
                           double h = 1e-5, double floor = 1e-6) {
  const Eigen::VectorXd g = f(p).grad.flatten();
  const Eigen::VectorXd x0 = p.weights.flatten();
  gaitforge::PolicyParams q = p;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Eigen::VectorXd x = x0;
    x[i] = x0[i] + h;
    q.weights.unflatten(x);
    const double up = f(q).loss;
    x[i] = x0[i] - h;
    q.weights.unflatten(x);
    const double down = f(q).loss;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), floor}));
  }
  return worst;
}

struct GradCase {
  gaitforge::PolicyParams params;
  gaitforge::SignedPermutation mirror_obs, mirror_act;
  Eigen::MatrixXd obs, actions;
  Eigen::VectorXd log_prob_old, adv, targets;
};

// Random small policy and a batch whose ratios straddle the clip range.
inline GradCase random_grad_case(std::uint64_t seed, int batch = 32) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  auto mat = [&](int r, int c, double s) {
    Eigen::MatrixXd m(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = s * n(rng);
    return m;
  };
  GradCase c;
  gaitforge::PolicyInit init;
  init.hidden = {8, 6};
  init.output_gain = 1.0;
  c.params = gaitforge::PolicyParams::create(7, 4, seed, init);
  c.params.weights.log_std = mat(4, 1, 0.3);
  c.params.value_scale = 3.0;
  c.params.normalizer.update(mat(7, 20, 1.0), nullptr);
  c.mirror_obs = gaitforge::SignedPermutation({1, 0, 2, 4, 3, 6, 5}, {1, 1, -1, 1, 1, -1, -1});
  c.mirror_act = gaitforge::SignedPermutation({1, 0, 2, 3}, {1, 1, -1, 1});
  c.obs = mat(7, batch, 1.0);
  const Eigen::MatrixXd mu = gaitforge::mean_actions(c.params, c.obs);
  c.actions = mu + mat(4, batch, 0.5);
  c.log_prob_old = gaitforge::gaussian_log_prob(mu, c.params.weights.log_std, c.actions) + mat(batch, 1, 0.2);
  c.adv = mat(batch, 1, 1.0);
  c.targets = mat(batch, 1, 5.0);
  return c;
}

}  // namespace gftest
