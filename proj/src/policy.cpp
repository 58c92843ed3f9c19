#include "gaitforge/policy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace gaitforge {

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>* acts) const {
  if (x.rows() != input_dim()) {
    throw ShapeMismatch("network input has " + std::to_string(x.rows()) + " rows, expected " +
                        std::to_string(input_dim()));
  }
  if (acts) {
    acts->clear();
    acts->push_back(x);
  }
  Eigen::MatrixXd a = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Eigen::MatrixXd z = layers[i].w * a;
    z.colwise() += layers[i].b;
    if (i + 1 < layers.size()) z = z.array().tanh().matrix();
    a = std::move(z);
    if (acts) acts->push_back(a);
  }
  return a;
}

void Mlp::backward(const std::vector<Eigen::MatrixXd>& acts, const Eigen::MatrixXd& d_out, Mlp& grad,
                   Eigen::MatrixXd* d_input) const {
  if (acts.size() != layers.size() + 1) throw ShapeMismatch("backward: activation cache does not match the network");
  if (d_out.rows() != output_dim() || d_out.cols() != acts.front().cols()) {
    throw ShapeMismatch("backward: upstream gradient shape mismatch");
  }
  Eigen::MatrixXd d = d_out;
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    grad.layers[i].w.noalias() += d * acts[i].transpose();
    grad.layers[i].b += d.rowwise().sum();
    if (i == 0 && !d_input) break;
    Eigen::MatrixXd prev = layers[i].w.transpose() * d;
    if (i > 0) prev.array() *= 1.0 - acts[i].array().square();
    d = std::move(prev);
  }
  if (d_input) *d_input = std::move(d);
}

Mlp Mlp::zeros_like() const {
  Mlp out;
  for (const Layer& l : layers) out.layers.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()),
                                                      Eigen::VectorXd::Zero(l.b.size())});
  return out;
}

namespace {

Eigen::Index mlp_size(const Mlp& m) {
  Eigen::Index n = 0;
  for (const Layer& l : m.layers) n += l.w.size() + l.b.size();
  return n;
}

// Row-major weights then bias, layer by layer.
void pack(const Mlp& m, Eigen::VectorXd& flat, Eigen::Index& k) {
  for (const Layer& l : m.layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) flat[k++] = l.w(r, c);
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) flat[k++] = l.b[r];
  }
}

void unpack(Mlp& m, const Eigen::VectorXd& flat, Eigen::Index& k) {
  for (Layer& l : m.layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = flat[k++];
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = flat[k++];
  }
}

bool mlp_finite(const Mlp& m) {
  return std::all_of(m.layers.begin(), m.layers.end(),
                     [](const Layer& l) { return l.w.allFinite() && l.b.allFinite(); });
}

Eigen::MatrixXd orthogonal(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (int c = 0; c < small; ++c) {
    for (int r = 0; r < big; ++r) g(r, c) = n(rng);
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int c = 0; c < small; ++c) {
    if (r(c, c) < 0.0) q.col(c) *= -1.0;
  }
  return gain * (rows >= cols ? q : Eigen::MatrixXd(q.transpose()));
}

Mlp make_mlp(int in, const std::vector<int>& hidden, int out, double hidden_gain, double output_gain,
             std::mt19937_64& rng) {
  Mlp m;
  int prev = in;
  for (int h : hidden) {
    m.layers.push_back({orthogonal(h, prev, hidden_gain, rng), Eigen::VectorXd::Zero(h)});
    prev = h;
  }
  m.layers.push_back({orthogonal(out, prev, output_gain, rng), Eigen::VectorXd::Zero(out)});
  return m;
}

}  // namespace

Eigen::Index PolicyWeights::size() const { return mlp_size(mean) + log_std.size() + mlp_size(value); }

Eigen::VectorXd PolicyWeights::flatten() const {
  Eigen::VectorXd flat(size());
  Eigen::Index k = 0;
  pack(mean, flat, k);
  flat.segment(k, log_std.size()) = log_std;
  k += log_std.size();
  pack(value, flat, k);
  return flat;
}

void PolicyWeights::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != size()) throw ShapeMismatch("unflatten: parameter vector has the wrong length");
  Eigen::Index k = 0;
  unpack(mean, flat, k);
  log_std = flat.segment(k, log_std.size());
  k += log_std.size();
  unpack(value, flat, k);
}

PolicyWeights PolicyWeights::zeros_like() const {
  return {mean.zeros_like(), Eigen::VectorXd::Zero(log_std.size()), value.zeros_like()};
}

bool PolicyWeights::all_finite() const { return mlp_finite(mean) && log_std.allFinite() && mlp_finite(value); }

ObsNormalizer ObsNormalizer::identity(int dim) {
  ObsNormalizer n;
  n.mean = Eigen::VectorXd::Zero(dim);
  n.var = Eigen::VectorXd::Ones(dim);
  return n;
}

void ObsNormalizer::update(const Eigen::MatrixXd& batch, const SignedPermutation* mirror) {
  if (batch.rows() != mean.size()) throw ShapeMismatch("normalizer update: observation dimension mismatch");
  if (batch.cols() == 0) return;
  Eigen::VectorXd bmean, bvar;
  double nb = static_cast<double>(batch.cols());
  if (mirror) {
    const Eigen::MatrixXd m = mirror->apply_columns(batch);
    bmean = 0.5 * (batch.rowwise().mean() + m.rowwise().mean());
    bvar = 0.5 * ((batch.colwise() - bmean).array().square().rowwise().mean() +
                  (m.colwise() - bmean).array().square().rowwise().mean())
                     .matrix();
    nb *= 2.0;
  } else {
    bmean = batch.rowwise().mean();
    bvar = (batch.colwise() - bmean).array().square().rowwise().mean().matrix();
  }
  const double total = count + nb;
  const Eigen::VectorXd delta = bmean - mean;
  const Eigen::VectorXd m2 = var * count + bvar * nb + delta.cwiseAbs2() * (count * nb / total);
  mean += delta * (nb / total);
  var = m2 / total;
  count = total;
}

Eigen::MatrixXd ObsNormalizer::apply(const Eigen::MatrixXd& obs) const {
  if (obs.rows() != mean.size()) throw ShapeMismatch("normalizer: observation dimension mismatch");
  if (is_identity()) return obs;
  const Eigen::ArrayXd inv_std = (var.array() + 1e-8).rsqrt();
  Eigen::MatrixXd out = ((obs.colwise() - mean).array().colwise() * inv_std).matrix();
  return out.cwiseMax(-clip).cwiseMin(clip);
}

PolicyParams PolicyParams::create(int obs_dim, int act_dim, std::uint64_t seed, const PolicyInit& init) {
  std::mt19937_64 rng(seed);
  PolicyParams p;
  p.weights.mean = make_mlp(obs_dim, init.hidden, act_dim, init.hidden_gain, init.output_gain, rng);
  p.weights.log_std = Eigen::VectorXd::Constant(act_dim, init.log_std);
  p.weights.value = make_mlp(obs_dim, init.hidden, 1, init.hidden_gain, 1.0, rng);
  p.normalizer = ObsNormalizer::identity(obs_dim);
  p.clamp_log_std();
  return p;
}

void PolicyParams::clamp_log_std() { weights.log_std = weights.log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

void PolicyParams::rescale_value(double new_scale) {
  if (!(new_scale > 0.0) || !std::isfinite(new_scale)) throw std::invalid_argument("value scale must be positive");
  Layer& last = weights.value.layers.back();
  const double f = value_scale / new_scale;
  last.w *= f;
  last.b *= f;
  value_scale = new_scale;
}

Eigen::MatrixXd mean_actions(const PolicyParams& p, const Eigen::MatrixXd& obs) {
  return p.weights.mean.forward(p.normalizer.apply(obs));
}

Eigen::VectorXd mean_action(const PolicyParams& p, const Eigen::VectorXd& obs) { return mean_actions(p, obs); }

ActionSample sample_action(const PolicyParams& p, const Eigen::VectorXd& obs, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::VectorXd mu = mean_action(p, obs);
  ActionSample out;
  out.action.resize(mu.size());
  double sq = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double eps = n(rng);
    sq += eps * eps;
    out.action[i] = mu[i] + std::exp(p.weights.log_std[i]) * eps;
  }
  out.log_prob = -0.5 * sq - p.weights.log_std.sum() -
                 0.5 * static_cast<double>(mu.size()) * std::log(2.0 * std::numbers::pi);
  return out;
}

Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                  const Eigen::MatrixXd& actions) {
  if (mean.rows() != log_std.size() || actions.rows() != mean.rows() || actions.cols() != mean.cols()) {
    throw ShapeMismatch("gaussian_log_prob: shape mismatch");
  }
  const Eigen::ArrayXd inv_std = (-log_std.array()).exp();
  const Eigen::ArrayXXd z = (actions - mean).array().colwise() * inv_std;
  const double c = -log_std.sum() - 0.5 * static_cast<double>(mean.rows()) * std::log(2.0 * std::numbers::pi);
  return (-0.5 * z.square().colwise().sum()).matrix().transpose().array() + c;
}

LogProbGrad gaussian_log_prob_grad(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                   const Eigen::MatrixXd& actions) {
  if (mean.rows() != log_std.size() || actions.rows() != mean.rows() || actions.cols() != mean.cols()) {
    throw ShapeMismatch("gaussian_log_prob_grad: shape mismatch");
  }
  const Eigen::ArrayXd inv_std = (-log_std.array()).exp();
  const Eigen::ArrayXXd z = (actions - mean).array().colwise() * inv_std;
  LogProbGrad g;
  g.d_mean = (z.colwise() * inv_std).matrix();
  g.d_log_std = (z.square() - 1.0).matrix();
  return g;
}

Eigen::VectorXd values(const PolicyParams& p, const Eigen::MatrixXd& obs) {
  return p.value_scale * p.weights.value.forward(p.normalizer.apply(obs)).row(0).transpose();
}

double value(const PolicyParams& p, const Eigen::VectorXd& obs) { return values(p, obs)[0]; }

ParamGradient backward(const PolicyParams& p, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& d_mean,
                       const Eigen::VectorXd& d_log_std, const Eigen::VectorXd& d_value) {
  ParamGradient g = p.weights.zeros_like();
  const Eigen::MatrixXd x = p.normalizer.apply(obs);
  std::vector<Eigen::MatrixXd> acts;
  if (d_mean.size() > 0) {
    if (d_mean.rows() != p.act_dim() || d_mean.cols() != obs.cols()) {
      throw ShapeMismatch("backward: d_mean must be act_dim x batch");
    }
    p.weights.mean.forward(x, &acts);
    p.weights.mean.backward(acts, d_mean, g.mean);
  }
  if (d_log_std.size() > 0) {
    if (d_log_std.size() != p.act_dim()) throw ShapeMismatch("backward: d_log_std must have act_dim entries");
    g.log_std = d_log_std;
  }
  if (d_value.size() > 0) {
    if (d_value.size() != obs.cols()) throw ShapeMismatch("backward: d_value must have one entry per sample");
    p.weights.value.forward(x, &acts);
    p.weights.value.backward(acts, p.value_scale * d_value.transpose(), g.value);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint: "GFPK1", then little-endian u32 shapes and f64 arrays.

namespace {

constexpr char kMagic[5] = {'G', 'F', 'P', 'K', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, sizeof(T));
}

void put_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
T get(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw CheckpointError("checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get<std::uint64_t>(in)); }

void put_mlp(std::ostream& out, const Mlp& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.layers.size()));
  for (const Layer& l : m.layers) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.w.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.w.cols()));
  }
  for (const Layer& l : m.layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) put_f64(out, l.w(r, c));
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) put_f64(out, l.b[r]);
  }
}

Mlp get_mlp(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n == 0 || n > 64) throw CheckpointError("checkpoint: implausible layer count");
  Mlp m;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto rows = get<std::uint32_t>(in), cols = get<std::uint32_t>(in);
    if (rows == 0 || cols == 0 || rows > 1u << 16 || cols > 1u << 16) {
      throw CheckpointError("checkpoint: implausible layer shape");
    }
    if (i > 0 && cols != m.layers.back().w.rows()) throw CheckpointError("checkpoint: inconsistent layer shapes");
    m.layers.push_back({Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)});
  }
  for (Layer& l : m.layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = get_f64(in);
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = get_f64(in);
  }
  return m;
}

}  // namespace

void save_checkpoint(const PolicyParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(p.obs_dim()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(p.act_dim()));
  put_mlp(out, p.weights.mean);
  for (Eigen::Index i = 0; i < p.weights.log_std.size(); ++i) put_f64(out, p.weights.log_std[i]);
  put_mlp(out, p.weights.value);
  put_f64(out, p.normalizer.count);
  put_f64(out, p.normalizer.clip);
  for (Eigen::Index i = 0; i < p.normalizer.mean.size(); ++i) put_f64(out, p.normalizer.mean[i]);
  for (Eigen::Index i = 0; i < p.normalizer.var.size(); ++i) put_f64(out, p.normalizer.var[i]);
  put_f64(out, p.value_scale);
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[5];
  if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
    throw CheckpointError("not a GFPK1 checkpoint: " + path.string());
  }
  const auto obs_dim = static_cast<int>(get<std::uint32_t>(in));
  const auto act_dim = static_cast<int>(get<std::uint32_t>(in));
  PolicyParams p;
  p.weights.mean = get_mlp(in);
  if (p.weights.mean.input_dim() != obs_dim || p.weights.mean.output_dim() != act_dim) {
    throw CheckpointError("checkpoint: policy network shape does not match the header");
  }
  p.weights.log_std.resize(act_dim);
  for (int i = 0; i < act_dim; ++i) p.weights.log_std[i] = get_f64(in);
  p.weights.value = get_mlp(in);
  if (p.weights.value.input_dim() != obs_dim || p.weights.value.output_dim() != 1) {
    throw CheckpointError("checkpoint: value network shape does not match the header");
  }
  p.normalizer.count = get_f64(in);
  p.normalizer.clip = get_f64(in);
  p.normalizer.mean.resize(obs_dim);
  p.normalizer.var.resize(obs_dim);
  for (int i = 0; i < obs_dim; ++i) p.normalizer.mean[i] = get_f64(in);
  for (int i = 0; i < obs_dim; ++i) p.normalizer.var[i] = get_f64(in);
  p.value_scale = get_f64(in);
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes");
  return p;
}

}  // namespace gaitforge
