#pragma once

// Minimal network stack: LayerNorm MLPs (SiLU/ELU), a squashed-Gaussian
// policy head, a permutation-invariant point-cloud encoder, and AdamW with
// global-norm gradient clipping.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffsim/rng.hpp"
#include "diffsim/tape.hpp"

namespace diffsim::nets {

enum class Activation { kSiLU, kELU };

template <typename T>
T silu(const T& x) {
  return x / (T(1.0) + exp(-x));
}

template <typename T>
T elu(const T& x) {
  return where(value_of(x) > 0.0, x, exp(min(x, T(0.0))) - T(1.0));
}

template <typename T>
T softplus(const T& x) {
  // max(x, 0) + log1p(exp(-|x|)), overflow-safe
  return max(x, T(0.0)) + log(T(1.0) + exp(-abs(x)));
}

struct MlpSpec {
  std::vector<int> dims;  // input, hidden..., output
  Activation act = Activation::kSiLU;
  bool layer_norm = true;

  int layer_count() const { return static_cast<int>(dims.size()) - 1; }
  bool is_hidden(int layer) const { return layer < layer_count() - 1; }
};

inline int mlp_param_count(const MlpSpec& spec) {
  int n = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    n += spec.dims[l + 1] * spec.dims[l] + spec.dims[l + 1];
    if (spec.is_hidden(l) && spec.layer_norm) n += 2 * spec.dims[l + 1];
  }
  return n;
}

namespace detail {

// Orthogonal weight init (QR of a Gaussian matrix, sign-fixed), zero bias.
inline void orthogonal_fill(RngStream& rng, double gain, int rows, int cols,
                            double* w) {
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  Eigen::MatrixXd m = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) w[i * cols + j] = gain * m(i, j);
}

}  // namespace detail

// final_gain scales the last layer (0.01 keeps initial policy outputs small)
inline void mlp_init(const MlpSpec& spec, RngStream& rng,
                     std::span<double> params, double final_gain = 1.0) {
  if (static_cast<int>(params.size()) != mlp_param_count(spec))
    throw std::invalid_argument("mlp_init: parameter size mismatch");
  std::size_t off = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int rows = spec.dims[l + 1], cols = spec.dims[l];
    const double gain = spec.is_hidden(l) ? 1.0 : final_gain;
    detail::orthogonal_fill(rng, gain, rows, cols, params.data() + off);
    off += static_cast<std::size_t>(rows) * cols;
    for (int i = 0; i < rows; ++i) params[off + i] = 0.0;  // bias
    off += rows;
    if (spec.is_hidden(l) && spec.layer_norm) {
      for (int i = 0; i < rows; ++i) params[off + i] = 1.0;  // gamma
      off += rows;
      for (int i = 0; i < rows; ++i) params[off + i] = 0.0;  // beta
      off += rows;
    }
  }
}

template <typename T>
std::vector<T> mlp_forward(const MlpSpec& spec, std::span<const T> params,
                           std::span<const T> input) {
  if (static_cast<int>(input.size()) != spec.dims[0])
    throw std::invalid_argument("mlp_forward: input dim mismatch");
  if (static_cast<int>(params.size()) != mlp_param_count(spec))
    throw std::invalid_argument("mlp_forward: parameter size mismatch");
  std::vector<T> h(input.begin(), input.end());
  std::size_t off = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int rows = spec.dims[l + 1], cols = spec.dims[l];
    std::vector<T> z(rows, T(0.0));
    for (int i = 0; i < rows; ++i) {
      T acc = params[off + static_cast<std::size_t>(rows) * cols + i];  // bias
      for (int j = 0; j < cols; ++j)
        acc += params[off + static_cast<std::size_t>(i) * cols + j] * h[j];
      z[i] = acc;
    }
    off += static_cast<std::size_t>(rows) * cols + rows;
    if (spec.is_hidden(l)) {
      if (spec.layer_norm) {
        T mean(0.0);
        for (const T& zi : z) mean += zi;
        mean = mean * T(1.0 / rows);
        T var(0.0);
        for (const T& zi : z) var += (zi - mean) * (zi - mean);
        var = var * T(1.0 / rows);
        const T inv_std = T(1.0) / sqrt(var + T(1e-5));
        for (int i = 0; i < rows; ++i)
          z[i] = (z[i] - mean) * inv_std * params[off + i] +
                 params[off + rows + i];
        off += 2 * static_cast<std::size_t>(rows);
      }
      for (int i = 0; i < rows; ++i)
        z[i] = spec.act == Activation::kSiLU ? silu(z[i]) : elu(z[i]);
    }
    h = std::move(z);
  }
  return h;
}

// ---- squashed Gaussian policy ----

struct PolicySpec {
  MlpSpec trunk;  // dims: obs..., 2*act_dim (mean then log-sigma)
  int act_dim = 0;
  double log_sigma_min = -5.0;
  double log_sigma_max = 2.0;

  static PolicySpec make(int obs_dim, std::vector<int> hidden, int act_dim,
                         Activation act = Activation::kSiLU) {
    PolicySpec spec;
    spec.trunk.dims.push_back(obs_dim);
    for (int h : hidden) spec.trunk.dims.push_back(h);
    spec.trunk.dims.push_back(2 * act_dim);
    spec.trunk.act = act;
    spec.act_dim = act_dim;
    return spec;
  }
};

inline int policy_param_count(const PolicySpec& spec) {
  return mlp_param_count(spec.trunk);
}

inline void policy_init(const PolicySpec& spec, RngStream& rng,
                        std::span<double> params) {
  mlp_init(spec.trunk, rng, params, 0.01);
}

template <typename T>
struct PolicySample {
  std::vector<T> action;    // strictly inside (-1, 1)
  T log_prob;
  std::vector<T> mean;      // pre-squash
  std::vector<T> log_sigma;
};

template <typename T>
PolicySample<T> policy_sample(const PolicySpec& spec,
                              std::span<const T> params,
                              std::span<const T> obs,
                              std::span<const double> noise) {
  if (static_cast<int>(noise.size()) != spec.act_dim)
    throw std::invalid_argument("policy_sample: noise dim mismatch");
  auto out = mlp_forward(spec.trunk, params, obs);
  PolicySample<T> s;
  s.log_prob = T(0.0);
  constexpr double kLogSqrt2Pi = 0.9189385332046727;
  for (int a = 0; a < spec.act_dim; ++a) {
    const T mu = out[a];
    const T ls = clamp(out[spec.act_dim + a], spec.log_sigma_min,
                       spec.log_sigma_max);
    const T sigma = exp(ls);
    const T u = mu + sigma * T(noise[a]);
    const T act = tanh(u);
    // Gaussian log-density of u plus the stable tanh correction
    // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    s.log_prob += T(-0.5 * noise[a] * noise[a] - kLogSqrt2Pi) - ls;
    s.log_prob -= T(2.0) * (T(std::log(2.0)) - u - softplus(T(-2.0) * u));
    s.action.push_back(act);
    s.mean.push_back(mu);
    s.log_sigma.push_back(ls);
  }
  return s;
}

// single-sample entropy estimate h = -log pi(a|s)
template <typename T>
T policy_entropy_sample(const T& log_prob) {
  return -log_prob;
}

// ---- permutation-invariant point encoder ----

struct PointEncoderSpec {
  MlpSpec per_point;  // dims: 3, hidden..., feat
  int embed_dim = 0;

  static PointEncoderSpec make(std::vector<int> hidden, int feat,
                               int embed_dim,
                               Activation act = Activation::kSiLU) {
    PointEncoderSpec spec;
    spec.per_point.dims.push_back(3);
    for (int h : hidden) spec.per_point.dims.push_back(h);
    spec.per_point.dims.push_back(feat);
    spec.per_point.act = act;
    spec.embed_dim = embed_dim;
    return spec;
  }
  int feat_dim() const { return per_point.dims.back(); }
};

inline int point_encoder_param_count(const PointEncoderSpec& spec) {
  return mlp_param_count(spec.per_point) +
         spec.embed_dim * spec.feat_dim() + spec.embed_dim;
}

inline void point_encoder_init(const PointEncoderSpec& spec, RngStream& rng,
                               std::span<double> params) {
  const int n_mlp = mlp_param_count(spec.per_point);
  mlp_init(spec.per_point, rng, params.subspan(0, n_mlp));
  detail::orthogonal_fill(rng, 1.0, spec.embed_dim, spec.feat_dim(),
                          params.data() + n_mlp);
  for (int i = 0; i < spec.embed_dim; ++i)
    params[n_mlp + spec.embed_dim * spec.feat_dim() + i] = 0.0;
}

// per-point MLP -> coordinate-wise max-pool -> linear projection
template <typename T>
std::vector<T> point_encode(const PointEncoderSpec& spec,
                            std::span<const T> params,
                            std::span<const T> cloud /* K*3 flat */) {
  if (cloud.size() % 3 != 0 || cloud.empty())
    throw std::invalid_argument("point_encode: cloud must be K*3");
  const std::size_t k = cloud.size() / 3;
  const int n_mlp = mlp_param_count(spec.per_point);
  const int feat = spec.feat_dim();
  std::vector<T> pooled;
  for (std::size_t p = 0; p < k; ++p) {
    auto f = mlp_forward(spec.per_point, params.subspan(0, n_mlp),
                         cloud.subspan(3 * p, 3));
    if (p == 0) {
      pooled = std::move(f);
    } else {
      for (int i = 0; i < feat; ++i) pooled[i] = max(pooled[i], f[i]);
    }
  }
  std::vector<T> out(spec.embed_dim, T(0.0));
  const std::size_t woff = n_mlp;
  const std::size_t boff = woff + static_cast<std::size_t>(spec.embed_dim) * feat;
  for (int i = 0; i < spec.embed_dim; ++i) {
    T acc = params[boff + i];
    for (int j = 0; j < feat; ++j)
      acc += params[woff + static_cast<std::size_t>(i) * feat + j] * pooled[j];
    out[i] = acc;
  }
  return out;
}

// ---- optimizer ----

struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.7;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.5;

  std::vector<double> m, v;
  long step_count = 0;

  // returns false when the step was skipped (non-finite gradients)
  bool step(std::vector<double>& params, std::vector<double> grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("AdamW::step: size mismatch");
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    double norm2 = 0.0;
    bool finite = true;
    for (double g : grads) {
      if (!std::isfinite(g)) finite = false;
      norm2 += g * g;
    }
    if (!finite || !std::isfinite(norm2)) {
      std::cerr << "AdamW: non-finite gradient, step skipped\n";
      return false;
    }
    const double norm = std::sqrt(norm2);
    if (clip_norm > 0.0 && norm > clip_norm) {
      const double s = clip_norm / norm;
      for (double& g : grads) g *= s;
    }
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, step_count);
    const double bc2 = 1.0 - std::pow(beta2, step_count);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[i] -= lr * (mhat / (std::sqrt(vhat) + eps) +
                         weight_decay * params[i]);
    }
    return true;
  }
};

// lift a master parameter vector onto a tape as differentiable leaves
inline std::vector<Value> make_leaves(Tape& tape,
                                      const std::vector<double>& params) {
  std::vector<Value> out;
  out.reserve(params.size());
  for (double p : params) out.push_back(tape.var(p));
  return out;
}

inline std::vector<double> collect_grads(const Tape& tape,
                                         const std::vector<Value>& leaves) {
  std::vector<double> out;
  out.reserve(leaves.size());
  for (const auto& l : leaves) out.push_back(tape.grad(l));
  return out;
}

}  // namespace diffsim::nets
