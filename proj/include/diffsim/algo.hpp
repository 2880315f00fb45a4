#pragma once
// First-order model-based policy optimization on differentiable rollouts:
// short-horizon backprop-through-time with a soft TD(lambda) critic target,
// a learned entropy temperature, and score-function / open-loop baselines.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "env.hpp"
#include "nets.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace diffsim::algo {

struct ReturnsConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  int horizon = 32;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw std::invalid_argument("ReturnsConfig: gamma out of (0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw std::invalid_argument("ReturnsConfig: lambda out of [0, 1]");
    if (horizon < 1) throw std::invalid_argument("ReturnsConfig: horizon < 1");
  }
};

// Maps a raw entropy estimate into roughly [0, 1] around the target.
template <typename T>
T normalize_entropy(const T& h, double target) {
  const double a = std::abs(target);
  if (a <= 0.0)
    throw std::invalid_argument("normalize_entropy: target must be nonzero");
  return (h + a) * (1.0 / (2.0 * a));
}

// One collected horizon for a batch of environments. Tape-connected scalars
// live alongside their detached copies; detach() drops the former once the
// actor update is done so later consumers cannot accidentally reuse the tape.
struct RolloutBuffer {
  int n_envs = 0;
  int horizon = 0;
  int n_critics = 0;
  bool detached = false;

  // tape-connected, indexed [t][env]; cleared by detach()
  std::vector<std::vector<Value>> reward;
  std::vector<std::vector<Value>> ent;                // normalized entropy
  std::vector<std::vector<Value>> terminal_value;     // [critic][env], V(s_H)

  // detached mirrors
  std::vector<std::vector<double>> reward_d;
  std::vector<std::vector<double>> ent_d;
  std::vector<std::vector<double>> raw_entropy;       // h = -log pi
  std::vector<std::vector<std::uint8_t>> done;
  std::vector<std::vector<std::vector<double>>> obs;  // [t][env], t = 0..H

  void detach() {
    reward.clear();
    ent.clear();
    terminal_value.clear();
    detached = true;
  }
};

namespace detail {

// Runs one environment step inside a recompute-on-backward tape segment.
// Segment inputs are the dynamic state scalars plus the action; outputs are
// the next state scalars and the reward.
template <class Task>
Value step_checkpointed(Tape& tape, const Task& task,
                        typename Task::template State<Value>& st,
                        const std::vector<Value>& action) {
  const auto shape = env::lower_state<Task>(st);
  std::vector<Value> inputs;
  Task::visit(st, [&](Value& v) { inputs.push_back(v); });
  const std::size_t n_state = inputs.size();
  inputs.insert(inputs.end(), action.begin(), action.end());
  auto outs = tape.checkpoint(
      [&task, shape, n_state](Tape&, std::span<const Value> in) {
        auto s = Task::template convert<Value, double>(shape);
        std::size_t i = 0;
        Task::visit(s, [&](Value& v) { v = in[i++]; });
        std::vector<Value> act(in.begin() + n_state, in.end());
        Value r = task.step(s, std::span<const Value>(act));
        std::vector<Value> out;
        Task::visit(s, [&](Value& v) { out.push_back(v); });
        out.push_back(r);
        return out;
      },
      inputs);
  std::size_t i = 0;
  Task::visit(st, [&](Value& v) { v = outs[i++]; });
  return outs.back();
}

inline Value critic_eval(const nets::MlpSpec& spec,
                         const std::vector<double>& params,
                         std::span<const Value> obs) {
  // constant-lift the parameters: value gradients flow into the observation
  // (i.e. the dynamics), never into the critic weights
  std::vector<Value> p(params.begin(), params.end());
  return nets::mlp_forward(spec, std::span<const Value>(p), obs)[0];
}

}  // namespace detail

// Rolls every environment forward `horizon` steps on the given tape, sampling
// actions from the policy (parameters passed as tape leaves). Environments
// that finish mid-horizon reset in place and keep collecting; gradient does
// not flow across the reset.
template <class Task>
RolloutBuffer collect_rollout(Tape& tape, env::EnvBatch<Task>& envs,
                              const nets::PolicySpec& pspec,
                              const std::vector<Value>& pparams,
                              const nets::MlpSpec& cspec,
                              const std::vector<std::vector<double>>& cparams,
                              int horizon, double entropy_target,
                              bool checkpoint_steps = true) {
  const Task& task = envs.task();
  const int n = envs.size();
  const int act_dim = task.act_dim();

  RolloutBuffer b;
  b.n_envs = n;
  b.horizon = horizon;
  b.n_critics = static_cast<int>(cparams.size());
  b.reward.assign(horizon, std::vector<Value>(n));
  b.ent.assign(horizon, std::vector<Value>(n));
  b.reward_d.assign(horizon, std::vector<double>(n, 0.0));
  b.ent_d.assign(horizon, std::vector<double>(n, 0.0));
  b.raw_entropy.assign(horizon, std::vector<double>(n, 0.0));
  b.done.assign(horizon, std::vector<std::uint8_t>(n, 0));
  b.obs.assign(horizon + 1, std::vector<std::vector<double>>(n));
  b.terminal_value.assign(cparams.size(), std::vector<Value>(n));

  std::vector<double> noise(act_dim);
  for (int i = 0; i < n; ++i) {
    auto st = env::lift_state<Task>(tape, envs.state(i));
    for (int t = 0; t < horizon; ++t) {
      auto obs_v = task.observe(st);
      auto& od = b.obs[t][i];
      od.resize(obs_v.size());
      for (std::size_t k = 0; k < obs_v.size(); ++k) od[k] = obs_v[k].v;

      for (int a = 0; a < act_dim; ++a) noise[a] = envs.stream(i).normal();
      auto samp = nets::policy_sample(pspec, std::span<const Value>(pparams),
                                      std::span<const Value>(obs_v),
                                      std::span<const double>(noise));
      Value r = checkpoint_steps
                    ? detail::step_checkpointed(tape, task, st, samp.action)
                    : task.step(st, std::span<const Value>(samp.action));
      ++envs.cursor(i);
      auto lowered = env::lower_state<Task>(st);
      const bool dn = envs.cursor(i) >= task.episode_len() ||
                      task.terminated(lowered);

      const Value h = -samp.log_prob;
      b.reward[t][i] = r;
      b.ent[t][i] = normalize_entropy(h, entropy_target);
      b.reward_d[t][i] = r.v;
      b.ent_d[t][i] = b.ent[t][i].v;
      b.raw_entropy[t][i] = h.v;
      b.done[t][i] = dn ? 1 : 0;

      if (dn) {
        envs.state(i) = lowered;
        envs.reset_env(i);
        st = env::lift_state<Task>(tape, envs.state(i));
      }
    }
    envs.state(i) = env::lower_state<Task>(st);
    auto obs_v = task.observe(st);
    auto& od = b.obs[horizon][i];
    od.resize(obs_v.size());
    for (std::size_t k = 0; k < obs_v.size(); ++k) od[k] = obs_v[k].v;
    for (std::size_t c = 0; c < cparams.size(); ++c)
      b.terminal_value[c][i] =
          detail::critic_eval(cspec, cparams[c], std::span<const Value>(obs_v));
  }
  return b;
}

enum class Bootstrap { kMeanCritic, kFirstCritic, kNone };

// loss = -(1/N) sum_i [ sum_t gamma^t (r_t + alpha hhat_t) + gamma^H V(s_H) ]
inline Value actor_objective(const RolloutBuffer& b, const ReturnsConfig& cfg,
                             double alpha, Bootstrap boot) {
  if (b.detached)
    throw std::invalid_argument("actor_objective: buffer was detached");
  if (boot != Bootstrap::kNone && b.n_critics == 0)
    throw std::invalid_argument("actor_objective: no critics in buffer");
  Value total(0.0);
  for (int i = 0; i < b.n_envs; ++i) {
    Value acc(0.0);
    double disc = 1.0;
    for (int t = 0; t < b.horizon; ++t) {
      Value step_r = b.reward[t][i];
      if (alpha != 0.0) step_r += Value(alpha) * b.ent[t][i];
      acc += Value(disc) * step_r;
      disc *= cfg.gamma;
    }
    if (boot == Bootstrap::kMeanCritic) {
      Value vbar(0.0);
      for (int c = 0; c < b.n_critics; ++c) vbar += b.terminal_value[c][i];
      acc += Value(disc / b.n_critics) * vbar;
    } else if (boot == Bootstrap::kFirstCritic) {
      acc += Value(disc) * b.terminal_value[0][i];
    }
    total += acc;
  }
  return Value(-1.0 / b.n_envs) * total;
}

inline Value actor_objective_sapo(const RolloutBuffer& b,
                                  const ReturnsConfig& cfg, double alpha) {
  return actor_objective(b, cfg, alpha, Bootstrap::kMeanCritic);
}

inline Value actor_objective_shac(const RolloutBuffer& b,
                                  const ReturnsConfig& cfg) {
  return actor_objective(b, cfg, 0.0, Bootstrap::kFirstCritic);
}

inline Value actor_objective_apg(const RolloutBuffer& b,
                                 const ReturnsConfig& cfg) {
  return actor_objective(b, cfg, 0.0, Bootstrap::kNone);
}

// Backward recursion for the soft TD(lambda) target given precomputed
// min-critic values vmin[t][i] for t = 0..H:
//   vt_t = (r_t + alpha hhat_t) + gamma ((1-lambda) vmin_{t+1} + lambda vt_{t+1})
// with the bootstrap dropped at episode boundaries.
inline std::vector<std::vector<double>> soft_td_lambda_from_values(
    const std::vector<std::vector<double>>& reward,
    const std::vector<std::vector<double>>& ent,
    const std::vector<std::vector<std::uint8_t>>& done,
    const std::vector<std::vector<double>>& vmin, double alpha, double gamma,
    double lambda) {
  const int horizon = static_cast<int>(reward.size());
  if (static_cast<int>(vmin.size()) != horizon + 1)
    throw std::invalid_argument("soft_td_lambda: need H+1 value rows");
  const int n = horizon > 0 ? static_cast<int>(reward[0].size()) : 0;
  std::vector<std::vector<double>> targets(horizon, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    double next = vmin[horizon][i];
    for (int t = horizon - 1; t >= 0; --t) {
      const double boot =
          done[t][i] ? 0.0
                     : gamma * ((1.0 - lambda) * vmin[t + 1][i] + lambda * next);
      targets[t][i] = reward[t][i] + alpha * ent[t][i] + boot;
      next = targets[t][i];
    }
  }
  return targets;
}

inline std::vector<std::vector<double>> soft_td_lambda_targets(
    const RolloutBuffer& b, const nets::MlpSpec& cspec,
    const std::vector<std::vector<double>>& cparams, double alpha,
    const ReturnsConfig& cfg) {
  if (cparams.empty())
    throw std::invalid_argument("soft_td_lambda_targets: no critics");
  std::vector<std::vector<double>> vmin(b.horizon + 1,
                                        std::vector<double>(b.n_envs));
  for (int t = 0; t <= b.horizon; ++t)
    for (int i = 0; i < b.n_envs; ++i) {
      double m = 0.0;
      for (std::size_t c = 0; c < cparams.size(); ++c) {
        const double v = nets::mlp_forward(
            cspec, std::span<const double>(cparams[c]),
            std::span<const double>(b.obs[t][i]))[0];
        m = (c == 0) ? v : std::min(m, v);
      }
      vmin[t][i] = m;
    }
  return soft_td_lambda_from_values(b.reward_d, b.ent_d, b.done, vmin, alpha,
                                    cfg.gamma, cfg.lambda);
}

// `passes` full-batch regression steps per critic; returns the mean squared
// error across critics at the last pass.
inline double critic_update(const nets::MlpSpec& cspec,
                            std::vector<std::vector<double>>& cparams,
                            std::vector<nets::AdamW>& opts,
                            const RolloutBuffer& b,
                            const std::vector<std::vector<double>>& targets,
                            int passes) {
  if (!b.detached)
    throw std::invalid_argument("critic_update: detach the buffer first");
  if (opts.size() != cparams.size())
    throw std::invalid_argument("critic_update: optimizer count mismatch");
  const double inv = 1.0 / (static_cast<double>(b.horizon) * b.n_envs);
  double last = 0.0;
  for (int k = 0; k < passes; ++k) {
    last = 0.0;
    for (std::size_t c = 0; c < cparams.size(); ++c) {
      Tape tape;
      auto leaves = nets::make_leaves(tape, cparams[c]);
      Value loss(0.0);
      for (int t = 0; t < b.horizon; ++t)
        for (int i = 0; i < b.n_envs; ++i) {
          std::vector<Value> o(b.obs[t][i].begin(), b.obs[t][i].end());
          const Value v = nets::mlp_forward(
              cspec, std::span<const Value>(leaves), std::span<const Value>(o))[0];
          const Value d = v - Value(targets[t][i]);
          loss += d * d;
        }
      loss = Value(inv) * loss;
      if (!std::isfinite(loss.v))
        throw std::runtime_error("critic_update: non-finite loss");
      tape.backward(loss);
      opts[c].step(cparams[c], nets::collect_grads(tape, leaves));
      last += loss.v;
    }
  }
  return cparams.empty() ? 0.0 : last / cparams.size();
}

// Learned entropy temperature, parameterized through log alpha so the
// coefficient stays positive. Loss: L(alpha) = mean alpha (h - target).
struct TemperatureState {
  double log_alpha = 0.0;
  double target = 0.0;
  nets::AdamW opt{};

  double alpha() const { return std::exp(log_alpha); }
};

inline double temperature_loss(const TemperatureState& ts,
                               const RolloutBuffer& b) {
  double gap = 0.0;
  for (const auto& row : b.raw_entropy)
    for (double h : row) gap += h - ts.target;
  gap /= static_cast<double>(b.horizon) * b.n_envs;
  return ts.alpha() * gap;
}

inline void temperature_update(TemperatureState& ts, const RolloutBuffer& b) {
  double gap = 0.0;
  for (const auto& row : b.raw_entropy)
    for (double h : row) gap += h - ts.target;
  gap /= static_cast<double>(b.horizon) * b.n_envs;
  // d/dlog(alpha) of alpha * gap
  std::vector<double> p{ts.log_alpha};
  ts.opt.step(p, {ts.alpha() * gap});
  ts.log_alpha = p[0];
}

struct GradEstimate {
  std::vector<double> grad;      // per-parameter mean
  std::vector<double> stderr_;   // per-parameter standard error of the mean
  double return_mean = 0.0;
  double return_stderr = 0.0;
};

namespace detail {

inline void finalize_estimate(GradEstimate& e, std::vector<double>& sum,
                              std::vector<double>& sumsq, double rsum,
                              double rsumsq, int n) {
  const std::size_t np = sum.size();
  e.grad.resize(np);
  e.stderr_.resize(np);
  for (std::size_t j = 0; j < np; ++j) {
    const double mean = sum[j] / n;
    e.grad[j] = mean;
    const double var = std::max(0.0, sumsq[j] / n - mean * mean);
    e.stderr_[j] = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  }
  e.return_mean = rsum / n;
  const double rvar = std::max(0.0, rsumsq / n - e.return_mean * e.return_mean);
  e.return_stderr = n > 1 ? std::sqrt(rvar / (n - 1)) : 0.0;
}

// Log-density of the squashed-Gaussian policy at a *fixed* pre-squash action
// u; unlike policy_sample the action does not move with the parameters, which
// is what the score-function estimator differentiates.
inline Value policy_log_prob_fixed(const nets::PolicySpec& pspec,
                                   std::span<const Value> params,
                                   std::span<const Value> obs,
                                   std::span<const double> u) {
  auto out = nets::mlp_forward(pspec.trunk, params, obs);
  Value logp(0.0);
  constexpr double kLogSqrt2Pi = 0.9189385332046727;
  for (int a = 0; a < pspec.act_dim; ++a) {
    const Value mu = out[a];
    const Value ls = clamp(out[pspec.act_dim + a], pspec.log_sigma_min,
                           pspec.log_sigma_max);
    const Value z = (Value(u[a]) - mu) * exp(-ls);
    logp += Value(-0.5) * z * z - ls - Value(kLogSqrt2Pi);
    // tanh volume correction: constant in the parameters
    const double x = -2.0 * u[a];
    const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x))
                                    : std::log1p(std::exp(x));
    logp -= 2.0 * (std::log(2.0) - u[a] - softplus);
  }
  return logp;
}

}  // namespace detail

// Score-function (zeroth-order) gradient of the expected undiscounted return:
//   g = E[ R(tau) * sum_t grad log pi(a_t | s_t) ]
template <class Task>
GradEstimate zobg_estimate(const Task& task, const nets::PolicySpec& pspec,
                           const std::vector<double>& pparams, int n_samples,
                           int horizon, std::uint64_t seed) {
  const std::size_t np = pparams.size();
  std::vector<double> sum(np, 0.0), sumsq(np, 0.0);
  double rsum = 0.0, rsumsq = 0.0;
  const int act_dim = task.act_dim();
  for (int s = 0; s < n_samples; ++s) {
    RngStream rng(seed, static_cast<std::uint64_t>(s));
    typename Task::template State<double> st;
    task.reset(st, rng);
    std::vector<std::vector<double>> obs_hist(horizon), u_hist(horizon);
    std::vector<double> noise(act_dim);
    double ret = 0.0;
    for (int t = 0; t < horizon; ++t) {
      obs_hist[t] = task.observe(st);
      for (int a = 0; a < act_dim; ++a) noise[a] = rng.normal();
      auto samp = nets::policy_sample(pspec, std::span<const double>(pparams),
                                      std::span<const double>(obs_hist[t]),
                                      std::span<const double>(noise));
      u_hist[t].resize(act_dim);
      for (int a = 0; a < act_dim; ++a)
        u_hist[t][a] = samp.mean[a] + std::exp(samp.log_sigma[a]) * noise[a];
      ret += task.step(st, std::span<const double>(samp.action));
    }
    Tape tape;
    auto leaves = nets::make_leaves(tape, pparams);
    Value logp(0.0);
    for (int t = 0; t < horizon; ++t) {
      std::vector<Value> o(obs_hist[t].begin(), obs_hist[t].end());
      logp += detail::policy_log_prob_fixed(pspec,
                                            std::span<const Value>(leaves),
                                            std::span<const Value>(o),
                                            std::span<const double>(u_hist[t]));
    }
    tape.backward(logp);
    for (std::size_t j = 0; j < np; ++j) {
      const double g = ret * tape.grad(leaves[j]);
      sum[j] += g;
      sumsq[j] += g * g;
    }
    rsum += ret;
    rsumsq += ret * ret;
  }
  GradEstimate e;
  detail::finalize_estimate(e, sum, sumsq, rsum, rsumsq, n_samples);
  return e;
}

// Pathwise (first-order) gradient of the same objective, reusing the
// reparameterized noise and differentiating through the dynamics.
template <class Task>
GradEstimate fobg_estimate(const Task& task, const nets::PolicySpec& pspec,
                           const std::vector<double>& pparams, int n_samples,
                           int horizon, std::uint64_t seed) {
  const std::size_t np = pparams.size();
  std::vector<double> sum(np, 0.0), sumsq(np, 0.0);
  double rsum = 0.0, rsumsq = 0.0;
  const int act_dim = task.act_dim();
  std::vector<double> noise(act_dim);
  for (int s = 0; s < n_samples; ++s) {
    RngStream rng(seed, static_cast<std::uint64_t>(s));
    typename Task::template State<double> sd;
    task.reset(sd, rng);
    Tape tape;
    auto leaves = nets::make_leaves(tape, pparams);
    auto st = env::lift_state<Task>(tape, sd);
    Value ret(0.0);
    for (int t = 0; t < horizon; ++t) {
      auto o = task.observe(st);
      for (int a = 0; a < act_dim; ++a) noise[a] = rng.normal();
      auto samp = nets::policy_sample(pspec, std::span<const Value>(leaves),
                                      std::span<const Value>(o),
                                      std::span<const double>(noise));
      ret += task.step(st, std::span<const Value>(samp.action));
    }
    tape.backward(ret);
    for (std::size_t j = 0; j < np; ++j) {
      const double g = tape.grad(leaves[j]);
      sum[j] += g;
      sumsq[j] += g * g;
    }
    rsum += ret.v;
    rsumsq += ret.v * ret.v;
  }
  GradEstimate e;
  detail::finalize_estimate(e, sum, sumsq, rsum, rsumsq, n_samples);
  return e;
}

struct TrajOptResult {
  std::vector<std::vector<double>> actions;  // [t][act_dim]
  double objective = 0.0;                    // final undiscounted return
};

// Open-loop trajectory optimization: zero-initialized action sequence,
// gradient ascent on the total reward from a fixed initial state.
template <class Task>
TrajOptResult trajopt_optimize(const Task& task, int horizon, int epochs,
                               double lr, std::uint64_t seed,
                               bool checkpoint_steps = false) {
  RngStream rng(seed, 0);
  typename Task::template State<double> init;
  task.reset(init, rng);
  const int act_dim = task.act_dim();
  std::vector<double> theta(static_cast<std::size_t>(horizon) * act_dim, 0.0);
  nets::AdamW opt;
  opt.lr = lr;
  for (int e = 0; e < epochs; ++e) {
    Tape tape;
    auto leaves = nets::make_leaves(tape, theta);
    auto st = env::lift_state<Task>(tape, init);
    Value ret(0.0);
    for (int t = 0; t < horizon; ++t) {
      std::vector<Value> act(leaves.begin() + static_cast<std::ptrdiff_t>(t) * act_dim,
                             leaves.begin() + static_cast<std::ptrdiff_t>(t + 1) * act_dim);
      ret += checkpoint_steps
                 ? detail::step_checkpointed(tape, task, st, act)
                 : task.step(st, std::span<const Value>(act));
    }
    tape.backward(ret);
    auto grads = nets::collect_grads(tape, leaves);
    for (double& g : grads) g = -g;  // ascent
    opt.step(theta, grads);
  }
  TrajOptResult res;
  res.actions.assign(horizon, std::vector<double>(act_dim));
  {
    auto st = init;
    double ret = 0.0;
    for (int t = 0; t < horizon; ++t) {
      for (int a = 0; a < act_dim; ++a)
        res.actions[t][a] = theta[static_cast<std::size_t>(t) * act_dim + a];
      ret += task.step(st, std::span<const double>(res.actions[t]));
    }
    res.objective = ret;
  }
  return res;
}

// Greedy (mean-action) policy evaluation; one full episode per seed stream.
template <class Task>
std::vector<double> evaluate_policy(const Task& task,
                                    const nets::PolicySpec& pspec,
                                    const std::vector<double>& pparams,
                                    int episodes, std::uint64_t seed) {
  std::vector<double> returns;
  returns.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    RngStream rng(seed, static_cast<std::uint64_t>(e));
    typename Task::template State<double> st;
    task.reset(st, rng);
    double ret = 0.0;
    for (int t = 0; t < task.episode_len(); ++t) {
      auto obs = task.observe(st);
      auto out = nets::mlp_forward(pspec.trunk, std::span<const double>(pparams),
                                   std::span<const double>(obs));
      std::vector<double> act(pspec.act_dim);
      for (int a = 0; a < pspec.act_dim; ++a) act[a] = std::tanh(out[a]);
      ret += task.step(st, std::span<const double>(act));
      if (task.terminated(st)) break;
    }
    returns.push_back(ret);
  }
  return returns;
}

enum class Algorithm { kSapo, kShac, kApg };

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "sapo") return Algorithm::kSapo;
  if (s == "shac") return Algorithm::kShac;
  if (s == "apg") return Algorithm::kApg;
  throw std::invalid_argument("unknown algorithm: " + s);
}

struct TrainConfig {
  Algorithm algorithm = Algorithm::kSapo;
  ReturnsConfig returns{};
  int n_envs = 16;
  int n_critics = 2;
  int critic_passes = 16;
  int total_iterations = 100;
  double actor_lr = 2e-3;
  double critic_lr = 5e-4;
  double alpha_lr = 5e-3;
  double init_alpha = 1.0;
  double beta1 = 0.7;
  double beta2 = 0.95;
  double clip_norm = 0.5;
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  bool checkpoint_steps = true;
  bool record_wall_time = false;  // keep the metrics stream reproducible

  void validate() const {
    returns.validate();
    if (n_envs < 1) throw std::invalid_argument("TrainConfig: n_envs < 1");
    if (n_critics < 1) throw std::invalid_argument("TrainConfig: n_critics < 1");
    if (critic_passes < 1)
      throw std::invalid_argument("TrainConfig: critic_passes < 1");
    if (total_iterations < 1)
      throw std::invalid_argument("TrainConfig: total_iterations < 1");
    if (init_alpha <= 0.0)
      throw std::invalid_argument("TrainConfig: init_alpha <= 0");
  }
};

struct IterationStats {
  int iteration = 0;
  long env_steps = 0;
  double return_mean = 0.0;
  double return_std = 0.0;
  double entropy_mean = 0.0;
  double alpha = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double seconds = 0.0;
};

template <class Task>
class Trainer {
 public:
  Trainer(Task task, TrainConfig cfg, std::uint64_t seed)
      : cfg_(cfg), envs_(std::move(task), cfg.n_envs, seed) {
    cfg_.validate();
    const Task& tk = envs_.task();
    pspec_ = nets::PolicySpec::make(tk.obs_dim(), cfg_.actor_hidden,
                                    tk.act_dim(), nets::Activation::kSiLU);
    cspec_.dims.push_back(tk.obs_dim());
    for (int h : cfg_.critic_hidden) cspec_.dims.push_back(h);
    cspec_.dims.push_back(1);
    cspec_.act = nets::Activation::kELU;

    RngStream init_rng(seed, 0x9e3779b97f4a7c15ull);
    pparams_.resize(nets::policy_param_count(pspec_));
    nets::policy_init(pspec_, init_rng, pparams_);

    const int nc = cfg_.algorithm == Algorithm::kApg
                       ? 0
                       : (cfg_.algorithm == Algorithm::kShac ? 1
                                                             : cfg_.n_critics);
    cparams_.assign(nc, std::vector<double>(nets::mlp_param_count(cspec_)));
    copts_.assign(nc, nets::AdamW{});
    for (auto& p : cparams_) nets::mlp_init(cspec_, init_rng, p, 1.0);

    actor_opt_.beta1 = cfg_.beta1;
    actor_opt_.beta2 = cfg_.beta2;
    actor_opt_.clip_norm = cfg_.clip_norm;
    for (auto& o : copts_) {
      o.beta1 = cfg_.beta1;
      o.beta2 = cfg_.beta2;
      o.clip_norm = cfg_.clip_norm;
    }
    temp_.log_alpha = std::log(cfg_.init_alpha);
    temp_.target = -tk.act_dim() / 2.0;
    temp_.opt.lr = cfg_.alpha_lr;
    temp_.opt.beta1 = cfg_.beta1;
    temp_.opt.beta2 = cfg_.beta2;
    ep_return_.assign(cfg_.n_envs, 0.0);
  }

  IterationStats train_iteration() {
    const auto t_start = std::chrono::steady_clock::now();
    // linear decay to zero over the run
    const double frac = std::max(
        0.0, 1.0 - static_cast<double>(iter_) / cfg_.total_iterations);
    actor_opt_.lr = cfg_.actor_lr * frac;
    for (auto& o : copts_) o.lr = cfg_.critic_lr * frac;

    Tape tape;
    auto pleaves = nets::make_leaves(tape, pparams_);
    auto buf = collect_rollout(tape, envs_, pspec_, pleaves, cspec_, cparams_,
                               cfg_.returns.horizon, temp_.target,
                               cfg_.checkpoint_steps);
    Value loss(0.0);
    switch (cfg_.algorithm) {
      case Algorithm::kSapo:
        loss = actor_objective_sapo(buf, cfg_.returns, temp_.alpha());
        break;
      case Algorithm::kShac:
        loss = actor_objective_shac(buf, cfg_.returns);
        break;
      case Algorithm::kApg:
        loss = actor_objective_apg(buf, cfg_.returns);
        break;
    }
    tape.backward(loss);
    actor_opt_.step(pparams_, nets::collect_grads(tape, pleaves));
    buf.detach();

    std::vector<double> completed;
    double ent_sum = 0.0;
    for (int t = 0; t < buf.horizon; ++t)
      for (int i = 0; i < buf.n_envs; ++i) {
        ep_return_[i] += buf.reward_d[t][i];
        if (buf.done[t][i]) {
          completed.push_back(ep_return_[i]);
          ep_return_[i] = 0.0;
        }
        ent_sum += buf.raw_entropy[t][i];
      }

    double alpha = 0.0;
    if (cfg_.algorithm == Algorithm::kSapo) {
      temperature_update(temp_, buf);
      alpha = temp_.alpha();
    }
    double closs = 0.0;
    if (!cparams_.empty()) {
      auto targets = soft_td_lambda_targets(buf, cspec_, cparams_, alpha,
                                            cfg_.returns);
      closs = critic_update(cspec_, cparams_, copts_, buf, targets,
                            cfg_.critic_passes);
    }

    IterationStats st;
    st.iteration = iter_;
    env_steps_ += static_cast<long>(cfg_.n_envs) * buf.horizon;
    st.env_steps = env_steps_;
    if (!completed.empty()) {
      double s = 0.0, s2 = 0.0;
      for (double r : completed) {
        s += r;
        s2 += r * r;
      }
      last_return_mean_ = s / completed.size();
      const double var =
          std::max(0.0, s2 / completed.size() -
                            last_return_mean_ * last_return_mean_);
      last_return_std_ = std::sqrt(var);
    }
    st.return_mean = last_return_mean_;
    st.return_std = last_return_std_;
    st.entropy_mean = ent_sum / (static_cast<double>(buf.horizon) * buf.n_envs);
    st.alpha = alpha;
    st.actor_loss = loss.v;
    st.critic_loss = closs;
    if (cfg_.record_wall_time) {
      st.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t_start)
                       .count();
    }
    ++iter_;
    return st;
  }

  const TrainConfig& config() const { return cfg_; }
  env::EnvBatch<Task>& envs() { return envs_; }
  const nets::PolicySpec& policy_spec() const { return pspec_; }
  const nets::MlpSpec& critic_spec() const { return cspec_; }
  std::vector<double>& policy_params() { return pparams_; }
  std::vector<std::vector<double>>& critic_params() { return cparams_; }
  nets::AdamW& actor_opt() { return actor_opt_; }
  std::vector<nets::AdamW>& critic_opts() { return copts_; }
  TemperatureState& temperature() { return temp_; }
  std::vector<double>& episode_returns() { return ep_return_; }
  int& iteration() { return iter_; }
  long& env_steps() { return env_steps_; }
  double& last_return_mean() { return last_return_mean_; }
  double& last_return_std() { return last_return_std_; }

 private:
  TrainConfig cfg_;
  env::EnvBatch<Task> envs_;
  nets::PolicySpec pspec_;
  nets::MlpSpec cspec_;
  std::vector<double> pparams_;
  std::vector<std::vector<double>> cparams_;
  nets::AdamW actor_opt_;
  std::vector<nets::AdamW> copts_;
  TemperatureState temp_;
  std::vector<double> ep_return_;
  double last_return_mean_ = 0.0;
  double last_return_std_ = 0.0;
  int iter_ = 0;
  long env_steps_ = 0;
};

}  // namespace diffsim::algo
