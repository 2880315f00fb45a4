#pragma once

// Batched environment plumbing. A Task provides:
//   template <typename T> struct State;            physics state, scalar T
//   int obs_dim() / act_dim() / episode_len();
//   void reset(State<double>&, RngStream&) const;
//   template <typename T> std::vector<T> observe(const State<T>&) const;
//   template <typename T> T step(State<T>&, std::span<const T>) const;
//   bool terminated(const State<double>&) const;   early termination
//   template <typename To, typename From> static State<To> convert(...);
//   template <typename T, class F> static void visit(State<T>&, F&&);
// visit() enumerates every dynamic scalar in a fixed order; lift/lower are
// built on top of it.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "diffsim/rng.hpp"
#include "diffsim/tape.hpp"

namespace diffsim::env {

// clamped relative improvement NI{r} = clamp((r0 - r)/r0, -1, 1)
template <typename T>
T reward_normalized_improvement(const T& r, double r0) {
  if (r0 <= 0.0)
    throw std::invalid_argument("reward_normalized_improvement: r0 <= 0");
  return clamp((T(r0) - r) * T(1.0 / r0), -1.0, 1.0);
}

// (1/(1+d))^2 with a gradient-blocked tier multiplier
template <typename T>
T reward_distance_tiered(const T& d, double threshold, double low_mult,
                         double high_mult) {
  const T base = T(1.0) / ((T(1.0) + d) * (T(1.0) + d));
  return base * where(value_of(d) > threshold, T(low_mult), T(high_mult));
}

template <class Task>
typename Task::template State<Value> lift_state(
    Tape& tape, const typename Task::template State<double>& src) {
  auto out = Task::template convert<Value, double>(src);
  Task::visit(out, [&](Value& v) { v = tape.var(v.v); });
  return out;
}

template <class Task>
typename Task::template State<double> lower_state(
    const typename Task::template State<Value>& src) {
  return Task::template convert<double, Value>(src);
}

template <class Task>
class EnvBatch {
 public:
  using StateD = typename Task::template State<double>;

  EnvBatch(Task task, int n, std::uint64_t seed)
      : task_(std::move(task)), n_(n) {
    if (n < 1) throw std::invalid_argument("EnvBatch: need at least one env");
    reset(seed);
  }

  void reset(std::uint64_t seed) {
    states_.assign(n_, StateD{});
    streams_.clear();
    step_index_.assign(n_, 0);
    for (int i = 0; i < n_; ++i) {
      streams_.emplace_back(seed, static_cast<std::uint64_t>(i));
      task_.reset(states_[i], streams_[i]);
    }
  }

  // Plain double stepping with auto-reset; returns per-env rewards/dones.
  void step(const std::vector<std::vector<double>>& actions,
            std::vector<double>& rewards, std::vector<bool>& dones) {
    if (static_cast<int>(actions.size()) != n_)
      throw std::invalid_argument("EnvBatch::step: action batch size");
    rewards.assign(n_, 0.0);
    dones.assign(n_, false);
    for (int i = 0; i < n_; ++i) {
      rewards[i] = task_.step(states_[i], std::span<const double>(actions[i]));
      ++step_index_[i];
      dones[i] = step_index_[i] >= task_.episode_len() ||
                 task_.terminated(states_[i]);
      if (dones[i]) reset_env(i);
    }
  }

  // Replaces env i's state with a fresh rho_0 draw from its own stream.
  void reset_env(int i) {
    task_.reset(states_[i], streams_[i]);
    step_index_[i] = 0;
  }

  std::vector<double> observe(int i) const {
    return task_.observe(states_[i]);
  }

  Task& task() { return task_; }
  const Task& task() const { return task_; }
  int size() const { return n_; }
  StateD& state(int i) { return states_[i]; }
  const StateD& state(int i) const { return states_[i]; }
  RngStream& stream(int i) { return streams_[i]; }
  int& cursor(int i) { return step_index_[i]; }
  int cursor(int i) const { return step_index_[i]; }

 private:
  Task task_;
  int n_;
  std::vector<StateD> states_;
  std::vector<RngStream> streams_;
  std::vector<int> step_index_;
};

}  // namespace diffsim::env
