#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <utility>
#include <vector>

#include "gflow/env.hpp"
#include "gflow/policy.hpp"

namespace gflow {

/// Complete trajectory s0 -> ... -> x -> sf with per-edge log-probability
/// caches. `log_pb` holds pi_B(s_{t+1}, a_t) for every non-terminal edge and
/// 0 for the final edge into the sink.
struct Trajectory {
  std::vector<State> states;
  std::vector<int> actions;
  std::vector<double> log_pf;
  std::vector<double> log_pb;
  double log_reward = 0.0;

  int length() const { return static_cast<int>(actions.size()); }
  const State& terminal() const { return states[states.size() - 2]; }
};

using Batch = std::vector<Trajectory>;

/// Uniform mix-in factor gamma^iter.
struct MixtureSchedule {
  double gamma = 0.99;
  double epsilon(long iteration) const { return std::pow(gamma, static_cast<double>(iteration)); }
};

/// On-policy rollouts, advanced in lockstep so each step is one batched
/// policy evaluation. The log_pb cache is filled when `backward` is given.
Batch sample_forward(const Environment& env, const ForwardPolicy& forward, int n, Rng& rng,
                     const BackwardPolicy* backward = nullptr);

/// Each step draws from (1 - eps) pi_F + eps Uniform; caches keep pi_F.
Batch sample_mixture(const Environment& env, const ForwardPolicy& forward, double epsilon, int n,
                     Rng& rng, const BackwardPolicy* backward = nullptr);

/// Rollouts from each x back to s0 under pi_B, returned in forward order.
/// The log_pf cache is filled when `forward` is given.
Batch sample_backward(const Environment& env, const BackwardPolicy& backward,
                      const std::vector<State>& terminals, Rng& rng,
                      const ForwardPolicy* forward = nullptr);

Trajectory sample_backward_given_x(const Environment& env, const BackwardPolicy& backward,
                                   const State& x, Rng& rng, const ForwardPolicy* forward = nullptr);

void fill_log_pf(const ForwardPolicy& forward, Batch& batch);
void fill_log_pb(const BackwardPolicy& backward, Batch& batch);

/// Throws ContractError unless every step is a child of the previous state.
void validate(const Environment& env, const Trajectory& tau);

/// FIFO multiset of (x, R(x)).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(const State& x, double reward);
  void update(const Batch& batch);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<std::pair<State, double>>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<std::pair<State, double>> entries_;
};

inline constexpr double kScoreFloor = 1e-8;

/// True when every filled slot (>= 0) of the partial state `s` agrees with `x`.
bool compatible(const State& s, const State& x);

/// Mean reward of buffer entries extending `s` when s is compatible with x,
/// floored at kScoreFloor; 0 when s is not compatible with x.
double guided_score(const ReplayBuffer& buffer, const State& s, const State& x);

}  // namespace gflow
