#pragma once

#include <memory>
#include <unordered_map>
#include <vector>

#include "gflow/env.hpp"
#include "gflow/exact.hpp"
#include "gflow/policy.hpp"
#include "gflow/sampler.hpp"

namespace gflow {

/// Target for the backward policy: log pi_G(s_{t+1}, a_t) along a
/// trajectory, conditioned on everything after s_{t+1}.
class Guide {
 public:
  virtual ~Guide() = default;
  /// Refreshes internal state from the current forward policy and the
  /// latest forward batch.
  virtual void prepare(const ForwardPolicy& forward, const Batch& forward_batch) = 0;
  /// One entry per non-terminal edge of `tau`.
  virtual std::vector<double> log_probs(const Trajectory& tau) const = 0;
};

/// Hyper-grid guide: P_F with the stop probability suppressed to
/// eps / (sum of non-stop P_F + eps) at states with reward <= R0, turned
/// into a backward Markov kernel through its forward state flow.
class HyperGridGuide final : public Guide {
 public:
  static constexpr double kStopEpsilon = 1e-5;

  explicit HyperGridGuide(const HyperGrid& env, double epsilon = kStopEpsilon);

  void prepare(const ForwardPolicy& forward, const Batch& forward_batch) override;
  std::vector<double> log_probs(const Trajectory& tau) const override;

  /// Suppressed forward kernel per edge, given per-edge log pi_F.
  exact::EdgeValues<double> guided_forward(const exact::EdgeValues<double>& log_pf) const;
  /// Backward guide per edge: F_f(s) P_f(s'|s) / F_f(s'); sink edges hold 0.
  exact::EdgeValues<double> guided_backward(const exact::EdgeValues<double>& log_pf) const;

  const StateGraph& graph() const { return graph_; }

 private:
  int edge_of(const State& s, int action) const;

  const HyperGrid* env_;
  double epsilon_;
  StateGraph graph_;
  std::vector<bool> low_reward_;
  exact::EdgeValues<double> log_pg_;
};

/// Sequence guide: P_G(s_{t+1} | s_t, x) proportional to score(s_{t+1} | x)
/// from a replay buffer of recent forward samples.
class SequenceGuide final : public Guide {
 public:
  SequenceGuide(const Environment& env, std::size_t capacity);

  void prepare(const ForwardPolicy& forward, const Batch& forward_batch) override;
  std::vector<double> log_probs(const Trajectory& tau) const override;

  const ReplayBuffer& buffer() const { return buffer_; }

 private:
  double score(const State& s, const State& x) const;

  const Environment* env_;
  ReplayBuffer buffer_;
  mutable std::unordered_map<std::uint64_t, double> cache_;
};

}  // namespace gflow
