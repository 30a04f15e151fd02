#pragma once

#include <cstdint>
#include <unordered_set>
#include <vector>

#include "gflow/env.hpp"
#include "gflow/exact.hpp"
#include "gflow/policy.hpp"

namespace gflow {

/// 1/2 sum |p - q|.
double d_tv(const std::vector<double>& p, const std::vector<double>& q);
/// Jensen-Shannon divergence with midpoint (p + q) / 2, natural log.
double d_jsd(const std::vector<double>& p, const std::vector<double>& q);
/// min(E_p[R] / E_target[R], 1).
double acc(const std::vector<double>& p, const std::vector<double>& target, const std::vector<double>& reward);

/// Normalised reward over g.terminating.
std::vector<double> target_distribution(const StateGraph& g);

/// Per-edge log pi_F of a policy, evaluated in one batch over all states.
exact::EdgeValues<double> forward_edge_log_probs(const StateGraph& g, const ForwardPolicy& policy);
/// Per-edge log pi_B; edges into the sink hold 0.
exact::EdgeValues<double> backward_edge_log_probs(const StateGraph& g, const BackwardPolicy& policy);

/// Terminating states whose reward is in the top `quantile` fraction, at
/// least one; ties at the threshold are included. Keys are env.index values.
class ModeSet {
 public:
  static constexpr double kDefaultQuantile = 0.005;

  ModeSet() = default;
  /// `rewards[i]` belongs to the state with env index `keys[i]`.
  ModeSet(const std::vector<std::uint64_t>& keys, const std::vector<double>& rewards,
          double quantile = kDefaultQuantile);
  static ModeSet from_graph(const Environment& env, const StateGraph& g, double quantile = kDefaultQuantile);
  /// All complete sequences from the reward table.
  static ModeSet from_sequence_table(const SequenceEnv& env, double quantile = kDefaultQuantile);

  bool contains(std::uint64_t key) const { return keys_.count(key) > 0; }
  std::size_t size() const { return keys_.size(); }
  double threshold() const { return threshold_; }

 private:
  std::unordered_set<std::uint64_t> keys_;
  double threshold_ = 0.0;
};

/// Samples n terminating states from pi_F, adds modes hit to `seen`, and
/// returns the running count.
std::size_t mode_count(const Environment& env, const ForwardPolicy& policy, const ModeSet& modes, int n,
                       std::unordered_set<std::uint64_t>& seen, Rng& rng);

}  // namespace gflow
