#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "gflow/autodiff.hpp"
#include "gflow/policy.hpp"
#include "gflow/sampler.hpp"

namespace gflow {

struct UnsupportedError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Per-trajectory trajectory-balance losses, B x 1:
/// (log Z + sum log pi_F - sum log pi_B - log R(x))^2.
Var tb_losses(Tape& tape, const Batch& batch, ForwardPolicy& forward, BackwardPolicy& backward, LogZ& log_z);

/// Per-trajectory detailed-balance losses, B x 1: the sum over edges of
/// (log F(s) + log pi_F - log F(s') - log pi_B)^2, with F(s') pi_B replaced
/// by R(x) on the edge into the sink.
Var db_losses(Tape& tape, const Batch& batch, ForwardPolicy& forward, BackwardPolicy& backward, StateFlow& flow);

/// Per-trajectory sub-trajectory-balance losses, B x 1, over all pairs
/// m < n of the chain s0..x with weights proportional to base^(n - m),
/// normalised per trajectory. F(s0) is Z and F(x) is R(x); a sub-trajectory
/// ending at x includes pi_F(x, stop). An infinite base keeps only the full
/// trajectory. Graded environments only.
Var subtb_losses(Tape& tape, const Environment& env, const Batch& batch, ForwardPolicy& forward,
                 BackwardPolicy& backward, StateFlow& flow, LogZ& log_z, double base = 0.9);

/// Normalised Sub-TB weights for a chain with `states` non-sink states,
/// ordered by (m, n).
std::vector<double> subtb_weights(int states, double base);

/// R_F per edge from the caches; the final edge uses log pi_F(x, stop) -
/// (log R(x) - log Z).
std::vector<double> forward_step_rewards(const Trajectory& tau, double log_z);
/// R_B = log pi_B - log pi_F per non-terminal edge t (edge s_t -> s_{t+1}).
std::vector<double> backward_step_rewards(const Trajectory& tau);
/// R_B^G = log pi_B - log pi_G per non-terminal edge.
std::vector<double> guided_step_rewards(const Trajectory& tau, const std::vector<double>& log_guide);

struct Advantage {
  std::vector<double> adv;  // A^lambda per step
  std::vector<double> ret;  // V^lambda = A^lambda + V(s_t)
};

/// `values` has one more entry than `rewards`: V(s_0..s_T) with the last
/// entry the boundary value.
Advantage gae(const std::vector<double>& rewards, const std::vector<double>& values, double lambda);

}  // namespace gflow
