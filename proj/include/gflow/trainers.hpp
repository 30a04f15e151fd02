#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gflow/env.hpp"
#include "gflow/exact.hpp"
#include "gflow/guide.hpp"
#include "gflow/mlp.hpp"
#include "gflow/objectives.hpp"
#include "gflow/policy.hpp"
#include "gflow/sampler.hpp"

namespace gflow {

struct TrainerConfig {
  double lambda = 0.99;
  double lr_policy = 1e-3;
  double lr_value = 5e-3;
  double lr_logz = 0.1;
  /// Train a backward value estimator; without it backward advantages are
  /// plain returns.
  bool backward_value = true;
};

struct AgentSpec {
  ModelSpec model;
  bool learned_backward = false;
  bool forward_value = false;
  bool backward_value = false;
  bool state_flow = false;
  double log_z_init = 0.0;
};

/// Every trainable object of one run together with its optimiser state.
struct Agent {
  Agent(const Environment& env, const AgentSpec& spec, const TrainerConfig& config, Rng& rng);

  const Environment* env;
  TrainerConfig config;
  ForwardPolicy forward;
  BackwardPolicy backward;
  LogZ log_z;
  std::optional<ValueEstimator> value_f;
  std::optional<ValueEstimator> value_b;
  std::optional<StateFlow> flow;
  AdamState opt_forward, opt_backward, opt_logz, opt_value_f, opt_value_b, opt_flow;

  void zero_grads();
};

enum class Objective { TB, DB, SubTB };

/// One Adam step on the mean balance loss of `batch`. Returns the loss.
double value_based_step(Agent& agent, Objective objective, const Batch& batch, double subtb_base = 0.9);

struct ForwardTerms {
  std::vector<double> adv;      // per forward row
  std::vector<double> ret;      // V^lambda per forward row
  std::vector<double> ret_one;  // sum of R_F per trajectory (lambda = 1 return from s0)
  double objective = 0.0;       // batch mean of sum R_F
};

/// R_F, forward values and lambda-advantages for an on-policy batch whose
/// log_pb cache is filled.
ForwardTerms forward_terms(const Agent& agent, const Batch& batch);

/// Policy surrogate (1/B) sum stopgrad(A) log pi_F plus the log Z term
/// mean(V^1(s0)) log mu(s0); its gradient is the actor-critic update direction.
Var forward_surrogate(Tape& tape, Agent& agent, const Batch& batch, const ForwardTerms& terms);

struct StepReport {
  double objective = 0.0;   // batch estimate of J_F (or J_B)
  double value_loss = 0.0;
};

/// Policy-gradient update of pi_F with sum stopgrad(A) log pi_F, log Z via
/// V^1(s0) log mu(s0), and the forward value regression.
StepReport actor_critic_step(Agent& agent, const Batch& batch);

/// Mirrored update of a learned pi_B on backward-sampled trajectories with
/// R_B (or R_B^G when `guide_log_probs` holds one vector per trajectory).
StepReport backward_step(Agent& agent, const Batch& backward_batch,
                         const std::vector<std::vector<double>>* guide_log_probs = nullptr);

struct TrustRegionConfig {
  double zeta = 0.01;
  int cg_iterations = 10;
  double cg_tolerance = 1e-10;
  double damping = 1e-3;
  double backtrack = 0.8;
  int max_backtracks = 10;
};

struct TrpoReport {
  bool accepted = false;
  bool skipped = false;   // CG failure or zero gradient
  std::string note;
  double kl = 0.0;        // mean per-row KL of the accepted step
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  int backtracks = 0;
  StepReport forward;
};

/// Conjugate gradient for F x = b with a matrix-free product.
Vector conjugate_gradient(const std::function<Vector(const Vector&)>& apply, const Vector& b, int iterations,
                          double tolerance);

/// Natural-gradient step on pi_F under a KL trust region, plus the log Z
/// and value updates of actor_critic_step.
TrpoReport trpo_step(Agent& agent, const Batch& batch, const TrustRegionConfig& cfg);

/// Forward actor-critic update, then backward rollouts from the batch's
/// terminating states and a backward update against the guide (or pi_F
/// when `guide` is null).
StepReport guided_coupled_step(Agent& agent, const Batch& batch, Guide* guide, Rng& rng);

// ---------------------------------------------------------------------------

struct Theorem1Report {
  double j_f = 0.0, j_f_guided = 0.0, j_b_guided = 0.0, kl = 0.0, r_max = 0.0;
  double bound = 0.0;            // inequality as stated
  double corrected_bound = 0.0;  // with ||p - q||_1 <= sqrt(2 KL)
  bool holds = false;
  bool corrected_holds = false;
};

struct Theorem2Report {
  double lhs = 0.0, advantage = 0.0, zeta = 0.0, epsilon = 0.0, bound = 0.0;
  double lemma_gap = 0.0;  // |(J' - J) - T (E_{d'pi'}[A] + KL^{d'})|
  bool holds = false;
};

/// Exact evaluation on a graded graph with per-edge log-probabilities.
Theorem1Report check_theorem1(const StateGraph& g, const exact::EdgeValues<double>& log_pf,
                              const exact::EdgeValues<double>& log_pb, const exact::EdgeValues<double>& log_pg,
                              double log_z);
Theorem2Report check_theorem2(const StateGraph& g, const exact::EdgeValues<double>& log_pf,
                              const exact::EdgeValues<double>& log_pf_new, const exact::EdgeValues<double>& log_pb,
                              double log_z);

struct TheoremReport {
  Theorem1Report theorem1;
  Theorem2Report theorem2;
};

/// Both checks from tabular policies; the guide supplies per-edge backward
/// log-probabilities and `candidate` the second forward policy.
TheoremReport check_theorem_bounds(const Environment& env, const ForwardPolicy& forward,
                                   const BackwardPolicy& backward, const exact::EdgeValues<double>& log_pg,
                                   const ForwardPolicy& candidate, double log_z);

}  // namespace gflow
