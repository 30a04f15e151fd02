#include "gflow/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gflow/metrics.hpp"

namespace gflow {

namespace {

AdamState adam(double lr) {
  AdamState s;
  s.config.lr = lr;
  return s;
}

struct ForwardRows {
  std::vector<State> states;
  std::vector<int> actions;
};

ForwardRows forward_rows(const Batch& batch) {
  ForwardRows r;
  for (const auto& tau : batch)
    for (int t = 0; t < tau.length(); ++t) {
      r.states.push_back(tau.states[t]);
      r.actions.push_back(tau.actions[t]);
    }
  return r;
}

Matrix column(const std::vector<double>& v) {
  return Eigen::Map<const Matrix>(v.data(), static_cast<Eigen::Index>(v.size()), 1);
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericFault(std::string(what) + ": non-finite loss");
}

}  // namespace

Agent::Agent(const Environment& e, const AgentSpec& spec, const TrainerConfig& cfg, Rng& rng)
    : env(&e),
      config(cfg),
      forward(e, spec.model, rng),
      backward(spec.learned_backward ? BackwardPolicy::learned(e, spec.model, rng) : BackwardPolicy::uniform(e)),
      log_z(spec.log_z_init),
      opt_forward(adam(cfg.lr_policy)),
      opt_backward(adam(cfg.lr_policy)),
      opt_logz(adam(cfg.lr_logz)),
      opt_value_f(adam(cfg.lr_value)),
      opt_value_b(adam(cfg.lr_value)),
      opt_flow(adam(cfg.lr_policy)) {
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ContractError("lambda must lie in [0, 1]");
  if (!(cfg.lr_policy > 0.0 && cfg.lr_value > 0.0 && cfg.lr_logz > 0.0))
    throw ContractError("learning rates must be positive");
  if (spec.forward_value) value_f.emplace(e, ValueEstimator::Pin::Sink, spec.model, rng);
  if (spec.backward_value) value_b.emplace(e, ValueEstimator::Pin::Root, spec.model, rng);
  if (spec.state_flow) flow.emplace(e, spec.model, rng);
}

void Agent::zero_grads() {
  forward.params().zero_grad();
  if (backward.is_learned()) backward.params().zero_grad();
  log_z.params().zero_grad();
  if (value_f) value_f->params().zero_grad();
  if (value_b) value_b->params().zero_grad();
  if (flow) flow->params().zero_grad();
}

double value_based_step(Agent& agent, Objective objective, const Batch& batch, double subtb_base) {
  Tape tape;
  Var losses;
  switch (objective) {
    case Objective::TB:
      losses = tb_losses(tape, batch, agent.forward, agent.backward, agent.log_z);
      break;
    case Objective::DB:
      if (!agent.flow) throw ContractError("DB needs a state-flow estimator");
      losses = db_losses(tape, batch, agent.forward, agent.backward, *agent.flow);
      break;
    case Objective::SubTB:
      if (!agent.flow) throw ContractError("Sub-TB needs a state-flow estimator");
      losses = subtb_losses(tape, *agent.env, batch, agent.forward, agent.backward, *agent.flow, agent.log_z,
                            subtb_base);
      break;
  }
  Var loss = mean(losses);
  check_finite(loss.scalar(), "value_based_step");
  agent.zero_grads();
  tape.backward(loss);
  adam_step(agent.opt_forward, agent.forward.params());
  if (agent.backward.is_learned()) adam_step(agent.opt_backward, agent.backward.params());
  if (objective != Objective::DB) adam_step(agent.opt_logz, agent.log_z.params());
  if (objective != Objective::TB) adam_step(agent.opt_flow, agent.flow->params());
  return loss.scalar();
}

// ---------------------------------------------------------------------------

ForwardTerms forward_terms(const Agent& agent, const Batch& batch) {
  ForwardTerms out;
  const ForwardRows rows = forward_rows(batch);
  Vector values = agent.value_f ? agent.value_f->values(rows.states) : Vector::Zero(rows.states.size());
  const double log_z = agent.log_z.value();
  Eigen::Index row = 0;
  for (const auto& tau : batch) {
    const auto rewards = forward_step_rewards(tau, log_z);
    std::vector<double> v(tau.length() + 1, 0.0);
    for (int t = 0; t < tau.length(); ++t) v[t] = values[row + t];
    const Advantage a = gae(rewards, v, agent.config.lambda);
    out.adv.insert(out.adv.end(), a.adv.begin(), a.adv.end());
    out.ret.insert(out.ret.end(), a.ret.begin(), a.ret.end());
    double total = 0.0;
    for (double r : rewards) total += r;
    out.ret_one.push_back(total);
    out.objective += total;
    row += tau.length();
  }
  out.objective /= static_cast<double>(batch.size());
  return out;
}

namespace {

// log Z through log mu(s0) and the forward value regression, on their own tape.
double update_logz_and_values(Agent& agent, const ForwardRows& rows, const ForwardTerms& terms, double batch) {
  Tape tape;
  double mean_return = 0.0;
  for (double r : terms.ret_one) mean_return += r;
  mean_return /= batch;
  Var total = agent.log_z.log_mu(tape) * tape.constant(mean_return);
  double value_loss = 0.0;
  if (agent.value_f) {
    Var vl = scale(sum(square(agent.value_f->values(tape, rows.states) - tape.constant(column(terms.ret)))),
                   1.0 / batch);
    value_loss = vl.scalar();
    total = total + vl;
  }
  check_finite(total.scalar(), "log Z / value update");
  agent.log_z.params().zero_grad();
  if (agent.value_f) agent.value_f->params().zero_grad();
  tape.backward(total);
  adam_step(agent.opt_logz, agent.log_z.params());
  if (agent.value_f) adam_step(agent.opt_value_f, agent.value_f->params());
  return value_loss;
}

}  // namespace

Var forward_surrogate(Tape& tape, Agent& agent, const Batch& batch, const ForwardTerms& terms) {
  const ForwardRows rows = forward_rows(batch);
  const double b = static_cast<double>(batch.size());
  double mean_return = 0.0;
  for (double r : terms.ret_one) mean_return += r;
  mean_return /= b;
  Var lpf = gather(agent.forward.log_probs(tape, rows.states), rows.actions);
  return scale(sum(lpf * tape.constant(column(terms.adv))), 1.0 / b) +
         agent.log_z.log_mu(tape) * tape.constant(mean_return);
}

StepReport actor_critic_step(Agent& agent, const Batch& batch) {
  const ForwardTerms terms = forward_terms(agent, batch);
  const ForwardRows rows = forward_rows(batch);
  const double b = static_cast<double>(batch.size());
  Tape tape;
  Var total = forward_surrogate(tape, agent, batch, terms);
  StepReport report;
  report.objective = terms.objective;
  if (agent.value_f) {
    Var vl = scale(sum(square(agent.value_f->values(tape, rows.states) - tape.constant(column(terms.ret)))),
                   1.0 / b);
    report.value_loss = vl.scalar();
    total = total + vl;
  }
  check_finite(total.scalar(), "actor_critic_step");
  agent.forward.params().zero_grad();
  agent.log_z.params().zero_grad();
  if (agent.value_f) agent.value_f->params().zero_grad();
  tape.backward(total);
  adam_step(agent.opt_forward, agent.forward.params());
  adam_step(agent.opt_logz, agent.log_z.params());
  if (agent.value_f) adam_step(agent.opt_value_f, agent.value_f->params());
  return report;
}

StepReport backward_step(Agent& agent, const Batch& bbatch, const std::vector<std::vector<double>>* guide) {
  if (!agent.backward.is_learned()) throw ContractError("backward_step needs a learned backward policy");
  if (guide != nullptr && guide->size() != bbatch.size())
    throw DimensionError("backward_step: one guide vector per trajectory");
  std::vector<State> states;
  std::vector<int> actions;
  for (const auto& tau : bbatch)
    for (int t = 0; t + 1 < tau.length(); ++t) {
      states.push_back(tau.states[t + 1]);
      actions.push_back(tau.actions[t]);
    }
  StepReport report;
  const double b = static_cast<double>(bbatch.size());
  if (states.empty()) return report;
  Vector values = agent.value_b ? agent.value_b->values(states) : Vector::Zero(states.size());

  // Rows follow forward edge order; the backward chain runs from x to s0.
  std::vector<double> adv(states.size()), target(states.size());
  std::size_t base = 0;
  for (std::size_t i = 0; i < bbatch.size(); ++i) {
    const Trajectory& tau = bbatch[i];
    const std::vector<double> r =
        guide != nullptr ? guided_step_rewards(tau, (*guide)[i]) : backward_step_rewards(tau);
    const int k = static_cast<int>(r.size());
    std::vector<double> rb(k), vb(k + 1, 0.0);
    for (int j = 0; j < k; ++j) {
      const int t = k - 1 - j;
      rb[j] = r[t];
      vb[j] = values[base + t];
    }
    const Advantage a = gae(rb, vb, agent.config.lambda);
    double tail = 0.0;
    for (int j = k - 1; j >= 0; --j) {
      tail += rb[j];
      const int t = k - 1 - j;
      adv[base + t] = a.adv[j];
      target[base + t] = tail;
    }
    report.objective += tail;
    base += k;
  }
  report.objective /= b;

  Tape tape;
  Var lpb = gather(agent.backward.log_probs(tape, states), actions);
  Var total = scale(sum(lpb * tape.constant(column(adv))), 1.0 / b);
  if (agent.value_b) {
    Var vl = scale(sum(square(agent.value_b->values(tape, states) - tape.constant(column(target)))), 1.0 / b);
    report.value_loss = vl.scalar();
    total = total + vl;
  }
  check_finite(total.scalar(), "backward_step");
  agent.backward.params().zero_grad();
  if (agent.value_b) agent.value_b->params().zero_grad();
  tape.backward(total);
  adam_step(agent.opt_backward, agent.backward.params());
  if (agent.value_b) adam_step(agent.opt_value_b, agent.value_b->params());
  return report;
}

StepReport guided_coupled_step(Agent& agent, const Batch& batch, Guide* guide, Rng& rng) {
  StepReport report = actor_critic_step(agent, batch);
  if (!agent.backward.is_learned()) return report;
  if (guide != nullptr) guide->prepare(agent.forward, batch);
  std::vector<State> xs;
  xs.reserve(batch.size());
  for (const auto& tau : batch) xs.push_back(tau.terminal());
  const Batch bbatch = sample_backward(*agent.env, agent.backward, xs, rng, &agent.forward);
  if (guide != nullptr) {
    std::vector<std::vector<double>> glp;
    glp.reserve(bbatch.size());
    for (const auto& tau : bbatch) glp.push_back(guide->log_probs(tau));
    backward_step(agent, bbatch, &glp);
  } else {
    backward_step(agent, bbatch);
  }
  return report;
}

// ---------------------------------------------------------------------------

Vector conjugate_gradient(const std::function<Vector(const Vector&)>& apply, const Vector& b, int iterations,
                          double tolerance) {
  Vector x = Vector::Zero(b.size());
  Vector r = b;
  Vector p = b;
  double rs = r.squaredNorm();
  for (int i = 0; i < iterations && rs > tolerance; ++i) {
    const Vector ap = apply(p);
    const double alpha = rs / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    const double next = r.squaredNorm();
    p = r + (next / rs) * p;
    rs = next;
  }
  return x;
}

TrpoReport trpo_step(Agent& agent, const Batch& batch, const TrustRegionConfig& cfg) {
  if (!(cfg.zeta > 0.0)) throw ContractError("trust region size must be positive");
  TrpoReport report;
  const ForwardTerms terms = forward_terms(agent, batch);
  const ForwardRows rows = forward_rows(batch);
  const double b = static_cast<double>(batch.size());
  const auto m = static_cast<double>(rows.states.size());
  ParameterSet& params = agent.forward.params();

  Tape tape;
  Var lp_all = agent.forward.log_probs(tape, rows.states);
  Var lpf = gather(lp_all, rows.actions);
  Var surrogate = scale(sum(lpf * tape.constant(column(terms.adv))), 1.0 / b);
  check_finite(surrogate.scalar(), "trpo_step");
  params.zero_grad();
  tape.backward(surrogate);
  const Vector g = params.grads;

  report.forward.objective = terms.objective;
  report.forward.value_loss = update_logz_and_values(agent, rows, terms, b);

  if (g.squaredNorm() == 0.0) {
    report.skipped = true;
    report.note = "zero gradient";
    return report;
  }

  auto fisher = [&](const Vector& v) -> Vector {
    const Matrix jv = tape.jvp(lpf, params, v);
    params.zero_grad();
    tape.backward(sum(lpf * tape.constant(jv)));
    return Vector(params.grads / m + cfg.damping * v);
  };
  const Vector x = conjugate_gradient(fisher, g, cfg.cg_iterations, cfg.cg_tolerance);
  const double shs = g.dot(x);
  if (!x.allFinite() || !(shs > 0.0) || !std::isfinite(shs)) {
    report.skipped = true;
    report.note = "conjugate gradient produced a non-finite or non-descent direction";
    return report;
  }
  const Vector step = -std::sqrt(2.0 * cfg.zeta / shs) * x;

  const Vector theta0 = params.values;
  const Matrix lp_old = lp_all.value();
  report.surrogate_before = 0.0;
  for (double a : terms.adv) report.surrogate_before += a;
  report.surrogate_before /= b;

  double frac = 1.0;
  for (int k = 0; k < cfg.max_backtracks; ++k, frac *= cfg.backtrack) {
    params.values = theta0 + frac * step;
    const Matrix lp_new = agent.forward.log_probs(rows.states);
    double kl = 0.0;
    double surr = 0.0;
    for (Eigen::Index i = 0; i < lp_old.rows(); ++i) {
      for (Eigen::Index j = 0; j < lp_old.cols(); ++j)
        if (std::isfinite(lp_old(i, j))) kl += std::exp(lp_old(i, j)) * (lp_old(i, j) - lp_new(i, j));
      const int a = rows.actions[i];
      surr += terms.adv[i] * std::exp(lp_new(i, a) - lp_old(i, a));
    }
    kl /= m;
    surr /= b;
    if (std::isfinite(kl) && std::isfinite(surr) && kl <= cfg.zeta && surr < report.surrogate_before) {
      report.accepted = true;
      report.kl = kl;
      report.surrogate_after = surr;
      report.backtracks = k;
      return report;
    }
  }
  params.values = theta0;
  report.note = "line search exhausted";
  report.backtracks = cfg.max_backtracks;
  return report;
}

// ---------------------------------------------------------------------------

Theorem1Report check_theorem1(const StateGraph& g, const exact::EdgeValues<double>& log_pf,
                              const exact::EdgeValues<double>& log_pb, const exact::EdgeValues<double>& log_pg,
                              double log_z) {
  if (!g.graded) throw UnsupportedError("check_theorem1 needs a graded graph");
  Theorem1Report r;
  const double T = g.max_length;
  r.j_f = exact::forward_objective(g, log_pf, log_pb, log_z);
  r.j_f_guided = exact::forward_objective(g, log_pf, log_pg, log_z);
  const auto rho = exact::terminating_distribution(g, log_pf);
  const auto rbg = exact::backward_rewards(g, log_pb, log_pg);
  r.j_b_guided = exact::backward_objective(g, log_pb, rbg, rho);
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (!g.is_terminal_edge(static_cast<int>(e))) r.r_max = std::max(r.r_max, std::abs(rbg[e]));
  r.kl = std::max(r.j_f + exact::log_partition(g) - log_z, 0.0);
  const double base = r.j_f + r.j_b_guided;
  r.bound = base + (T - 1.0) * r.r_max * std::sqrt(r.kl / 2.0);
  r.corrected_bound = base + (T - 1.0) * r.r_max * std::sqrt(2.0 * r.kl);
  const double tol = 1e-10 * (1.0 + std::abs(r.j_f_guided));
  r.holds = r.j_f_guided <= r.bound + tol;
  r.corrected_holds = r.j_f_guided <= r.corrected_bound + tol;
  return r;
}

Theorem2Report check_theorem2(const StateGraph& g, const exact::EdgeValues<double>& log_pf,
                              const exact::EdgeValues<double>& log_pf_new, const exact::EdgeValues<double>& log_pb,
                              double log_z) {
  if (!g.graded) throw UnsupportedError("check_theorem2 needs a graded graph");
  Theorem2Report r;
  const double T = g.max_length;
  const auto rewards = exact::forward_rewards(g, log_pf, log_pb, log_z);
  const auto values = exact::forward_values(g, log_pf, rewards);
  const double j = values.v[0];
  const double j_new = exact::forward_objective(g, log_pf_new, log_pb, log_z);
  const auto d = exact::visitation_by_layers(g, log_pf);
  const auto d_new = exact::visitation_by_layers(g, log_pf_new);

  double adv_new_dist = 0.0;
  for (int s = 0; s < g.sink(); ++s) {
    double mean_adv = 0.0;
    double kl = 0.0;
    for (int e : g.out_edges[s]) {
      const double p = std::exp(log_pf_new[e]);
      mean_adv += p * (values.q[e] - values.v[s]);
      kl += p * (log_pf_new[e] - log_pf[e]);
    }
    r.advantage += d[s] * mean_adv;
    adv_new_dist += d_new[s] * mean_adv;
    r.zeta += d_new[s] * kl;
    r.epsilon = std::max(r.epsilon, std::abs(mean_adv));
  }
  r.zeta = std::max(r.zeta, 0.0);
  r.lhs = (j_new - j) / T;
  r.bound = r.advantage + r.zeta + r.epsilon * std::sqrt(2.0 * r.zeta);
  r.lemma_gap = std::abs((j_new - j) - T * (adv_new_dist + r.zeta));
  r.holds = r.lhs <= r.bound + 1e-10 * (1.0 + std::abs(r.lhs));
  return r;
}

TheoremReport check_theorem_bounds(const Environment& env, const ForwardPolicy& forward,
                                   const BackwardPolicy& backward, const exact::EdgeValues<double>& log_pg,
                                   const ForwardPolicy& candidate, double log_z) {
  const StateGraph g = enumerate_states(env);
  const auto lpf = forward_edge_log_probs(g, forward);
  const auto lpb = backward_edge_log_probs(g, backward);
  TheoremReport out;
  out.theorem1 = check_theorem1(g, lpf, lpb, log_pg, log_z);
  out.theorem2 = check_theorem2(g, lpf, forward_edge_log_probs(g, candidate), lpb, log_z);
  return out;
}

}  // namespace gflow
