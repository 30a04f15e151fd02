#pragma once

// Exact quantities on an enumerated state graph. Policies are given as
// per-edge log-probabilities laid out like StateGraph::edges; for backward
// policies the entries of edges into the sink are ignored. Everything is
// templated on the scalar so the same code runs on double and on
// forward-mode autodiff scalars.

#include <cmath>
#include <cstddef>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "gflow/env.hpp"

namespace gflow::exact {

template <typename S>
using EdgeValues = std::vector<S>;

/// Probability that a forward rollout visits each state (the sink gets 1).
template <typename S>
std::vector<S> reach_probabilities(const StateGraph& g, const EdgeValues<S>& log_pf) {
  using std::exp;
  std::vector<S> reach(g.size(), S(0.0));
  reach[0] = S(1.0);
  for (int v = 0; v < g.sink(); ++v)
    for (int e : g.out_edges[v]) reach[g.edges[e].dst] += reach[v] * exp(log_pf[e]);
  return reach;
}

/// P_F^T(x) over g.terminating.
template <typename S>
std::vector<S> terminating_distribution(const StateGraph& g, const EdgeValues<S>& log_pf) {
  using std::exp;
  const auto reach = reach_probabilities(g, log_pf);
  std::vector<S> p;
  p.reserve(g.terminating.size());
  for (int x : g.terminating) p.push_back(reach[x] * exp(log_pf[g.terminal_edge[x]]));
  return p;
}

/// R_F per edge: log pi_F - log pi_B, and on the final edge
/// log pi_F(x, stop) - (log R(x) - log Z).
template <typename S>
EdgeValues<S> forward_rewards(const StateGraph& g, const EdgeValues<S>& log_pf, const EdgeValues<S>& log_pb,
                              const S& log_z) {
  EdgeValues<S> r(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    if (g.is_terminal_edge(static_cast<int>(e)))
      r[e] = log_pf[e] - (S(g.log_reward[g.edges[e].src]) - log_z);
    else
      r[e] = log_pf[e] - log_pb[e];
  }
  return r;
}

/// Backward reward log pi_B - log target on non-terminal edges, 0 on edges
/// into the sink. With target = pi_F this is R_B, with a guide R_B^G.
template <typename S>
EdgeValues<S> backward_rewards(const StateGraph& g, const EdgeValues<S>& log_pb, const EdgeValues<S>& log_target) {
  EdgeValues<S> r(g.edges.size(), S(0.0));
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (!g.is_terminal_edge(static_cast<int>(e))) r[e] = log_pb[e] - log_target[e];
  return r;
}

template <typename S>
struct Values {
  std::vector<S> v;  // per state
  EdgeValues<S> q;   // per edge
};

/// V(s) = sum_a pi_F(s,a) (R(s,a) + V(s')), V(sink) = 0.
template <typename S>
Values<S> forward_values(const StateGraph& g, const EdgeValues<S>& log_pf, const EdgeValues<S>& reward) {
  using std::exp;
  Values<S> out{std::vector<S>(g.size(), S(0.0)), EdgeValues<S>(g.edges.size(), S(0.0))};
  for (int v = g.sink() - 1; v >= 0; --v) {
    S total(0.0);
    for (int e : g.out_edges[v]) {
      out.q[e] = reward[e] + out.v[g.edges[e].dst];
      total += exp(log_pf[e]) * out.q[e];
    }
    out.v[v] = total;
  }
  return out;
}

/// Backward analogue over the chain reversed: V(s') = sum over parents of
/// pi_B(s', a) (R(s', a) + V(s)), V(s0) = 0. Defined for non-sink states.
template <typename S>
Values<S> backward_values(const StateGraph& g, const EdgeValues<S>& log_pb, const EdgeValues<S>& reward) {
  using std::exp;
  Values<S> out{std::vector<S>(g.size(), S(0.0)), EdgeValues<S>(g.edges.size(), S(0.0))};
  for (int v = 1; v < g.sink(); ++v) {
    S total(0.0);
    for (int e : g.in_edges[v]) {
      out.q[e] = reward[e] + out.v[g.edges[e].src];
      total += exp(log_pb[e]) * out.q[e];
    }
    out.v[v] = total;
  }
  return out;
}

/// J_F = V_F(s0).
template <typename S>
S forward_objective(const StateGraph& g, const EdgeValues<S>& log_pf, const EdgeValues<S>& log_pb, const S& log_z) {
  return forward_values(g, log_pf, forward_rewards(g, log_pf, log_pb, log_z)).v[0];
}

/// sum_x rho(x) V_B(x) for a backward reward.
template <typename S>
S backward_objective(const StateGraph& g, const EdgeValues<S>& log_pb, const EdgeValues<S>& reward,
                     const std::vector<S>& rho) {
  const auto vb = backward_values(g, log_pb, reward);
  S total(0.0);
  for (std::size_t i = 0; i < g.terminating.size(); ++i) total += rho[i] * vb.v[g.terminating[i]];
  return total;
}

/// log Z* = log sum_x R(x).
double log_partition(const StateGraph& g);

// ---------------------------------------------------------------------------
// Accumulated state distribution d_{F,mu}: expected visits per non-sink state
// normalised by the trajectory length T on graded graphs, or by the expected
// number of visits otherwise. The sink gets 0.

template <typename S>
S visit_normaliser(const StateGraph& g, const std::vector<S>& visits) {
  if (g.graded) return S(static_cast<double>(g.max_length));
  S total(0.0);
  for (int v = 0; v < g.sink(); ++v) total += visits[v];
  return total;
}

/// Forward propagation in topological (layer) order.
template <typename S>
std::vector<S> visitation_by_layers(const StateGraph& g, const EdgeValues<S>& log_pf) {
  std::vector<S> d = reach_probabilities(g, log_pf);
  d[g.sink()] = S(0.0);
  const S norm = visit_normaliser(g, d);
  for (auto& x : d) x = x / norm;
  return d;
}

template <typename S>
using DenseMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// P_bar[s', s] = pi_F(s -> s') restricted to non-sink states.
template <typename S>
DenseMatrix<S> transition_matrix(const StateGraph& g, const EdgeValues<S>& log_pf) {
  using std::exp;
  const int n = g.sink();
  DenseMatrix<S> p = DenseMatrix<S>::Zero(n, n);
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (!g.is_terminal_edge(static_cast<int>(e))) p(g.edges[e].dst, g.edges[e].src) = exp(log_pf[e]);
  return p;
}

inline constexpr int kMatrixPathLimit = 5000;

/// (I - P_bar)^{-1} mu_bar with mu_bar the point mass on s0.
template <typename S>
std::vector<S> visitation_by_inverse(const StateGraph& g, const EdgeValues<S>& log_pf) {
  const int n = g.sink();
  if (n > kMatrixPathLimit) throw TooLargeError("visitation_by_inverse: too many states for dense solve");
  DenseMatrix<S> a = DenseMatrix<S>::Identity(n, n) - transition_matrix(g, log_pf);
  Eigen::Matrix<S, Eigen::Dynamic, 1> mu = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(n);
  mu[0] = S(1.0);
  Eigen::PartialPivLU<DenseMatrix<S>> lu(a);
  Eigen::Matrix<S, Eigen::Dynamic, 1> x = lu.solve(mu);
  std::vector<S> d(g.size(), S(0.0));
  for (int v = 0; v < n; ++v) d[v] = x[v];
  if constexpr (std::is_floating_point_v<S>) {
    for (int v = 0; v < n; ++v)
      if (!std::isfinite(d[v])) throw NumericFault("visitation_by_inverse: singular system");
  }
  const S norm = visit_normaliser(g, d);
  for (auto& v : d) v = v / norm;
  return d;
}

/// sum_t P_bar^t mu_bar; P_bar is nilpotent on a DAG.
template <typename S>
std::vector<S> visitation_by_power_sum(const StateGraph& g, const EdgeValues<S>& log_pf) {
  const int n = g.sink();
  if (n > kMatrixPathLimit) throw TooLargeError("visitation_by_power_sum: too many states for dense products");
  const DenseMatrix<S> p = transition_matrix(g, log_pf);
  Eigen::Matrix<S, Eigen::Dynamic, 1> term = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(n);
  term[0] = S(1.0);
  Eigen::Matrix<S, Eigen::Dynamic, 1> total = term;
  // Paths have at most max_length - 1 non-sink transitions.
  for (int t = 0; t < g.max_length; ++t) {
    term = p * term;
    total += term;
  }
  std::vector<S> d(g.size(), S(0.0));
  for (int v = 0; v < n; ++v) d[v] = total[v];
  const S norm = visit_normaliser(g, d);
  for (auto& v : d) v = v / norm;
  return d;
}

// ---------------------------------------------------------------------------

/// Every complete trajectory as a list of edge ids. Throws TooLargeError
/// beyond `cap` trajectories.
std::vector<std::vector<int>> enumerate_trajectories(const StateGraph& g, std::size_t cap = 1'000'000);

template <typename S>
S path_sum(const std::vector<int>& path, const EdgeValues<S>& values, bool skip_terminal_edge = false) {
  S total(0.0);
  const std::size_t n = skip_terminal_edge ? path.size() - 1 : path.size();
  for (std::size_t i = 0; i < n; ++i) total += values[path[i]];
  return total;
}

/// Tabular (pi_F, pi_B, log Z*) balanced against R by summing edge flows
/// backwards from F(x -> sf) = R(x).
struct PerfectFlow {
  EdgeValues<double> log_pf;
  EdgeValues<double> log_pb;
  std::vector<double> log_flow;  // per state; sink holds log Z* by convention
  double log_z = 0.0;
};

PerfectFlow perfect_flow(const StateGraph& g);

}  // namespace gflow::exact
