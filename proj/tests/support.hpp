#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <memory>
#include <vector>

#include "gflow/env.hpp"
#include "gflow/exact.hpp"
#include "gflow/metrics.hpp"
#include "gflow/policy.hpp"
#include "gflow/sampler.hpp"

namespace gflow::testing {

using AD = Eigen::AutoDiffScalar<Eigen::VectorXd>;

/// Independent variables: values[i] with unit derivative at offset + i.
inline std::vector<AD> variables(const Vector& values, Eigen::Index offset, Eigen::Index total) {
  std::vector<AD> out;
  out.reserve(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) out.emplace_back(values[i], total, offset + i);
  return out;
}

inline std::vector<AD> constants(const Vector& values, Eigen::Index total) {
  std::vector<AD> out;
  for (Eigen::Index i = 0; i < values.size(); ++i) out.emplace_back(values[i], Eigen::VectorXd::Zero(total));
  return out;
}

/// Gives a derivative-free constant the full derivative width.
inline AD sized(AD x, Eigen::Index total) {
  if (x.derivatives().size() == 0) x.derivatives() = Eigen::VectorXd::Zero(total);
  return x;
}

inline double x_value(double x) { return x; }
inline double x_value(const AD& x) { return x.value(); }

template <typename S>
S log_sum(const std::vector<S>& xs) {
  using std::exp;
  using std::log;
  double m = -INFINITY;
  for (const auto& x : xs) m = std::max(m, x_value(x));
  S total = xs.front() * 0.0;
  for (const auto& x : xs) total += exp(x - m);
  return log(total) + m;
}

/// Tabular masked softmax per edge: logits theta[index(src) * K + action]
/// normalised over the out-edges of src.
template <typename S>
exact::EdgeValues<S> forward_edge_lp(const Environment& env, const StateGraph& g, const std::vector<S>& theta) {
  const int k = env.action_count();
  exact::EdgeValues<S> lp(g.edges.size());
  for (int v = 0; v < g.sink(); ++v) {
    const auto row = static_cast<std::size_t>(env.index(g.states[v])) * k;
    std::vector<S> logits;
    for (int e : g.out_edges[v]) logits.push_back(theta[row + g.edges[e].action]);
    const S lse = log_sum(logits);
    for (int e : g.out_edges[v]) lp[e] = theta[row + g.edges[e].action] - lse;
  }
  return lp;
}

/// Backward analogue over the in-edges of each non-root, non-sink state;
/// edges into the sink hold 0.
template <typename S>
exact::EdgeValues<S> backward_edge_lp(const Environment& env, const StateGraph& g, const std::vector<S>& phi) {
  const int k = env.action_count();
  exact::EdgeValues<S> lp(g.edges.size(), phi.front() * 0.0);
  for (int v = 1; v < g.sink(); ++v) {
    const auto row = static_cast<std::size_t>(env.index(g.states[v])) * k;
    std::vector<S> logits;
    for (int e : g.in_edges[v]) logits.push_back(phi[row + g.edges[e].action]);
    const S lse = log_sum(logits);
    for (int e : g.in_edges[v]) lp[e] = phi[row + g.edges[e].action] - lse;
  }
  return lp;
}

inline void randomize(ParameterSet& params, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < params.values.size(); ++i) params.values[i] = scale * (2.0 * uniform01(rng) - 1.0);
}

inline ModelSpec tabular() { return ModelSpec{ModelKind::Tabular, {}}; }

/// Complete trajectory along an enumerated edge path.
inline Trajectory trajectory_of(const StateGraph& g, const std::vector<int>& path) {
  Trajectory tau;
  tau.states.push_back(g.states[0]);
  for (int e : path) {
    tau.states.push_back(g.states[g.edges[e].dst]);
    tau.actions.push_back(g.edges[e].action);
  }
  tau.log_reward = g.log_reward[g.edges[path.back()].src];
  return tau;
}

/// Terminating-state slot of a path's final state in g.terminating.
inline int terminal_slot(const StateGraph& g, const std::vector<int>& path) {
  const int x = g.edges[path.back()].src;
  for (std::size_t i = 0; i < g.terminating.size(); ++i)
    if (g.terminating[i] == x) return static_cast<int>(i);
  return -1;
}

}  // namespace gflow::testing
