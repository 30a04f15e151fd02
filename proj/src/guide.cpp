#include "gflow/guide.hpp"

#include <cmath>
#include <limits>

#include "gflow/metrics.hpp"

namespace gflow {

HyperGridGuide::HyperGridGuide(const HyperGrid& env, double epsilon)
    : env_(&env), epsilon_(epsilon), graph_(enumerate_states(env)) {
  if (!(epsilon > 0.0)) throw ContractError("HyperGridGuide: epsilon must be positive");
  const double r0 = env.rewards().r0;
  low_reward_.assign(graph_.size(), false);
  for (int v = 0; v < graph_.sink(); ++v) low_reward_[v] = std::exp(graph_.log_reward[v]) <= r0 * (1.0 + 1e-12);
}

exact::EdgeValues<double> HyperGridGuide::guided_forward(const exact::EdgeValues<double>& log_pf) const {
  exact::EdgeValues<double> out = log_pf;
  for (int v = 0; v < graph_.sink(); ++v) {
    if (!low_reward_[v]) continue;
    double moves = 0.0;
    for (int e : graph_.out_edges[v])
      if (!graph_.is_terminal_edge(e)) moves += std::exp(log_pf[e]);
    if (moves == 0.0) continue;  // stopping is the only option
    const double denom = std::log(moves + epsilon_);
    for (int e : graph_.out_edges[v])
      out[e] = graph_.is_terminal_edge(e) ? std::log(epsilon_) - denom : log_pf[e] - denom;
  }
  return out;
}

exact::EdgeValues<double> HyperGridGuide::guided_backward(const exact::EdgeValues<double>& log_pf) const {
  const auto log_pfg = guided_forward(log_pf);
  const auto reach = exact::reach_probabilities(graph_, log_pfg);
  exact::EdgeValues<double> out(graph_.edges.size(), 0.0);
  for (std::size_t e = 0; e < graph_.edges.size(); ++e) {
    const auto& edge = graph_.edges[e];
    if (edge.dst == graph_.sink()) continue;
    out[e] = std::log(reach[edge.src]) + log_pfg[e] - std::log(reach[edge.dst]);
  }
  return out;
}

void HyperGridGuide::prepare(const ForwardPolicy& forward, const Batch&) {
  log_pg_ = guided_backward(forward_edge_log_probs(graph_, forward));
}

int HyperGridGuide::edge_of(const State& s, int action) const {
  const int v = graph_.find(*env_, s);
  for (int e : graph_.out_edges[v])
    if (graph_.edges[e].action == action) return e;
  throw ContractError("HyperGridGuide: no such edge");
}

std::vector<double> HyperGridGuide::log_probs(const Trajectory& tau) const {
  if (log_pg_.empty()) throw ContractError("HyperGridGuide: prepare() has not been called");
  std::vector<double> out(tau.length() - 1);
  for (int t = 0; t + 1 < tau.length(); ++t) out[t] = log_pg_[edge_of(tau.states[t], tau.actions[t])];
  return out;
}

// ---------------------------------------------------------------------------

SequenceGuide::SequenceGuide(const Environment& env, std::size_t capacity) : env_(&env), buffer_(capacity) {}

void SequenceGuide::prepare(const ForwardPolicy&, const Batch& forward_batch) {
  buffer_.update(forward_batch);
  cache_.clear();
}

double SequenceGuide::score(const State& s, const State& x) const {
  if (!compatible(s, x)) return 0.0;
  const std::uint64_t key = env_->index(s);
  auto it = cache_.find(key);
  if (it == cache_.end()) it = cache_.emplace(key, guided_score(buffer_, s, s)).first;
  return it->second;
}

std::vector<double> SequenceGuide::log_probs(const Trajectory& tau) const {
  const State& x = tau.terminal();
  std::vector<double> out(tau.length() - 1);
  for (int t = 0; t + 1 < tau.length(); ++t) {
    double total = 0.0;
    for (const auto& c : env_->children(tau.states[t])) total += score(c.state, x);
    out[t] = std::log(score(tau.states[t + 1], x) / total);
  }
  return out;
}

}  // namespace gflow
