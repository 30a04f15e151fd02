#include "gflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gflow/sampler.hpp"

namespace gflow {

namespace {

void check_support(const std::vector<double>& p, const std::vector<double>& q, const char* what) {
  if (p.size() != q.size() || p.empty()) throw ContractError(std::string(what) + ": support mismatch");
}

double log_sum_exp(const std::vector<double>& xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double total = 0.0;
  for (double x : xs) total += std::exp(x - mx);
  return mx + std::log(total);
}

}  // namespace

double d_tv(const std::vector<double>& p, const std::vector<double>& q) {
  check_support(p, q, "d_tv");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - q[i]);
  return 0.5 * total;
}

double d_jsd(const std::vector<double>& p, const std::vector<double>& q) {
  check_support(p, q, "d_jsd");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) total += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) total += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(total, 0.0);
}

double acc(const std::vector<double>& p, const std::vector<double>& target, const std::vector<double>& reward) {
  check_support(p, target, "acc");
  check_support(p, reward, "acc");
  double ep = 0.0, et = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    ep += p[i] * reward[i];
    et += target[i] * reward[i];
  }
  return std::min(ep / et, 1.0);
}

std::vector<double> target_distribution(const StateGraph& g) {
  std::vector<double> r = g.rewards();
  const double z = std::accumulate(r.begin(), r.end(), 0.0);
  for (double& v : r) v /= z;
  return r;
}

exact::EdgeValues<double> forward_edge_log_probs(const StateGraph& g, const ForwardPolicy& policy) {
  const std::vector<State> states(g.states.begin(), g.states.end() - 1);
  const Matrix lp = policy.log_probs(states);
  exact::EdgeValues<double> out(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) out[e] = lp(g.edges[e].src, g.edges[e].action);
  return out;
}

exact::EdgeValues<double> backward_edge_log_probs(const StateGraph& g, const BackwardPolicy& policy) {
  const std::vector<State> states(g.states.begin() + 1, g.states.end() - 1);
  exact::EdgeValues<double> out(g.edges.size(), 0.0);
  if (states.empty()) return out;
  const Matrix lp = policy.log_probs(states);
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (!g.is_terminal_edge(static_cast<int>(e))) out[e] = lp(g.edges[e].dst - 1, g.edges[e].action);
  return out;
}

// ---------------------------------------------------------------------------

ModeSet::ModeSet(const std::vector<std::uint64_t>& keys, const std::vector<double>& rewards, double quantile) {
  if (keys.size() != rewards.size() || keys.empty()) throw ContractError("ModeSet: keys/rewards mismatch");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ContractError("ModeSet: quantile must lie in (0, 1]");
  std::vector<double> sorted = rewards;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(quantile * sorted.size())));
  threshold_ = sorted[std::min(count, sorted.size()) - 1];
  for (std::size_t i = 0; i < keys.size(); ++i)
    if (rewards[i] >= threshold_) keys_.insert(keys[i]);
}

ModeSet ModeSet::from_graph(const Environment& env, const StateGraph& g, double quantile) {
  std::vector<std::uint64_t> keys;
  for (int x : g.terminating) keys.push_back(env.index(g.states[x]));
  return ModeSet(keys, g.rewards(), quantile);
}

ModeSet ModeSet::from_sequence_table(const SequenceEnv& env, double quantile) {
  const auto& table = env.rewards();
  std::vector<std::uint64_t> keys(table.size());
  State x(env.length());
  for (std::uint64_t i = 0; i < table.size(); ++i) {
    std::uint64_t r = i;
    for (int j = env.length() - 1; j >= 0; --j) {
      x[j] = static_cast<int>(r % env.alphabet());
      r /= env.alphabet();
    }
    keys[i] = env.index(x);
  }
  return ModeSet(keys, table, quantile);
}

std::size_t mode_count(const Environment& env, const ForwardPolicy& policy, const ModeSet& modes, int n,
                       std::unordered_set<std::uint64_t>& seen, Rng& rng) {
  for (const auto& tau : sample_forward(env, policy, n, rng)) {
    const std::uint64_t key = env.index(tau.terminal());
    if (modes.contains(key)) seen.insert(key);
  }
  return seen.size();
}

// ---------------------------------------------------------------------------

namespace exact {

double log_partition(const StateGraph& g) {
  std::vector<double> lr;
  for (int x : g.terminating) lr.push_back(g.log_reward[x]);
  return log_sum_exp(lr);
}

std::vector<std::vector<int>> enumerate_trajectories(const StateGraph& g, std::size_t cap) {
  std::vector<std::vector<int>> out;
  std::vector<int> path;
  // Iterative depth-first search over out-edge positions.
  std::vector<std::size_t> pos{0};
  std::vector<int> node{0};
  while (!node.empty()) {
    const int v = node.back();
    if (v == g.sink()) {
      out.push_back(path);
      if (out.size() > cap) throw TooLargeError("enumerate_trajectories: too many trajectories");
      node.pop_back();
      pos.pop_back();
      path.pop_back();
      continue;
    }
    std::size_t& k = pos.back();
    if (k == g.out_edges[v].size()) {
      node.pop_back();
      pos.pop_back();
      if (!path.empty()) path.pop_back();
      continue;
    }
    const int e = g.out_edges[v][k++];
    path.push_back(e);
    node.push_back(g.edges[e].dst);
    pos.push_back(0);
  }
  return out;
}

PerfectFlow perfect_flow(const StateGraph& g) {
  PerfectFlow f;
  const std::size_t m = g.edges.size();
  f.log_pf.assign(m, 0.0);
  f.log_pb.assign(m, 0.0);
  f.log_flow.assign(g.size(), 0.0);
  // Edge flow F(s -> s') = F(s') / |Pa(s')| (uniform backward split), and
  // F(x -> sf) = R(x).
  std::vector<double> edge_flow(m, 0.0);
  for (int v = g.sink() - 1; v >= 0; --v) {
    std::vector<double> logs;
    for (int e : g.out_edges[v]) {
      const int w = g.edges[e].dst;
      edge_flow[e] = w == g.sink() ? g.log_reward[v]
                                   : f.log_flow[w] - std::log(static_cast<double>(g.in_edges[w].size()));
      logs.push_back(edge_flow[e]);
    }
    f.log_flow[v] = log_sum_exp(logs);
  }
  for (std::size_t e = 0; e < m; ++e) {
    const auto& edge = g.edges[e];
    f.log_pf[e] = edge_flow[e] - f.log_flow[edge.src];
    if (edge.dst != g.sink()) f.log_pb[e] = edge_flow[e] - f.log_flow[edge.dst];
  }
  f.log_z = f.log_flow[0];
  f.log_flow[g.sink()] = f.log_z;
  return f;
}

}  // namespace exact

}  // namespace gflow
