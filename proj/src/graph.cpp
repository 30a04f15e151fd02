#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gflow/env.hpp"

namespace gflow {

int StateGraph::find(const Environment& env, const State& s) const {
  const std::uint64_t key = env.index(s);
  if (key >= lookup.size() || lookup[key] < 0) throw DomainError("StateGraph::find: unknown state");
  return static_cast<int>(lookup[key]);
}

std::vector<double> StateGraph::rewards() const {
  std::vector<double> out;
  out.reserve(terminating.size());
  for (int v : terminating) out.push_back(std::exp(log_reward[v]));
  return out;
}

StateGraph enumerate_states(const Environment& env, std::uint64_t cap) {
  const std::uint64_t space = env.state_count();
  if (space > cap) throw TooLargeError("enumerate_states: " + std::to_string(space) + " states exceed cap");

  // Breadth-first discovery over the non-sink states.
  std::vector<std::int64_t> found(space + 1, -1);
  std::vector<State> order{env.initial()};
  found[env.index(order[0])] = 0;
  struct RawEdge {
    int src;
    std::uint64_t dst_key;
    int action;
  };
  std::vector<RawEdge> raw;
  std::vector<bool> stops;
  for (std::size_t q = 0; q < order.size(); ++q) {
    bool stop = false;
    for (auto& t : env.children(order[q])) {
      if (env.is_sink(t.state)) {
        stop = true;
        raw.push_back({static_cast<int>(q), space, t.action});
        continue;
      }
      const std::uint64_t key = env.index(t.state);
      if (found[key] < 0) {
        found[key] = static_cast<std::int64_t>(order.size());
        order.push_back(std::move(t.state));
      }
      raw.push_back({static_cast<int>(q), key, t.action});
    }
    stops.push_back(stop);
  }
  const int n = static_cast<int>(order.size());
  const int sink_tmp = n;

  // Longest-path depth via Kahn's order; also the shortest depth to detect grading.
  std::vector<std::vector<std::pair<int, int>>> out(n + 1);
  std::vector<int> indeg(n + 1, 0);
  for (const auto& e : raw) {
    const int d = e.dst_key == space ? sink_tmp : static_cast<int>(found[e.dst_key]);
    out[e.src].push_back({d, e.action});
    ++indeg[d];
  }
  std::vector<int> hi(n + 1, 0), lo(n + 1, std::numeric_limits<int>::max()), queue{0};
  lo[0] = 0;
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const int v = queue[q];
    for (const auto& [w, a] : out[v]) {
      hi[w] = std::max(hi[w], hi[v] + 1);
      lo[w] = std::min(lo[w], lo[v] + 1);
      if (--indeg[w] == 0) queue.push_back(w);
    }
  }
  if (static_cast<int>(queue.size()) != n + 1) throw DomainError("enumerate_states: graph has a cycle");

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) { return hi[a] < hi[b]; });
  std::vector<int> new_id(n + 1);
  for (int i = 0; i < n; ++i) new_id[perm[i]] = i;
  new_id[sink_tmp] = n;

  StateGraph g;
  g.states.resize(n + 1);
  g.layer.resize(n + 1);
  g.lookup.assign(space + 1, -1);
  for (int i = 0; i < n; ++i) {
    g.states[new_id[i]] = std::move(order[i]);
    g.layer[new_id[i]] = hi[i];
  }
  g.states[n] = env.sink();
  g.layer[n] = hi[sink_tmp];
  for (std::uint64_t k = 0; k <= space; ++k)
    if (found[k] >= 0) g.lookup[k] = new_id[found[k]];
  g.lookup[space] = n;

  const int depth = n > 0 ? g.layer[n - 1] : 0;
  g.layers.assign(depth + 1, {});
  for (int i = 0; i < n; ++i) g.layers[g.layer[i]].push_back(i);

  g.out_edges.assign(n + 1, {});
  g.in_edges.assign(n + 1, {});
  g.terminal_edge.assign(n + 1, -1);
  g.log_reward.assign(n + 1, -std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i) {
    const int src = perm[i];
    for (const auto& [w, a] : out[src]) {
      const int e = static_cast<int>(g.edges.size());
      g.edges.push_back({i, new_id[w], a});
      g.out_edges[i].push_back(e);
      g.in_edges[new_id[w]].push_back(e);
      if (w == sink_tmp) g.terminal_edge[i] = e;
    }
    if (stops[src]) {
      g.terminating.push_back(i);
      const double r = env.reward(g.states[i]);
      if (!(r > 0.0) || !std::isfinite(r)) throw DomainError("enumerate_states: reward must be positive");
      g.log_reward[i] = std::log(r);
    }
  }

  g.graded = true;
  int term_depth = -1;
  for (int i = 0; i < n && g.graded; ++i) {
    if (lo[perm[i]] != hi[perm[i]]) g.graded = false;
    if (g.terminal_edge[i] >= 0) {
      if (g.out_edges[i].size() != 1) g.graded = false;
      if (term_depth < 0) term_depth = g.layer[i];
      if (g.layer[i] != term_depth) g.graded = false;
    }
  }
  g.max_length = g.layer[n];
  return g;
}

}  // namespace gflow
