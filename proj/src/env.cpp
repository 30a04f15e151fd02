#include "gflow/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace gflow {

Vector Environment::encode(const State& s) const {
  Vector out(feature_dim());
  encode(s, out);
  return out;
}

bool Environment::is_terminating(const State& s) const {
  if (is_sink(s)) return false;
  for (const auto& t : children(s))
    if (is_sink(t.state)) return true;
  return false;
}

bool Environment::is_terminal_only(const State& s) const {
  if (is_sink(s)) return false;
  auto ch = children(s);
  return ch.size() == 1 && is_sink(ch.front().state);
}

Mask Environment::forward_mask(const std::vector<State>& states) const {
  Mask m = Mask::Constant(static_cast<Eigen::Index>(states.size()), action_count(), false);
  for (std::size_t i = 0; i < states.size(); ++i)
    for (const auto& t : children(states[i])) m(i, t.action) = true;
  return m;
}

Mask Environment::backward_mask(const std::vector<State>& states) const {
  Mask m = Mask::Constant(static_cast<Eigen::Index>(states.size()), action_count(), false);
  for (std::size_t i = 0; i < states.size(); ++i)
    for (const auto& t : parents(states[i])) m(i, t.action) = true;
  return m;
}

// ---------------------------------------------------------------------------

HyperGrid::HyperGrid(int dim, int height, HyperGridRewards rewards)
    : dim_(dim), height_(height), rewards_(rewards), count_(1) {
  if (dim < 1 || height < 2) throw DomainError("HyperGrid needs dim >= 1 and height >= 2");
  if (rewards.r0 <= 0.0 || rewards.r1 < 0.0 || rewards.r2 < 0.0)
    throw DomainError("HyperGrid rewards must keep R(x) > 0");
  for (int d = 0; d < dim; ++d) {
    if (count_ > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(height))
      throw TooLargeError("HyperGrid state count overflows");
    count_ *= static_cast<std::uint64_t>(height);
  }
}

void HyperGrid::check(const State& s) const {
  if (static_cast<int>(s.size()) != dim_) throw DomainError("HyperGrid: wrong state dimension");
  if (is_sink(s)) return;
  for (int v : s)
    if (v < 0 || v >= height_) throw DomainError("HyperGrid: coordinate out of range");
}

std::vector<Transition> HyperGrid::children(const State& s) const {
  check(s);
  if (is_sink(s)) throw SinkHasNoChildren("HyperGrid: the sink has no children");
  std::vector<Transition> out;
  for (int d = 0; d < dim_; ++d) {
    if (s[d] + 1 < height_) {
      State next = s;
      ++next[d];
      out.push_back({d, std::move(next)});
    }
  }
  out.push_back({dim_, sink()});
  return out;
}

std::vector<Transition> HyperGrid::parents(const State& s) const {
  check(s);
  if (is_initial(s)) throw RootHasNoParents("HyperGrid: the initial state has no parents");
  std::vector<Transition> out;
  if (is_sink(s)) {
    out.reserve(count_);
    for (std::uint64_t i = 0; i < count_; ++i) out.push_back({dim_, state_at(i)});
    return out;
  }
  for (int d = 0; d < dim_; ++d) {
    if (s[d] > 0) {
      State prev = s;
      --prev[d];
      out.push_back({d, std::move(prev)});
    }
  }
  return out;
}

double HyperGrid::reward(const State& x) const {
  check(x);
  if (is_sink(x)) throw DomainError("HyperGrid: the sink has no reward");
  // |x/(N-1) - 1/2| = k / den, compared in integers to keep band edges exact.
  const long den = 2L * (height_ - 1);
  bool outer = true;
  bool inner = true;
  for (int v : x) {
    const long k = std::labs(2L * v - (height_ - 1));
    outer = outer && (4 * k > den) && (2 * k <= den);
    inner = inner && (10 * k > 3 * den) && (5 * k <= 2 * den);
  }
  return rewards_.r0 + (outer ? rewards_.r1 : 0.0) + (inner ? rewards_.r2 : 0.0);
}

void HyperGrid::encode(const State& s, Eigen::Ref<Vector> out) const {
  check(s);
  if (out.size() != feature_dim()) throw DimensionError("HyperGrid::encode: wrong output size");
  out.setZero();
  if (is_sink(s)) return;
  for (int d = 0; d < dim_; ++d) out[d * height_ + s[d]] = 1.0;
}

std::uint64_t HyperGrid::index(const State& s) const {
  check(s);
  if (is_sink(s)) return count_;
  std::uint64_t idx = 0;
  for (int d = dim_ - 1; d >= 0; --d) idx = idx * height_ + static_cast<std::uint64_t>(s[d]);
  return idx;
}

State HyperGrid::state_at(std::uint64_t index) const {
  if (index >= count_) throw DomainError("HyperGrid::state_at: index out of range");
  State s(dim_);
  for (int d = 0; d < dim_; ++d) {
    s[d] = static_cast<int>(index % height_);
    index /= height_;
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t checked_pow(std::uint64_t base, int exp) {
  std::uint64_t r = 1;
  for (int i = 0; i < exp; ++i) {
    if (r > std::numeric_limits<std::uint64_t>::max() / base) throw TooLargeError("state count overflows");
    r *= base;
  }
  return r;
}

}  // namespace

SequenceEnv::SequenceEnv(int length, int alphabet, std::vector<double> raw, double beta, double r_min,
                         double r_max)
    : length_(length), alphabet_(alphabet) {
  if (length < 1 || alphabet < 1) throw DomainError("SequenceEnv needs length, alphabet >= 1");
  if (!(r_max >= r_min)) throw DomainError("SequenceEnv: r_max < r_min");
  count_ = checked_pow(static_cast<std::uint64_t>(alphabet) + 1, length);
  const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(alphabet), length);
  if (raw.size() != n) throw DimensionError("SequenceEnv: reward table size must be alphabet^length");
  for (double& v : raw) {
    if (!std::isfinite(v) || v < 0.0) throw DomainError("SequenceEnv: raw rewards must be finite and >= 0");
    if (v == 0.0) v = 1e-6;
    v = std::pow(v, beta);
  }
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double mn = *lo;
  const double mx = *hi;
  rewards_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = mx > mn ? (raw[i] - mn) / (mx - mn) : 1.0;
    rewards_[i] = std::max(r_min + u * (r_max - r_min), 1e-6);
  }
}

SequenceEnv SequenceEnv::synthetic(int length, int alphabet, const SequenceRewardConfig& cfg) {
  if (cfg.modes < 1) throw DomainError("SequenceEnv::synthetic: need at least one mode");
  Rng rng(cfg.seed);
  std::vector<State> modes(cfg.modes, State(length));
  for (auto& m : modes)
    for (int& v : m) v = static_cast<int>(rng() % static_cast<std::uint64_t>(alphabet));
  const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(alphabet), length);
  std::vector<double> raw(n);
  State x(length);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint64_t r = i;
    for (int j = length - 1; j >= 0; --j) {
      x[j] = static_cast<int>(r % alphabet);
      r /= alphabet;
    }
    double total = 0.0;
    for (const auto& m : modes) {
      int h = 0;
      for (int j = 0; j < length; ++j) h += x[j] != m[j];
      total += std::exp(-0.5 * (h / cfg.width) * (h / cfg.width));
    }
    raw[i] = total;
  }
  return SequenceEnv(length, alphabet, std::move(raw), cfg.beta, cfg.r_min, cfg.r_max);
}

std::vector<double> SequenceEnv::load_table(const std::string& path, int length, int alphabet) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open reward table: " + path);
  const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(alphabet), length);
  std::vector<double> raw(n, 0.0);
  std::vector<bool> seen(n, false);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DomainError(path + ":" + std::to_string(lineno) + ": expected symbols<TAB>reward");
    std::stringstream syms(line.substr(0, tab));
    std::string tok;
    std::uint64_t idx = 0;
    int count = 0;
    while (std::getline(syms, tok, ',')) {
      const int v = std::stoi(tok);
      if (v < 0 || v >= alphabet) throw DomainError(path + ":" + std::to_string(lineno) + ": bad symbol");
      idx = idx * alphabet + static_cast<std::uint64_t>(v);
      ++count;
    }
    if (count != length) throw DomainError(path + ":" + std::to_string(lineno) + ": wrong sequence length");
    raw[idx] = std::stod(line.substr(tab + 1));
    seen[idx] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw DomainError(path + ": reward table does not cover every sequence");
  return raw;
}

void SequenceEnv::save_table(const std::string& path, int length, int alphabet,
                             const std::vector<double>& raw) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write reward table: " + path);
  out << std::setprecision(17);
  State x(length);
  for (std::uint64_t i = 0; i < raw.size(); ++i) {
    std::uint64_t r = i;
    for (int j = length - 1; j >= 0; --j) {
      x[j] = static_cast<int>(r % alphabet);
      r /= alphabet;
    }
    for (int j = 0; j < length; ++j) out << (j ? "," : "") << x[j];
    out << '\t' << raw[i] << '\n';
  }
}

void SequenceEnv::check(const State& s) const {
  if (static_cast<int>(s.size()) != length_) throw DomainError("SequenceEnv: wrong state length");
  if (is_sink(s)) return;
  for (int v : s)
    if (v < -1 || v >= alphabet_) throw DomainError("SequenceEnv: symbol out of range");
}

bool SequenceEnv::is_terminating(const State& s) const {
  check(s);
  if (is_sink(s)) return false;
  return std::none_of(s.begin(), s.end(), [](int v) { return v < 0; });
}

std::vector<Transition> SequenceEnv::children(const State& s) const {
  check(s);
  if (is_sink(s)) throw SinkHasNoChildren("SequenceEnv: the sink has no children");
  std::vector<Transition> out;
  for (int i = 0; i < length_; ++i) {
    if (s[i] >= 0) continue;
    for (int v = 0; v < alphabet_; ++v) {
      State next = s;
      next[i] = v;
      out.push_back({i * alphabet_ + v, std::move(next)});
    }
  }
  if (out.empty()) out.push_back({stop_action(), sink()});
  return out;
}

std::vector<Transition> SequenceEnv::parents(const State& s) const {
  check(s);
  if (is_initial(s)) throw RootHasNoParents("SequenceEnv: the initial state has no parents");
  std::vector<Transition> out;
  if (is_sink(s)) {
    const std::uint64_t n = rewards_.size();
    out.reserve(n);
    State x(length_);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint64_t r = i;
      for (int j = length_ - 1; j >= 0; --j) {
        x[j] = static_cast<int>(r % alphabet_);
        r /= alphabet_;
      }
      out.push_back({stop_action(), x});
    }
    return out;
  }
  for (int i = 0; i < length_; ++i) {
    if (s[i] < 0) continue;
    State prev = s;
    prev[i] = -1;
    out.push_back({i * alphabet_ + s[i], std::move(prev)});
  }
  return out;
}

std::uint64_t SequenceEnv::table_index(const State& x) const {
  if (!is_terminating(x)) throw DomainError("SequenceEnv: reward needs a complete sequence");
  std::uint64_t idx = 0;
  for (int v : x) idx = idx * alphabet_ + static_cast<std::uint64_t>(v);
  return idx;
}

double SequenceEnv::reward(const State& x) const { return rewards_[table_index(x)]; }

void SequenceEnv::encode(const State& s, Eigen::Ref<Vector> out) const {
  check(s);
  if (out.size() != feature_dim()) throw DimensionError("SequenceEnv::encode: wrong output size");
  out.setZero();
  if (is_sink(s)) return;
  for (int i = 0; i < length_; ++i) out[i * (alphabet_ + 1) + s[i] + 1] = 1.0;
}

std::uint64_t SequenceEnv::index(const State& s) const {
  check(s);
  if (is_sink(s)) return count_;
  std::uint64_t idx = 0;
  for (int v : s) idx = idx * (alphabet_ + 1) + static_cast<std::uint64_t>(v + 1);
  return idx;
}

// ---------------------------------------------------------------------------

ExplicitDag::ExplicitDag(int nodes, std::vector<DagEdge> edges, std::vector<double> rewards)
    : nodes_(nodes), rewards_(std::move(rewards)) {
  if (nodes < 2) throw DomainError("ExplicitDag needs at least s0 and the sink");
  const int sink_id = nodes - 1;
  if (static_cast<int>(rewards_.size()) != nodes) throw DimensionError("ExplicitDag: one reward per node");
  std::set<std::pair<int, int>> seen;
  for (const auto& e : edges) {
    if (e.src < 0 || e.src >= sink_id || e.dst <= 0 || e.dst >= sink_id)
      throw DomainError("ExplicitDag: edge endpoint out of range (sink edges are implied)");
    if (!seen.insert({e.src, e.dst}).second) throw DomainError("ExplicitDag: duplicate edge");
  }
  for (int v = 0; v < sink_id; ++v)
    if (!(rewards_[v] >= 0.0) || !std::isfinite(rewards_[v])) throw DomainError("ExplicitDag: bad reward");
  rewards_[sink_id] = 0.0;

  // Greedy colouring: each edge gets the smallest id unused at its source's
  // children and its target's parents.
  std::vector<std::set<int>> used_out(nodes), used_in(nodes);
  std::vector<int> colour(edges.size());
  int max_colour = -1;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    int c = 0;
    while (used_out[edges[i].src].count(c) || used_in[edges[i].dst].count(c)) ++c;
    colour[i] = c;
    used_out[edges[i].src].insert(c);
    used_in[edges[i].dst].insert(c);
    max_colour = std::max(max_colour, c);
  }
  actions_ = max_colour + 2;

  children_.assign(nodes, {});
  parents_.assign(nodes, {});
  for (std::size_t i = 0; i < edges.size(); ++i) {
    children_[edges[i].src].push_back({colour[i], {edges[i].dst}});
    parents_[edges[i].dst].push_back({colour[i], {edges[i].src}});
  }
  for (int v = 0; v < sink_id; ++v) {
    if (rewards_[v] > 0.0) {
      children_[v].push_back({actions_ - 1, {sink_id}});
      parents_[sink_id].push_back({actions_ - 1, {v}});
    }
  }
  auto by_action = [](const Transition& a, const Transition& b) { return a.action < b.action; };
  for (int v = 0; v < nodes; ++v) {
    std::sort(children_[v].begin(), children_[v].end(), by_action);
    std::sort(parents_[v].begin(), parents_[v].end(), by_action);
  }

  if (!parents_[0].empty()) throw DomainError("ExplicitDag: s0 must have no parents");
  for (int v = 0; v < sink_id; ++v) {
    if (children_[v].empty()) throw DomainError("ExplicitDag: node " + std::to_string(v) + " is a dead end");
    if (v > 0 && parents_[v].empty())
      throw DomainError("ExplicitDag: node " + std::to_string(v) + " is unreachable");
  }

  // Kahn's algorithm; also tracks shortest and longest depth from s0.
  std::vector<int> indeg(nodes, 0);
  for (int v = 0; v < nodes; ++v) indeg[v] = static_cast<int>(parents_[v].size());
  std::vector<int> lo(nodes, 0), hi(nodes, 0), queue{0};
  std::vector<bool> reached(nodes, false);
  reached[0] = true;
  int visited = 0;
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const int v = queue[q];
    ++visited;
    for (const auto& t : children_[v]) {
      const int w = t.state[0];
      if (!reached[w]) {
        lo[w] = lo[v] + 1;
        hi[w] = hi[v] + 1;
        reached[w] = true;
      } else {
        lo[w] = std::min(lo[w], lo[v] + 1);
        hi[w] = std::max(hi[w], hi[v] + 1);
      }
      if (--indeg[w] == 0) queue.push_back(w);
    }
  }
  if (visited != nodes) throw DomainError("ExplicitDag: graph has a cycle");
  graded_ = true;
  int depth = -1;
  for (int v = 0; v < nodes && graded_; ++v) {
    if (lo[v] != hi[v]) graded_ = false;
    if (v < sink_id && rewards_[v] > 0.0) {
      if (children_[v].size() != 1) graded_ = false;
      if (depth < 0) depth = lo[v];
      if (lo[v] != depth) graded_ = false;
    }
  }
}

ExplicitDag ExplicitDag::random_graded(const std::vector<int>& layer_sizes, Rng& rng,
                                       double extra_edge_prob) {
  if (layer_sizes.size() < 2 || layer_sizes.front() != 1)
    throw DomainError("random_graded: need >= 2 layers starting with one node");
  std::vector<int> start{0};
  for (int s : layer_sizes) {
    if (s < 1) throw DomainError("random_graded: empty layer");
    start.push_back(start.back() + s);
  }
  const int inner = start.back();
  auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
  std::set<std::pair<int, int>> edges;
  for (std::size_t t = 0; t + 1 < layer_sizes.size(); ++t) {
    const int a = start[t], na = layer_sizes[t], b = start[t + 1], nb = layer_sizes[t + 1];
    for (int j = 0; j < nb; ++j) edges.insert({a + pick(na), b + j});
    for (int i = 0; i < na; ++i) {
      bool has_child = false;
      for (int j = 0; j < nb; ++j) has_child = has_child || edges.count({a + i, b + j});
      if (!has_child) edges.insert({a + i, b + pick(nb)});
      for (int j = 0; j < nb; ++j)
        if (uniform01(rng) < extra_edge_prob) edges.insert({a + i, b + j});
    }
  }
  std::vector<double> rewards(inner + 1, 0.0);
  for (int v = start[layer_sizes.size() - 1]; v < inner; ++v) rewards[v] = 0.1 + 2.9 * uniform01(rng);
  std::vector<DagEdge> list;
  for (const auto& [s, d] : edges) list.push_back({s, d});
  return ExplicitDag(inner + 1, std::move(list), std::move(rewards));
}

ExplicitDag ExplicitDag::random(int inner, Rng& rng, double edge_prob, double stop_prob) {
  if (inner < 1) throw DomainError("ExplicitDag::random: need at least one inner node");
  std::set<std::pair<int, int>> edges;
  for (int v = 1; v < inner; ++v) {
    edges.insert({static_cast<int>(rng() % static_cast<std::uint64_t>(v)), v});
    for (int u = 0; u < v; ++u)
      if (uniform01(rng) < edge_prob) edges.insert({u, v});
  }
  std::vector<bool> has_child(inner, false);
  for (const auto& e : edges) has_child[e.first] = true;
  std::vector<double> rewards(inner + 1, 0.0);
  for (int v = 0; v < inner; ++v)
    if (!has_child[v] || uniform01(rng) < stop_prob) rewards[v] = 0.1 + 2.9 * uniform01(rng);
  std::vector<DagEdge> list;
  for (const auto& [s, d] : edges) list.push_back({s, d});
  return ExplicitDag(inner + 1, std::move(list), std::move(rewards));
}

int ExplicitDag::node(const State& s) const {
  if (s.size() != 1 || s[0] < 0 || s[0] >= nodes_) throw DomainError("ExplicitDag: invalid state");
  return s[0];
}

std::vector<Transition> ExplicitDag::children(const State& s) const {
  const int v = node(s);
  if (v == nodes_ - 1) throw SinkHasNoChildren("ExplicitDag: the sink has no children");
  return children_[v];
}

std::vector<Transition> ExplicitDag::parents(const State& s) const {
  const int v = node(s);
  if (v == 0) throw RootHasNoParents("ExplicitDag: s0 has no parents");
  return parents_[v];
}

double ExplicitDag::reward(const State& x) const {
  const int v = node(x);
  if (v == nodes_ - 1 || rewards_[v] <= 0.0) throw DomainError("ExplicitDag: not a terminating state");
  return rewards_[v];
}

void ExplicitDag::encode(const State& s, Eigen::Ref<Vector> out) const {
  const int v = node(s);
  if (out.size() != feature_dim()) throw DimensionError("ExplicitDag::encode: wrong output size");
  out.setZero();
  if (v < nodes_ - 1) out[v] = 1.0;
}

std::uint64_t ExplicitDag::index(const State& s) const { return static_cast<std::uint64_t>(node(s)); }

}  // namespace gflow
