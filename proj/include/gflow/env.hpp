#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gflow/autodiff.hpp"
#include "gflow/mlp.hpp"

namespace gflow {

/// Environment-specific state encoding: grid coordinates, sequence symbols
/// (-1 = empty slot) or a node id for explicit DAGs.
using State = std::vector<int>;

struct Transition {
  int action;
  State state;
  bool operator==(const Transition&) const = default;
};

struct SinkHasNoChildren : ContractError {
  using ContractError::ContractError;
};
struct RootHasNoParents : ContractError {
  using ContractError::ContractError;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct TooLargeError : std::length_error {
  using std::length_error::length_error;
};

/// A finite DAG with source s0, sink sf and a strictly positive reward on
/// terminating states (the parents of sf). Immutable after construction.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual State initial() const = 0;
  virtual State sink() const = 0;
  bool is_sink(const State& s) const { return s == sink(); }
  bool is_initial(const State& s) const { return s == initial(); }

  /// Children in a fixed order; throws SinkHasNoChildren at sf.
  virtual std::vector<Transition> children(const State& s) const = 0;
  /// Parents, the exact inverse of children; throws RootHasNoParents at s0.
  virtual std::vector<Transition> parents(const State& s) const = 0;
  virtual double reward(const State& x) const = 0;

  virtual int feature_dim() const = 0;
  virtual void encode(const State& s, Eigen::Ref<Vector> out) const = 0;
  Vector encode(const State& s) const;

  /// Width of every policy head. Forward actions use their action id as
  /// slot; backward actions reuse the id of the edge they reverse.
  virtual int action_count() const = 0;
  virtual int stop_action() const = 0;
  /// True when every complete trajectory has the same length.
  virtual bool graded() const = 0;

  /// Number of non-sink states and a dense index into [0, state_count()).
  virtual std::uint64_t state_count() const = 0;
  virtual std::uint64_t index(const State& s) const = 0;

  virtual bool is_terminating(const State& s) const;
  /// Terminating state whose only child is the sink.
  virtual bool is_terminal_only(const State& s) const;

  Mask forward_mask(const std::vector<State>& states) const;
  Mask backward_mask(const std::vector<State>& states) const;
};

// ---------------------------------------------------------------------------

struct HyperGridRewards {
  double r0 = 1e-2;
  double r1 = 0.5;
  double r2 = 2.0;
};

/// D-dimensional grid of height N. Actions: increment coordinate d (id d)
/// or stop (id D), which is available everywhere.
class HyperGrid final : public Environment {
 public:
  HyperGrid(int dim, int height, HyperGridRewards rewards = {});

  std::string name() const override { return "hypergrid"; }
  State initial() const override { return State(dim_, 0); }
  State sink() const override { return State(dim_, -1); }
  std::vector<Transition> children(const State& s) const override;
  std::vector<Transition> parents(const State& s) const override;
  double reward(const State& x) const override;
  int feature_dim() const override { return dim_ * height_; }
  using Environment::encode;
  void encode(const State& s, Eigen::Ref<Vector> out) const override;
  int action_count() const override { return dim_ + 1; }
  int stop_action() const override { return dim_; }
  bool graded() const override { return false; }
  std::uint64_t state_count() const override { return count_; }
  std::uint64_t index(const State& s) const override;
  bool is_terminating(const State& s) const override { return !is_sink(s); }

  int dim() const { return dim_; }
  int height() const { return height_; }
  const HyperGridRewards& rewards() const { return rewards_; }
  State state_at(std::uint64_t index) const;

 private:
  void check(const State& s) const;
  int dim_;
  int height_;
  HyperGridRewards rewards_;
  std::uint64_t count_;
};

// ---------------------------------------------------------------------------

struct SequenceRewardConfig {
  double beta = 3.0;
  double r_min = 1e-3;
  double r_max = 10.0;
  int modes = 4;
  double width = 1.0;
  std::uint64_t seed = 0;
};

/// Fill-in sequences of length D over N symbols. From s0 = (-1,...,-1) each
/// action writes symbol v into empty slot i (id i*N + v); a complete
/// sequence only has the stop action (id N*D).
class SequenceEnv final : public Environment {
 public:
  /// Raw table indexed by base-N value of the sequence (slot 0 most
  /// significant); shaped by exponent beta and rescaled into [r_min, r_max].
  SequenceEnv(int length, int alphabet, std::vector<double> raw_table, double beta,
              double r_min, double r_max);

  /// Seeded sum of Gaussian bumps in Hamming distance around random modes.
  static SequenceEnv synthetic(int length, int alphabet, const SequenceRewardConfig& cfg);
  /// Reads "symbols<TAB>reward" lines, symbols comma separated.
  static std::vector<double> load_table(const std::string& path, int length, int alphabet);
  static void save_table(const std::string& path, int length, int alphabet,
                         const std::vector<double>& raw);

  std::string name() const override { return "sequence"; }
  State initial() const override { return State(length_, -1); }
  State sink() const override { return State(length_, alphabet_); }
  std::vector<Transition> children(const State& s) const override;
  std::vector<Transition> parents(const State& s) const override;
  double reward(const State& x) const override;
  int feature_dim() const override { return length_ * (alphabet_ + 1); }
  using Environment::encode;
  void encode(const State& s, Eigen::Ref<Vector> out) const override;
  int action_count() const override { return length_ * alphabet_ + 1; }
  int stop_action() const override { return length_ * alphabet_; }
  bool graded() const override { return true; }
  std::uint64_t state_count() const override { return count_; }
  std::uint64_t index(const State& s) const override;
  bool is_terminating(const State& s) const override;
  bool is_terminal_only(const State& s) const override { return is_terminating(s); }

  int length() const { return length_; }
  int alphabet() const { return alphabet_; }
  std::uint64_t table_index(const State& x) const;
  const std::vector<double>& rewards() const { return rewards_; }

 private:
  void check(const State& s) const;
  int length_;
  int alphabet_;
  std::vector<double> rewards_;
  std::uint64_t count_;
};

// ---------------------------------------------------------------------------

struct DagEdge {
  int src;
  int dst;
};

/// Explicitly listed DAG over nodes 0..n-1 where node 0 is s0 and node n-1
/// is sf. States are {node}. Action ids come from a greedy edge colouring so
/// they are distinct among a node's children and among its parents; the
/// stop action takes the last id.
class ExplicitDag final : public Environment {
 public:
  /// `rewards[v]` > 0 marks v as terminating; edges into sf are implied.
  ExplicitDag(int nodes, std::vector<DagEdge> edges, std::vector<double> rewards);

  /// Random graded DAG: layer sizes (first must be 1), every last-layer node
  /// terminates and nothing else does.
  static ExplicitDag random_graded(const std::vector<int>& layer_sizes, Rng& rng,
                                   double extra_edge_prob = 0.4);
  /// Random DAG with `inner` non-sink nodes where stops can occur anywhere.
  static ExplicitDag random(int inner, Rng& rng, double edge_prob = 0.3, double stop_prob = 0.4);

  std::string name() const override { return "dag"; }
  State initial() const override { return {0}; }
  State sink() const override { return {nodes_ - 1}; }
  std::vector<Transition> children(const State& s) const override;
  std::vector<Transition> parents(const State& s) const override;
  double reward(const State& x) const override;
  int feature_dim() const override { return nodes_ - 1; }
  using Environment::encode;
  void encode(const State& s, Eigen::Ref<Vector> out) const override;
  int action_count() const override { return actions_; }
  int stop_action() const override { return actions_ - 1; }
  bool graded() const override { return graded_; }
  std::uint64_t state_count() const override { return static_cast<std::uint64_t>(nodes_ - 1); }
  std::uint64_t index(const State& s) const override;

  int node_count() const { return nodes_; }

 private:
  int node(const State& s) const;
  int nodes_;
  int actions_ = 0;
  bool graded_ = false;
  std::vector<double> rewards_;
  std::vector<std::vector<Transition>> children_;
  std::vector<std::vector<Transition>> parents_;
};

// ---------------------------------------------------------------------------

struct GraphEdge {
  int src;
  int dst;
  int action;
};

/// Enumerated state graph. Ids are topologically ordered: 0 is s0 and the
/// last id is the sink.
struct StateGraph {
  std::vector<State> states;
  std::vector<int> layer;
  std::vector<std::vector<int>> layers;  // non-sink ids grouped by layer
  std::vector<GraphEdge> edges;
  std::vector<std::vector<int>> out_edges;
  std::vector<std::vector<int>> in_edges;
  std::vector<int> terminating;        // ids of terminating states
  std::vector<int> terminal_edge;      // per state, edge id into the sink or -1
  std::vector<double> log_reward;      // per state, -inf if not terminating
  bool graded = false;
  int max_length = 0;                  // longest trajectory, counted in edges

  int size() const { return static_cast<int>(states.size()); }
  int sink() const { return size() - 1; }
  bool is_terminal_edge(int e) const { return edges[e].dst == sink(); }
  int find(const Environment& env, const State& s) const;
  std::vector<double> rewards() const;  // over `terminating`

  std::vector<std::int64_t> lookup;  // env.index -> id, sink at state_count
};

inline constexpr std::uint64_t kDefaultStateCap = 2'000'000;

StateGraph enumerate_states(const Environment& env, std::uint64_t cap = kDefaultStateCap);

}  // namespace gflow
