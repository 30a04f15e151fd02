#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "gflow/env.hpp"
#include "gflow/guide.hpp"
#include "gflow/metrics.hpp"
#include "gflow/trainers.hpp"

namespace gflow {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Strategy { DB_U, DB_B, TB_U, TB_B, TB_Sub, RL_U, RL_B, RL_T, RL_G };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);

struct RunConfig {
  // environment
  std::string env = "hypergrid";  // hypergrid | sequence
  int dim = 2;                    // grid dimension
  int height = 8;                 // grid height
  int length = 6;                 // sequence length
  int alphabet = 4;               // sequence alphabet
  std::uint64_t reward_seed = 0;
  std::string reward_table;       // optional path, sequence only
  // strategy and schedule
  Strategy strategy = Strategy::RL_U;
  int iterations = 1000;
  int batch = 64;
  double lambda = 0.99;
  double zeta = 0.01;
  double gamma = 0.99;
  double lr_policy = 1e-3;
  double lr_value = 5e-3;
  double lr_logz = 0.1;
  double subtb_base = 0.9;
  bool backward_value = true;
  ModelKind model = ModelKind::Mlp;
  std::vector<int> hidden{64, 64};
  // evaluation
  int cadence = 10;
  int mode_samples = 64;
  double mode_quantile = ModeSet::kDefaultQuantile;
  int acc_samples = 100000;            // Monte-Carlo Acc when not enumerable
  std::uint64_t exact_limit = 200000;  // largest state count evaluated exactly
  double guide_epsilon = HyperGridGuide::kStopEpsilon;
  std::size_t guide_capacity = 1000;
  // output
  std::vector<std::uint64_t> seeds{0};
  std::string out = "results";
  bool timing = false;
  bool checkpoint = true;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Flat `key = value` text, `#` starts a comment. Unknown keys are errors.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);

std::unique_ptr<Environment> make_environment(const RunConfig& cfg);

struct MetricsRecord {
  long iter = 0;
  double loss = 0.0;
  double d_tv = 0.0;
  double d_jsd = 0.0;
  double acc = 0.0;
  std::size_t modes = 0;
  double seconds = 0.0;
};

extern const char* const kMetricsHeader;
std::string format_record(const MetricsRecord& r);

/// One seeded training run: environment, agent, sampler state and metrics.
class Experiment {
 public:
  Experiment(const RunConfig& cfg, std::uint64_t seed);

  /// One training iteration; returns the loss (value-based) or the batch
  /// estimate of J_F (policy-based).
  double step();
  /// Metrics of the current policy; exact when the env is enumerable.
  MetricsRecord evaluate();

  long iteration() const { return iteration_; }
  const Environment& env() const { return *env_; }
  Agent& agent() { return *agent_; }
  const std::optional<TrpoReport>& last_trpo() const { return last_trpo_; }
  bool exact() const { return graph_.has_value(); }
  /// Exact P_F^T over the enumerated terminating states.
  std::vector<double> terminating_distribution() const;
  const StateGraph& graph() const { return *graph_; }

 private:
  RunConfig cfg_;
  std::uint64_t seed_;
  std::unique_ptr<Environment> env_;
  Rng rng_;
  Rng eval_rng_;
  std::unique_ptr<Agent> agent_;
  std::unique_ptr<Guide> guide_;
  std::optional<StateGraph> graph_;
  std::vector<double> target_;
  std::vector<double> reward_;
  double target_mean_reward_ = 0.0;
  ModeSet modes_;
  std::unordered_set<std::uint64_t> seen_;
  MixtureSchedule schedule_;
  long iteration_ = 0;
  double last_loss_ = 0.0;
  std::optional<TrpoReport> last_trpo_;
};

/// Trains one seed, writing CSV rows at every multiple of the cadence and at
/// the final iteration. Returns the rows written.
std::vector<MetricsRecord> run_seed(const RunConfig& cfg, std::uint64_t seed, std::ostream& csv);

/// Runs every seed into `<out>/<strategy>_seed<k>.csv` (plus a forward
/// policy checkpoint); returns the metrics file paths.
std::vector<std::string> run(const RunConfig& cfg);

// ---------------------------------------------------------------------------

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

MetricsTable read_metrics(const std::string& path);
/// Trailing moving average with the given window; window 1 is the identity.
std::vector<double> smooth(const std::vector<double>& series, int window);

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};

/// Final-row mean and sample std of each metric across runs, after
/// smoothing every column along iterations.
std::vector<MetricSummary> summarize(const std::vector<std::string>& paths, int window = 1);

}  // namespace gflow
