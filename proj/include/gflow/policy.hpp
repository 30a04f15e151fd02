#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gflow/autodiff.hpp"
#include "gflow/env.hpp"
#include "gflow/mlp.hpp"

namespace gflow {

enum class ModelKind { Mlp = 0, Tabular = 1 };

struct ModelSpec {
  ModelKind kind = ModelKind::Mlp;
  std::vector<int> hidden{64, 64};
};

/// Maps a batch of states to an M x outputs matrix, either through an MLP on
/// the environment encoding or by looking up one table row per state.
/// Tables start at zero; MLPs use Glorot initialisation.
class StateModel {
 public:
  StateModel(const Environment& env, int outputs, const ModelSpec& spec, Rng& rng);

  Var forward(Tape& tape, const std::vector<State>& states);
  Matrix evaluate(const std::vector<State>& states) const;

  ParameterSet& params() { return kind_ == ModelKind::Mlp ? mlp_.params() : table_; }
  const ParameterSet& params() const { return kind_ == ModelKind::Mlp ? mlp_.params() : table_; }
  ModelKind kind() const { return kind_; }
  /// Layer widths for MLPs, {rows, outputs} for tables.
  std::vector<int> dims() const;
  const Environment& env() const { return *env_; }

  /// Direct access to the table (tabular models only).
  Eigen::Map<Matrix> table();

 private:
  Matrix features(const std::vector<State>& states) const;
  std::vector<int> rows(const std::vector<State>& states) const;

  const Environment* env_;
  ModelKind kind_;
  int outputs_;
  Mlp mlp_;
  ParameterSet table_;
};

/// Row-wise log-softmax restricted to `mask`; other entries are -inf.
Matrix masked_log_softmax(const Matrix& logits, const Mask& mask);

/// Draws from a categorical given by log-probabilities by inverse CDF over
/// the column order; -inf entries are never chosen.
int sample_categorical(const Eigen::Ref<const Eigen::RowVectorXd>& log_probs, Rng& rng);

/// pi_F(s, a): masked categorical over the children of s.
class ForwardPolicy {
 public:
  ForwardPolicy(const Environment& env, const ModelSpec& spec, Rng& rng);

  Var log_probs(Tape& tape, const std::vector<State>& states);
  Matrix log_probs(const std::vector<State>& states) const;
  /// Throws ContractError when `action` is not available at `s`.
  double log_prob(const State& s, int action) const;
  std::pair<int, double> sample_action(const State& s, Rng& rng) const;

  StateModel& model() { return model_; }
  const StateModel& model() const { return model_; }
  ParameterSet& params() { return model_.params(); }
  const ParameterSet& params() const { return model_.params(); }

 private:
  const Environment* env_;
  StateModel model_;
};

/// pi_B(s', a): uniform or learned masked categorical over the parents of
/// s'. Undefined at s0; at the sink the caller supplies R(x)/Z.
class BackwardPolicy {
 public:
  static BackwardPolicy uniform(const Environment& env);
  static BackwardPolicy learned(const Environment& env, const ModelSpec& spec, Rng& rng);

  bool is_learned() const { return model_.has_value(); }
  Var log_probs(Tape& tape, const std::vector<State>& states);
  Matrix log_probs(const std::vector<State>& states) const;
  double log_prob(const State& s, int action) const;
  std::pair<int, double> sample_action(const State& s, Rng& rng) const;

  /// Learned policies only.
  StateModel& model() { return *model_; }
  const StateModel& model() const { return *model_; }
  ParameterSet& params();
  const ParameterSet& params() const;

 private:
  explicit BackwardPolicy(const Environment& env) : env_(&env) {}
  const Environment* env_;
  std::optional<StateModel> model_;
};

/// Scalar log Z.
class LogZ {
 public:
  explicit LogZ(double init = 0.0);
  double value() const { return params_.values[0]; }
  void set(double v) { params_.values[0] = v; }
  Var var(Tape& tape) { return tape.parameter(params_, 0); }
  /// log mu(s0) = log Z - stopgrad(log Z): value 0, gradient into log Z.
  Var log_mu(Tape& tape);
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ParameterSet params_;
};

/// Scalar value estimate per state. The forward estimator is pinned to 0 at
/// the sink, the backward one at s0.
class ValueEstimator {
 public:
  enum class Pin { Sink, Root };
  ValueEstimator(const Environment& env, Pin pin, const ModelSpec& spec, Rng& rng);

  Var values(Tape& tape, const std::vector<State>& states);
  Vector values(const std::vector<State>& states) const;
  ParameterSet& params() { return model_.params(); }
  const ParameterSet& params() const { return model_.params(); }

 private:
  bool pinned(const State& s) const;
  const Environment* env_;
  Pin pin_;
  StateModel model_;
};

/// log F(s), with log F(x) := log R(x) on states whose only child is the sink.
class StateFlow {
 public:
  StateFlow(const Environment& env, const ModelSpec& spec, Rng& rng);

  Var log_flow(Tape& tape, const std::vector<State>& states);
  Vector log_flow(const std::vector<State>& states) const;
  ParameterSet& params() { return model_.params(); }
  const ParameterSet& params() const { return model_.params(); }
  StateModel& model() { return model_; }

 private:
  const Environment* env_;
  StateModel model_;
};

Vector snapshot_params(const ParameterSet& params);
/// Throws ContractError when the snapshot size differs from the parameter count.
void restore_params(ParameterSet& params, const Vector& snapshot);

struct Checkpoint {
  ModelKind kind = ModelKind::Mlp;
  std::vector<int> dims;
  std::uint64_t seed = 0;
  Vector values;
};

/// Little-endian: magic "GFLWCKPT", u32 version, u32 kind, u32 ndims,
/// i32 dims[ndims], u64 seed, u64 count, f64 values[count].
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gflow
