#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gflow/autodiff.hpp"

namespace gflow {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits; identical across platforms.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Fully connected network with leaky-rectifier hidden activations and a
/// linear output layer. Parameters live in one flat ParameterSet.
class Mlp {
 public:
  static constexpr double kSlope = 0.01;

  Mlp() = default;
  /// `dims` = {input, hidden..., output}; at least two entries.
  explicit Mlp(std::vector<int> dims);

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init(Rng& rng);

  Var forward(Tape& tape, Var input);
  /// Tape-free evaluation for sampling.
  Matrix evaluate(const Matrix& input) const;

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t layer_count() const { return dims_.size() - 1; }
  const std::vector<int>& dims() const { return dims_; }

  Eigen::Map<Matrix> weight(std::size_t layer) { return params_.view(2 * layer); }
  Eigen::Map<Matrix> bias(std::size_t layer) { return params_.view(2 * layer + 1); }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  std::vector<int> dims_;
  ParameterSet params_;
};

Var forward(Mlp& mlp, Var input, Tape& tape);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  Vector m;
  Vector v;
};

/// One bias-corrected Adam update in place. Throws NumericFault when `grads`
/// holds a NaN or infinity; `params` is then left untouched.
void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads);

inline void adam_step(AdamState& state, ParameterSet& params) {
  adam_step(state, params.values, params.grads);
}

}  // namespace gflow
