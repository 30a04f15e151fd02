#include "gflow/mlp.hpp"

#include <cmath>
#include <string>

namespace gflow {

Mlp::Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw DimensionError("Mlp needs input and output dims");
  for (int d : dims_)
    if (d <= 0) throw DimensionError("Mlp dims must be positive");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    params_.add(dims_[l], dims_[l + 1]);
    params_.add(1, dims_[l + 1]);
  }
}

void Mlp::init(Rng& rng) {
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const double bound = std::sqrt(6.0 / (dims_[l] + dims_[l + 1]));
    auto w = weight(l);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = bound * (2.0 * uniform01(rng) - 1.0);
    bias(l).setZero();
  }
}

Var Mlp::forward(Tape& tape, Var input) {
  if (input.cols() != input_dim())
    throw DimensionError("Mlp::forward: input has " + std::to_string(input.cols()) +
                         " features, expected " + std::to_string(input_dim()));
  Var h = input;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Var w = tape.parameter(params_, 2 * l);
    Var b = tape.parameter(params_, 2 * l + 1);
    h = matmul(h, w) + b;
    if (l + 1 < layer_count()) h = leaky_relu(h, kSlope);
  }
  return h;
}

Matrix Mlp::evaluate(const Matrix& input) const {
  if (input.cols() != input_dim()) throw DimensionError("Mlp::evaluate: input dim mismatch");
  Matrix h = input;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Matrix next = h * params_.view(2 * l);
    next.rowwise() += params_.view(2 * l + 1).row(0);
    if (l + 1 < layer_count()) next = (next.array() > 0.0).select(next, kSlope * next);
    h = std::move(next);
  }
  return h;
}

Var forward(Mlp& mlp, Var input, Tape& tape) {
  if (input.tape() != &tape) throw ContractError("forward: input recorded on another tape");
  return mlp.forward(tape, input);
}

void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: params/grads size mismatch");
  if (!grads.allFinite()) throw NumericFault("adam_step: non-finite gradient");
  if (state.m.size() == 0) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state/params size mismatch");
  const AdamConfig& c = state.config;
  ++state.step;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grads.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.array() -= c.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
}

}  // namespace gflow
