#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// matrices, with a forward-mode tangent sweep over the same record.

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace gflow {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct InvalidMaskError : ContractError {
  using ContractError::ContractError;
};

struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat storage for every trainable tensor of one model. Individual tensors
/// are row-major views into `values`; `grads` mirrors the layout.
class ParameterSet {
 public:
  struct Slot {
    Eigen::Index offset;
    Eigen::Index rows;
    Eigen::Index cols;
  };

  std::size_t add(Eigen::Index rows, Eigen::Index cols);

  Eigen::Map<Matrix> view(std::size_t slot);
  Eigen::Map<const Matrix> view(std::size_t slot) const;
  Eigen::Map<Matrix> grad_view(std::size_t slot);

  const Slot& slot(std::size_t i) const { return slots_.at(i); }
  std::size_t slot_count() const { return slots_.size(); }
  Eigen::Index size() const { return values.size(); }
  void zero_grad() { grads.setZero(); }

  Vector values;
  Vector grads;

 private:
  std::vector<Slot> slots_;
};

class Tape;

/// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records operations for one differentiation pass. Single-threaded.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;
  using TangentFn = std::function<Matrix(const Tape&, const std::vector<Matrix>&)>;

  Var constant(Matrix value);
  Var constant(double value);
  /// Registers one tensor of `params` as a differentiable leaf.
  Var parameter(ParameterSet& params, std::size_t slot);

  /// Reverse sweep from a 1x1 output. Leaf gradients are accumulated into
  /// the owning ParameterSet::grads.
  void backward(Var output);

  /// Forward tangent of `output` along `direction`, a flat vector laid out
  /// like `params.values`. Leaves from other parameter sets get tangent 0.
  Matrix jvp(Var output, const ParameterSet& params, const Vector& direction) const;

  const Matrix& value(int id) const { return nodes_.at(id).value; }
  const Matrix& grad(Var v) const { return nodes_.at(v.id()).grad; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var record(Matrix value, std::vector<int> inputs, BackwardFn backward, TangentFn tangent);
  Matrix& grad_ref(int id);
  const std::vector<int>& inputs(int id) const { return nodes_.at(id).inputs; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardFn backward;
    TangentFn tangent;
    ParameterSet* params = nullptr;
    std::size_t slot = 0;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Elementwise binary ops broadcast a 1x1, 1xn or mx1 operand to the other's shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
Var scale(Var a, double factor);
Var neg(Var a);
Var log(Var a);
Var exp(Var a);
Var square(Var a);
Var leaky_relu(Var a, double slope = 0.01);
/// Sum of all entries, 1x1.
Var sum(Var a);
Var mean(Var a);
/// Row-wise log-sum-exp, mx1.
Var logsumexp(Var a);
/// Row-wise log-softmax over entries where `mask` is true. Excluded entries
/// hold -infinity and carry no gradient.
Var log_softmax_masked(Var logits, const Mask& mask);
/// Picks column index[i] of row i, mx1.
Var gather(Var a, const std::vector<int>& index);
/// Stacks rows index[i] of `a`.
Var gather_rows(Var a, const std::vector<int>& index);
/// out[segment[i]] += a[i] for an mx1 input; out has `segments` rows.
Var segment_sum(Var a, const std::vector<int>& segment, int segments);
/// Sparse-times-dense product `a * x` with a constant sparse matrix.
Var spmv(const SparseMatrix& a, Var x);
/// Stacks inputs with equal column counts on top of each other.
Var vcat(const std::vector<Var>& parts);
/// Same value, no gradient flow.
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return neg(a); }

/// Central finite differences of `loss` w.r.t. every coordinate of `params`.
Vector finite_difference_grad(const std::function<double()>& loss, Vector& params,
                              double step = 1e-5);

}  // namespace gflow
