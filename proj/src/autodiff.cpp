#include "gflow/autodiff.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace gflow {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

// Shape of a broadcast binary op, or throws.
std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const Matrix& a, const Matrix& b,
                                                      const char* op) {
  auto dim = [&](Eigen::Index x, Eigen::Index y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                         shape_str(b));
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1) return m.replicate(rows, 1);
  return m.replicate(1, cols);
}

// Sums a broadcast gradient back down to `rows x cols`.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw ContractError("operands recorded on different tapes");
  return *a.tape();
}

void accumulate(Tape& t, int id, const Matrix& g) {
  if (!t.requires_grad(id)) return;
  Matrix& dst = t.grad_ref(id);
  dst += g;
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& t = *a.tape();
  Matrix out = fwd(a.value());
  int ia = a.id();
  return t.record(
      std::move(out), {ia},
      [ia, deriv](Tape& tp, int self) {
        Matrix d = deriv(tp.value(ia), tp.value(self));
        accumulate(tp, ia, (tp.grad_ref(self).array() * d.array()).matrix());
      },
      [ia, deriv](const Tape& tp, const std::vector<Matrix>& tan) {
        return Matrix((tan[0].array() * deriv(tp.value(ia), Matrix()).array()).matrix());
      });
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t ParameterSet::add(Eigen::Index rows, Eigen::Index cols) {
  Slot s{values.size(), rows, cols};
  Vector grown = Vector::Zero(values.size() + rows * cols);
  grown.head(values.size()) = values;
  values = std::move(grown);
  grads = Vector::Zero(values.size());
  slots_.push_back(s);
  return slots_.size() - 1;
}

Eigen::Map<Matrix> ParameterSet::view(std::size_t i) {
  const Slot& s = slots_.at(i);
  return {values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Matrix> ParameterSet::view(std::size_t i) const {
  const Slot& s = slots_.at(i);
  return {values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Matrix> ParameterSet::grad_view(std::size_t i) {
  const Slot& s = slots_.at(i);
  return {grads.data() + s.offset, s.rows, s.cols};
}

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractError("scalar() on a " + shape_str(v) + " tensor");
  return v(0, 0);
}

// ---------------------------------------------------------------------------

Var Tape::record(Matrix value, std::vector<int> inputs, BackwardFn backward, TangentFn tangent) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  n.tangent = std::move(tangent);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::parameter(ParameterSet& params, std::size_t slot) {
  Node n;
  n.value = params.view(slot);
  n.params = &params;
  n.slot = slot;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var output) {
  if (output.tape() != this) throw ContractError("backward: output not on this tape");
  const int root = output.id();
  if (nodes_.at(root).value.size() != 1)
    throw ContractError("backward: output must be scalar, got " +
                        shape_str(nodes_.at(root).value));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root].requires_grad) return;
  grad_ref(root)(0, 0) = 1.0;
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.params != nullptr) n.params->grad_view(n.slot) += n.grad;
  }
}

Matrix Tape::jvp(Var output, const ParameterSet& params, const Vector& direction) const {
  if (direction.size() != params.size())
    throw DimensionError("jvp: direction has wrong length");
  const int root = output.id();
  std::vector<Matrix> tan(root + 1);
  for (int i = 0; i <= root; ++i) {
    const Node& n = nodes_[i];
    if (n.params == &params) {
      const auto& s = params.slot(n.slot);
      tan[i] = Eigen::Map<const Matrix>(direction.data() + s.offset, s.rows, s.cols);
    } else if (!n.requires_grad || !n.tangent) {
      tan[i] = Matrix::Zero(n.value.rows(), n.value.cols());
    } else {
      std::vector<Matrix> in;
      in.reserve(n.inputs.size());
      for (int j : n.inputs) in.push_back(tan[j]);
      tan[i] = n.tangent(*this, in);
    }
  }
  return tan[root];
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value(), "add");
  Matrix out = expand(a.value(), r, c) + expand(b.value(), r, c);
  int ia = a.id(), ib = b.id();
  return t.record(
      std::move(out), {ia, ib},
      [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        accumulate(tp, ia, reduce_to(g, tp.value(ia).rows(), tp.value(ia).cols()));
        accumulate(tp, ib, reduce_to(g, tp.value(ib).rows(), tp.value(ib).cols()));
      },
      [r, c](const Tape&, const std::vector<Matrix>& tan) {
        return Matrix(expand(tan[0], r, c) + expand(tan[1], r, c));
      });
}

Var sub(Var a, Var b) { return add(a, neg(b)); }

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value(), "mul");
  Matrix out = (expand(a.value(), r, c).array() * expand(b.value(), r, c).array()).matrix();
  int ia = a.id(), ib = b.id();
  return t.record(
      std::move(out), {ia, ib},
      [ia, ib, r, c](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        const Matrix& va = tp.value(ia);
        const Matrix& vb = tp.value(ib);
        if (tp.requires_grad(ia)) {
          Matrix ga = (g.array() * expand(vb, r, c).array()).matrix();
          accumulate(tp, ia, reduce_to(ga, va.rows(), va.cols()));
        }
        if (tp.requires_grad(ib)) {
          Matrix gb = (g.array() * expand(va, r, c).array()).matrix();
          accumulate(tp, ib, reduce_to(gb, vb.rows(), vb.cols()));
        }
      },
      [ia, ib, r, c](const Tape& tp, const std::vector<Matrix>& tan) {
        return Matrix((expand(tan[0], r, c).array() * expand(tp.value(ib), r, c).array() +
                       expand(tp.value(ia), r, c).array() * expand(tan[1], r, c).array())
                          .matrix());
      });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + shape_str(a.value()) + " times " + shape_str(b.value()));
  Matrix out = a.value() * b.value();
  int ia = a.id(), ib = b.id();
  return t.record(
      std::move(out), {ia, ib},
      [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia).noalias() += g * tp.value(ib).transpose();
        if (tp.requires_grad(ib)) tp.grad_ref(ib).noalias() += tp.value(ia).transpose() * g;
      },
      [ia, ib](const Tape& tp, const std::vector<Matrix>& tan) {
        return Matrix(tan[0] * tp.value(ib) + tp.value(ia) * tan[1]);
      });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](const Matrix& x) { return Matrix(factor * x); },
      [factor](const Matrix& x, const Matrix&) { return Matrix::Constant(x.rows(), x.cols(), factor); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var log(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().log().matrix()); },
      [](const Matrix& x, const Matrix&) { return Matrix(x.array().inverse().matrix()); });
}

Var exp(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().exp().matrix()); },
      [](const Matrix& x, const Matrix&) { return Matrix(x.array().exp().matrix()); });
}

Var square(Var a) {
  return unary(
      a, [](const Matrix& x) { return Matrix(x.array().square().matrix()); },
      [](const Matrix& x, const Matrix&) { return Matrix(2.0 * x); });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a,
      [slope](const Matrix& x) {
        return Matrix((x.array() > 0.0).select(x.array(), slope * x.array()).matrix());
      },
      [slope](const Matrix& x, const Matrix&) {
        return Matrix((x.array() > 0.0).select(Matrix::Ones(x.rows(), x.cols()).array(), slope).matrix());
      });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.record(
      Matrix::Constant(1, 1, a.value().sum()), {ia},
      [ia](Tape& tp, int self) {
        const double g = tp.grad_ref(self)(0, 0);
        tp.grad_ref(ia).array() += g;
      },
      [](const Tape&, const std::vector<Matrix>& tan) { return Matrix::Constant(1, 1, tan[0].sum()); });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var logsumexp(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Eigen::VectorXd mx = x.rowwise().maxCoeff();
  Matrix out(x.rows(), 1);
  Matrix soft(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    soft.row(i) = (x.row(i).array() - mx(i)).exp().matrix();
    const double z = soft.row(i).sum();
    out(i, 0) = mx(i) + std::log(z);
    soft.row(i) /= z;
  }
  int ia = a.id();
  return t.record(
      std::move(out), {ia},
      [ia, soft](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        tp.grad_ref(ia) += (soft.array().colwise() * g.col(0).array()).matrix();
      },
      [soft](const Tape&, const std::vector<Matrix>& tan) {
        return Matrix((soft.array() * tan[0].array()).rowwise().sum().matrix());
      });
}

Var log_softmax_masked(Var logits, const Mask& mask) {
  Tape& t = *logits.tape();
  const Matrix& x = logits.value();
  if (mask.rows() != x.rows() || mask.cols() != x.cols())
    throw DimensionError("log_softmax_masked: mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " vs logits " + shape_str(x));
  constexpr double kExcluded = -std::numeric_limits<double>::infinity();
  Matrix out = Matrix::Constant(x.rows(), x.cols(), kExcluded);
  Matrix prob = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mx = kExcluded;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (mask(i, j)) mx = std::max(mx, x(i, j));
    if (mx == kExcluded) throw InvalidMaskError("log_softmax_masked: row " + std::to_string(i) + " fully masked");
    double z = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (mask(i, j)) z += std::exp(x(i, j) - mx);
    const double lse = mx + std::log(z);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (mask(i, j)) {
        out(i, j) = x(i, j) - lse;
        prob(i, j) = std::exp(out(i, j));
      }
  }
  int ia = logits.id();
  return t.record(
      std::move(out), {ia},
      [ia, prob, mask](Tape& tp, int self) {
        Matrix g = mask.select(tp.grad_ref(self), 0.0);
        Eigen::VectorXd rs = g.rowwise().sum();
        tp.grad_ref(ia) += g - Matrix(prob.array().colwise() * rs.array());
      },
      [prob, mask](const Tape&, const std::vector<Matrix>& tan) {
        Matrix tx = mask.select(tan[0], 0.0);
        Eigen::VectorXd m = (prob.array() * tx.array()).rowwise().sum();
        Matrix res = tx.colwise() - m;
        return Matrix(mask.select(res, 0.0));
      });
}

Var gather(Var a, const std::vector<int>& index) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(index.size()) != x.rows())
    throw DimensionError("gather: index length differs from row count");
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (index[i] < 0 || index[i] >= x.cols()) throw DimensionError("gather: column out of range");
    out(i, 0) = x(i, index[i]);
  }
  int ia = a.id();
  return t.record(
      std::move(out), {ia},
      [ia, index](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        Matrix& dst = tp.grad_ref(ia);
        for (std::size_t i = 0; i < index.size(); ++i) dst(i, index[i]) += g(i, 0);
      },
      [index](const Tape&, const std::vector<Matrix>& tan) {
        Matrix r(index.size(), 1);
        for (std::size_t i = 0; i < index.size(); ++i) r(i, 0) = tan[0](i, index[i]);
        return r;
      });
}

Var gather_rows(Var a, const std::vector<int>& index) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix out(index.size(), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw DimensionError("gather_rows: row out of range");
    out.row(i) = x.row(index[i]);
  }
  int ia = a.id();
  return t.record(
      std::move(out), {ia},
      [ia, index](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        Matrix& dst = tp.grad_ref(ia);
        for (std::size_t i = 0; i < index.size(); ++i) dst.row(index[i]) += g.row(i);
      },
      [index](const Tape&, const std::vector<Matrix>& tan) {
        Matrix r(index.size(), tan[0].cols());
        for (std::size_t i = 0; i < index.size(); ++i) r.row(i) = tan[0].row(index[i]);
        return r;
      });
}

Var segment_sum(Var a, const std::vector<int>& segment, int segments) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  if (x.cols() != 1 || static_cast<Eigen::Index>(segment.size()) != x.rows())
    throw DimensionError("segment_sum: expects an mx1 input with m segment ids");
  Matrix out = Matrix::Zero(segments, 1);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] < 0 || segment[i] >= segments) throw DimensionError("segment_sum: id out of range");
    out(segment[i], 0) += x(i, 0);
  }
  int ia = a.id();
  return t.record(
      std::move(out), {ia},
      [ia, segment](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        Matrix& dst = tp.grad_ref(ia);
        for (std::size_t i = 0; i < segment.size(); ++i) dst(i, 0) += g(segment[i], 0);
      },
      [segment, segments](const Tape&, const std::vector<Matrix>& tan) {
        Matrix r = Matrix::Zero(segments, 1);
        for (std::size_t i = 0; i < segment.size(); ++i) r(segment[i], 0) += tan[0](i, 0);
        return r;
      });
}

Var spmv(const SparseMatrix& a, Var x) {
  Tape& t = *x.tape();
  if (a.cols() != x.rows()) throw DimensionError("spmv: inner dimensions differ");
  Matrix out = a * x.value();
  auto shared = std::make_shared<const SparseMatrix>(a);
  int ix = x.id();
  return t.record(
      std::move(out), {ix},
      [ix, shared](Tape& tp, int self) {
        accumulate(tp, ix, Matrix(shared->transpose() * tp.grad_ref(self)));
      },
      [shared](const Tape&, const std::vector<Matrix>& tan) { return Matrix(*shared * tan[0]); });
}

Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("vcat: nothing to stack");
  Tape& t = *parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("vcat: operands recorded on different tapes");
    if (p.cols() != cols) throw DimensionError("vcat: column counts differ");
    ids.push_back(p.id());
    offsets.push_back(rows);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  return t.record(
      std::move(out), ids,
      [ids, offsets](Tape& tp, int self) {
        const Matrix& g = tp.grad_ref(self);
        for (std::size_t i = 0; i < ids.size(); ++i)
          accumulate(tp, ids[i], Matrix(g.middleRows(offsets[i], tp.value(ids[i]).rows())));
      },
      [rows, cols, offsets](const Tape&, const std::vector<Matrix>& tan) {
        Matrix r(rows, cols);
        for (std::size_t i = 0; i < tan.size(); ++i) r.middleRows(offsets[i], tan[i].rows()) = tan[i];
        return r;
      });
}

Var stop_gradient(Var a) { return a.tape()->constant(a.value()); }

Vector finite_difference_grad(const std::function<double()>& loss, Vector& params, double step) {
  Vector g(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double orig = params(i);
    params(i) = orig + step;
    const double up = loss();
    params(i) = orig - step;
    const double down = loss();
    params(i) = orig;
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace gflow
