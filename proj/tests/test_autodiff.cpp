#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gflow/autodiff.hpp"
#include "gflow/mlp.hpp"

using namespace gflow;

namespace {

Matrix row(std::initializer_list<double> xs) {
  Matrix m(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) m(0, i++) = x;
  return m;
}

double relative_error(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1.0, std::max(a.norm(), b.norm()));
}

}  // namespace

TEST(Autodiff, SquareGradient) {
  ParameterSet p;
  p.add(1, 1);
  p.values[0] = 3.0;
  p.zero_grad();
  Tape tape;
  Var w = tape.parameter(p, 0);
  tape.backward(sum(square(w)));
  EXPECT_DOUBLE_EQ(p.grads[0], 6.0);
}

TEST(Autodiff, LogSoftmaxSymmetricGradient) {
  ParameterSet p;
  p.add(1, 2);
  p.values.setZero();
  p.zero_grad();
  Tape tape;
  Var w = tape.parameter(p, 0);
  Mask mask = Mask::Constant(1, 2, true);
  tape.backward(gather(log_softmax_masked(w, mask), {0}));
  EXPECT_NEAR(p.grads[0], 0.5, 1e-15);
  EXPECT_NEAR(p.grads[1], -0.5, 1e-15);
}

TEST(Autodiff, NonScalarBackwardIsContractError) {
  Tape tape;
  Var x = tape.constant(row({1.0, 2.0}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Autodiff, ShapeMismatchIsDimensionError) {
  Tape tape;
  Var a = tape.constant(Matrix::Ones(2, 3));
  Var b = tape.constant(Matrix::Ones(2, 3));
  EXPECT_THROW(matmul(a, b), DimensionError);
  Var c = tape.constant(Matrix::Ones(3, 2));
  EXPECT_THROW(add(a, c), DimensionError);
}

TEST(Autodiff, MaskedLogSoftmaxValues) {
  Tape tape;
  Mask mask(1, 3);
  mask << true, true, false;
  const Matrix out = log_softmax_masked(tape.constant(row({1, 1, 1})), mask).value();
  EXPECT_NEAR(out(0, 0), std::log(0.5), 1e-15);
  EXPECT_NEAR(out(0, 1), std::log(0.5), 1e-15);
  EXPECT_TRUE(std::isinf(out(0, 2)) && out(0, 2) < 0);

  Mask one = Mask::Constant(1, 1, true);
  EXPECT_EQ(log_softmax_masked(tape.constant(row({0})), one).value()(0, 0), 0.0);
}

TEST(Autodiff, AllMaskedRowIsInvalidMask) {
  Tape tape;
  Mask mask = Mask::Constant(1, 2, false);
  EXPECT_THROW(log_softmax_masked(tape.constant(row({0, 0})), mask), InvalidMaskError);
}

TEST(Autodiff, MaskedLogSoftmaxNormalisesAndPermutes) {
  Rng rng(7);
  Tape tape;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix logits(4, 6);
    Mask mask(4, 6);
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      logits.data()[i] = 6.0 * uniform01(rng) - 3.0;
      mask.data()[i] = uniform01(rng) < 0.6;
    }
    for (int r = 0; r < 4; ++r) mask(r, r) = true;
    const Matrix out = log_softmax_masked(tape.constant(logits), mask).value();
    for (int r = 0; r < 4; ++r) {
      double total = 0.0;
      for (int c = 0; c < 6; ++c)
        if (mask(r, c)) total += std::exp(out(r, c));
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
    // Reverse the column order of logits and mask together.
    const Matrix rl = logits.rowwise().reverse();
    const Mask rm = mask.rowwise().reverse();
    const Matrix rout = log_softmax_masked(tape.constant(rl), rm).value();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 6; ++c)
        if (mask(r, c)) EXPECT_NEAR(rout(r, 5 - c), out(r, c), 1e-14);
  }
}

TEST(Autodiff, ElementwiseOpsMatchFiniteDifferences) {
  ParameterSet p;
  p.add(3, 4);
  p.add(4, 2);
  Rng rng(3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.values[i] = 0.5 + uniform01(rng);
  const Matrix c = Matrix::Constant(3, 2, 0.3);
  auto build = [&](Tape& tape) {
    Var a = tape.parameter(p, 0);
    Var b = tape.parameter(p, 1);
    Var m = matmul(a, b);
    Var e = exp(scale(m, 0.1)) + log(m) * tape.constant(c) - square(m);
    Var l = logsumexp(e);
    Var g = gather(e, {0, 1, 0});
    Var rows = gather_rows(e, {2, 0});
    Var seg = segment_sum(g, {1, 0, 1}, 2);
    return sum(l) + mean(square(g)) + sum(rows) + sum(seg * seg) - sum(leaky_relu(neg(m)));
  };
  auto loss = [&] {
    Tape t;
    return build(t).scalar();
  };
  p.zero_grad();
  Tape tape;
  tape.backward(build(tape));
  const Vector analytic = p.grads;
  const Vector fd = finite_difference_grad(loss, p.values);
  EXPECT_LT(relative_error(analytic, fd), 1e-6);
}

TEST(Autodiff, SparseAndConcatGradients) {
  ParameterSet p;
  p.add(3, 2);
  p.add(1, 2);
  Rng rng(11);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.values[i] = uniform01(rng) - 0.5;
  SparseMatrix s(2, 4);
  s.insert(0, 0) = 1.5;
  s.insert(0, 3) = -2.0;
  s.insert(1, 1) = 0.7;
  s.makeCompressed();
  auto build = [&](Tape& tape) {
    Var x = vcat({tape.parameter(p, 0), tape.parameter(p, 1)});
    Var y = spmv(s, x);
    return sum(square(y)) + sum(stop_gradient(x) * x);
  };
  p.zero_grad();
  Tape tape;
  tape.backward(build(tape));
  const Vector analytic = p.grads;
  // stop_gradient halves the derivative of x*x, so compare against the FD
  // gradient of sum(y^2) plus x.
  auto loss_no_sg = [&] {
    Tape t;
    Var x = vcat({t.parameter(p, 0), t.parameter(p, 1)});
    return sum(square(spmv(s, x))).scalar();
  };
  Vector fd = finite_difference_grad(loss_no_sg, p.values) + p.values;
  EXPECT_LT(relative_error(analytic, fd), 1e-7);
}

TEST(Autodiff, JvpMatchesDirectionalDerivative) {
  Mlp mlp({3, 5, 2});
  Rng rng(5);
  mlp.init(rng);
  Matrix input(4, 3);
  for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = uniform01(rng) - 0.5;
  Vector dir(mlp.params().size());
  for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = uniform01(rng) - 0.5;

  Tape tape;
  Var out = mlp.forward(tape, tape.constant(input));
  const Matrix tangent = tape.jvp(out, mlp.params(), dir);

  const double h = 1e-6;
  const Vector base = mlp.params().values;
  mlp.params().values = base + h * dir;
  const Matrix plus = mlp.evaluate(input);
  mlp.params().values = base - h * dir;
  const Matrix minus = mlp.evaluate(input);
  mlp.params().values = base;
  EXPECT_LT(((plus - minus) / (2 * h) - tangent).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Mlp, ZeroWeightsGiveLastBias) {
  Mlp mlp({3, 4, 2});
  mlp.params().values.setZero();
  mlp.bias(1) << 0.25, -1.5;
  const Matrix out = mlp.evaluate(Matrix::Random(5, 3));
  for (int r = 0; r < 5; ++r) {
    EXPECT_EQ(out(r, 0), 0.25);
    EXPECT_EQ(out(r, 1), -1.5);
  }
}

TEST(Mlp, IdentityLinearLayer) {
  Mlp mlp({3, 3});
  mlp.params().values.setZero();
  mlp.weight(0).setIdentity();
  Matrix v = row({0.3, -2.0, 5.0});
  EXPECT_EQ(mlp.evaluate(v), v);
  Tape tape;
  EXPECT_EQ(mlp.forward(tape, tape.constant(v)).value(), v);
}

TEST(Mlp, MatchesStraightLineComputation) {
  Mlp mlp({3, 4, 2});
  Rng rng(42);
  mlp.init(rng);
  const Matrix x = row({0.1, -0.7, 1.3});
  Matrix w0 = mlp.weight(0), b0 = mlp.bias(0), w1 = mlp.weight(1), b1 = mlp.bias(1);
  // Orientation is whatever fits the row-vector input.
  Matrix h = (w0.rows() == 3 ? Matrix(x * w0) : Matrix(x * w0.transpose())) + b0;
  for (Eigen::Index i = 0; i < h.size(); ++i)
    if (h.data()[i] < 0) h.data()[i] *= 0.01;
  Matrix y = (w1.rows() == 4 ? Matrix(h * w1) : Matrix(h * w1.transpose())) + b1;
  EXPECT_LT((mlp.evaluate(x) - y).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Mlp, InitBoundsAndZeroBias) {
  Mlp mlp({10, 6, 3});
  Rng rng(1);
  mlp.init(rng);
  EXPECT_LE(mlp.weight(0).cwiseAbs().maxCoeff(), std::sqrt(6.0 / 16.0));
  EXPECT_LE(mlp.weight(1).cwiseAbs().maxCoeff(), std::sqrt(6.0 / 9.0));
  EXPECT_EQ(mlp.bias(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(mlp.bias(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, LossGradientMatchesFiniteDifferences) {
  Mlp mlp({4, 8, 8, 3});
  Rng rng(9);
  mlp.init(rng);
  Matrix x(6, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform01(rng) - 0.5;
  Mask mask = Mask::Constant(6, 3, true);
  mask(0, 1) = false;
  auto build = [&](Tape& tape) {
    Var lp = log_softmax_masked(mlp.forward(tape, tape.constant(x)), mask);
    return mean(square(gather(lp, {0, 1, 2, 0, 1, 2})));
  };
  mlp.params().zero_grad();
  Tape tape;
  tape.backward(build(tape));
  const Vector analytic = mlp.params().grads;
  const Vector fd = finite_difference_grad(
      [&] {
        Tape t;
        return build(t).scalar();
      },
      mlp.params().values);
  EXPECT_LT(relative_error(analytic, fd), 1e-6);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  AdamState st;
  Vector p = Vector::LinSpaced(5, -1, 1);
  const Vector before = p;
  for (int i = 0; i < 20; ++i) adam_step(st, p, Vector::Zero(5));
  EXPECT_EQ(p, before);
}

TEST(Adam, ConstantGradientMovesOpposite) {
  AdamState st;
  st.config.lr = 0.01;
  Vector p = Vector::Zero(2);
  Vector g(2);
  g << 2.0, -0.5;
  for (int i = 0; i < 100; ++i) adam_step(st, p, g);
  EXPECT_LT(p[0], 0.0);
  EXPECT_GT(p[1], 0.0);
}

TEST(Adam, MatchesScalarReference) {
  AdamState st;
  st.config.lr = 0.1;
  Vector p = Vector::Constant(1, 0.5);
  const double grads[] = {1.0, -0.3, 2.0};
  double theta = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    adam_step(st, p, Vector::Constant(1, g));
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p[0], theta, 1e-15);
  }
}

TEST(Adam, NonFiniteGradientThrowsAndLeavesParams) {
  AdamState st;
  Vector p = Vector::Ones(2);
  Vector g(2);
  g << 0.1, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adam_step(st, p, g), NumericFault);
  EXPECT_EQ(p, Vector::Ones(2));
}
