#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gflow/exact.hpp"
#include "gflow/metrics.hpp"
#include "gflow/policy.hpp"
#include "support.hpp"

using namespace gflow;
namespace tk = gflow::testing;

TEST(Policy, UniformBackwardWithFourParents) {
  HyperGrid g(3, 4);
  auto pb = BackwardPolicy::uniform(g);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(pb.log_prob({1, 1, 1}, d), std::log(1.0 / 3.0), 1e-15);
  SequenceEnv seq(4, 1, {1.0}, 1.0, 1e-3, 10.0);
  auto pbs = BackwardPolicy::uniform(seq);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(pbs.log_prob({0, 0, 0, 0}, i), std::log(0.25), 1e-15);
}

TEST(Policy, ZeroLogitsGiveUniformChildren) {
  HyperGrid g(2, 3);
  Rng rng(0);
  ForwardPolicy pf(g, tk::tabular(), rng);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(pf.log_prob({0, 0}, a), std::log(1.0 / 3.0), 1e-15);
  EXPECT_THROW(pf.log_prob({2, 2}, 0), ContractError);
}

TEST(Policy, LearnedZeroBackwardEqualsUniform) {
  HyperGrid g(2, 4);
  Rng rng(0);
  auto learned = BackwardPolicy::learned(g, tk::tabular(), rng);
  auto uniform = BackwardPolicy::uniform(g);
  const auto graph = enumerate_states(g);
  std::vector<State> states(graph.states.begin() + 1, graph.states.end() - 1);
  const Matrix a = learned.log_probs(states);
  const Matrix b = uniform.log_probs(states);
  for (Eigen::Index i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(Policy, NormalisedEverywhere) {
  HyperGrid g(2, 5);
  Rng rng(3);
  ForwardPolicy pf(g, ModelSpec{}, rng);
  auto pb = BackwardPolicy::learned(g, ModelSpec{}, rng);
  const auto graph = enumerate_states(g);
  std::vector<State> fwd(graph.states.begin(), graph.states.end() - 1);
  std::vector<State> bwd(graph.states.begin() + 1, graph.states.end() - 1);
  for (const Matrix& lp : {pf.log_probs(fwd), pb.log_probs(bwd)})
    for (Eigen::Index r = 0; r < lp.rows(); ++r) EXPECT_NEAR(lp.row(r).array().exp().sum(), 1.0, 1e-12);
}

TEST(Policy, TrajectoryProbabilitiesSumToOne) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    auto dag = ExplicitDag::random(14, rng);
    ForwardPolicy pf(dag, tk::tabular(), rng);
    tk::randomize(pf.params(), rng, 2.0);
    const auto g = enumerate_states(dag);
    const auto lpf = forward_edge_log_probs(g, pf);
    double total = 0.0;
    for (const auto& path : exact::enumerate_trajectories(g)) total += std::exp(exact::path_sum(path, lpf));
    EXPECT_NEAR(total, 1.0, 1e-10);
  }
}

TEST(Policy, MaskedLogSoftmaxAndCategorical) {
  Matrix logits(1, 3);
  logits << 0.0, std::log(3.0), 5.0;
  Mask mask(1, 3);
  mask << true, true, false;
  const Matrix lp = masked_log_softmax(logits, mask);
  EXPECT_NEAR(std::exp(lp(0, 0)), 0.25, 1e-15);
  EXPECT_NEAR(std::exp(lp(0, 1)), 0.75, 1e-15);
  Rng rng(1);
  int counts[3] = {0, 0, 0};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_categorical(lp.row(0), rng)];
  EXPECT_EQ(counts[2], 0);
  const double sigma = std::sqrt(0.25 * 0.75 / n);
  EXPECT_LT(std::abs(counts[0] / double(n) - 0.25), 3 * sigma);
}

TEST(Policy, SampleActionFrequenciesAndDeterminism) {
  HyperGrid g(2, 3);
  Rng init(4);
  ForwardPolicy pf(g, tk::tabular(), init);
  tk::randomize(pf.params(), init, 1.0);
  const State s{0, 1};
  const Matrix lp = pf.log_probs(std::vector<State>{s});
  Rng rng(12);
  const int n = 100000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) {
    const auto [a, l] = pf.sample_action(s, rng);
    EXPECT_DOUBLE_EQ(l, lp(0, a));
    ++counts[a];
  }
  for (int a = 0; a < 3; ++a) {
    const double p = std::exp(lp(0, a));
    EXPECT_LT(std::abs(counts[a] / double(n) - p), 3 * std::sqrt(p * (1 - p) / n) + 1e-12);
  }
  // Single child: stop at the far corner.
  EXPECT_EQ(pf.sample_action({2, 2}, rng).first, g.stop_action());

  Rng r1(99), r2(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(pf.sample_action(s, r1).first, pf.sample_action(s, r2).first);
}

TEST(Policy, SnapshotRestore) {
  HyperGrid g(2, 4);
  Rng rng(5);
  ForwardPolicy pf(g, ModelSpec{ModelKind::Mlp, {8}}, rng);
  const std::vector<State> states{{0, 0}, {1, 2}, {3, 3}};
  const Matrix before = pf.log_probs(states);
  const Vector snap = snapshot_params(pf.params());
  EXPECT_EQ(snap.size(), pf.params().size());
  EXPECT_EQ(snap.size(), 8 * 8 + 8 + 8 * 3 + 3);
  pf.params().values.array() += 0.3;
  EXPECT_NE(pf.log_probs(states), before);
  restore_params(pf.params(), snap);
  EXPECT_EQ(pf.log_probs(states), before);
  EXPECT_THROW(restore_params(pf.params(), Vector::Zero(3)), ContractError);
}

TEST(Policy, LogMuHasUnitValueAndLogZGradient) {
  LogZ z(1.7);
  Tape tape;
  Var mu = z.log_mu(tape);
  EXPECT_EQ(mu.scalar(), 0.0);
  z.params().zero_grad();
  tape.backward(sum(mu));
  EXPECT_EQ(z.params().grads[0], 1.0);
}

TEST(Policy, PinnedValuesAndFlow) {
  HyperGrid g(2, 3);
  Rng rng(2);
  ValueEstimator vf(g, ValueEstimator::Pin::Sink, tk::tabular(), rng);
  ValueEstimator vb(g, ValueEstimator::Pin::Root, tk::tabular(), rng);
  vf.params().values.setConstant(4.0);
  vb.params().values.setConstant(4.0);
  const Vector a = vf.values(std::vector<State>{g.sink(), {1, 1}});
  EXPECT_EQ(a[0], 0.0);
  EXPECT_EQ(a[1], 4.0);
  const Vector b = vb.values(std::vector<State>{g.initial(), {1, 1}});
  EXPECT_EQ(b[0], 0.0);
  EXPECT_EQ(b[1], 4.0);

  // A state whose only child is the sink has log F = log R.
  StateFlow flow(g, tk::tabular(), rng);
  EXPECT_NEAR(flow.log_flow(std::vector<State>{{2, 2}})[0], std::log(g.reward({2, 2})), 1e-15);
}

TEST(Policy, CheckpointRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "gflow_policy_test.ckpt";
  Checkpoint c;
  c.kind = ModelKind::Mlp;
  c.dims = {4, 8, 3};
  c.seed = 77;
  c.values = Vector::LinSpaced(10, -1, 1);
  save_checkpoint(path.string(), c);
  const Checkpoint d = load_checkpoint(path.string());
  EXPECT_EQ(d.kind, c.kind);
  EXPECT_EQ(d.dims, c.dims);
  EXPECT_EQ(d.seed, c.seed);
  EXPECT_EQ(d.values, c.values);
  std::filesystem::remove(path);
}
