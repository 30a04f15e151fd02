#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "gflow/exact.hpp"
#include "gflow/metrics.hpp"
#include "support.hpp"

using namespace gflow;
namespace tk = gflow::testing;

TEST(Exact, UniformLineGrid) {
  HyperGrid env(1, 2);
  Rng rng(0);
  ForwardPolicy pf(env, tk::tabular(), rng);
  const auto g = enumerate_states(env);
  const auto p = exact::terminating_distribution(g, forward_edge_log_probs(g, pf));
  ASSERT_EQ(p.size(), 2u);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
}

TEST(Exact, MatchesMonteCarlo) {
  HyperGrid env(2, 4);
  Rng rng(1);
  ForwardPolicy pf(env, tk::tabular(), rng);
  tk::randomize(pf.params(), rng, 1.0);
  const auto g = enumerate_states(env);
  const auto p = exact::terminating_distribution(g, forward_edge_log_probs(g, pf));
  double total = 0.0;
  for (double v : p) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const int n = 100000;
  std::map<State, int> counts;
  for (const auto& tau : sample_forward(env, pf, n, rng)) ++counts[tau.terminal()];
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double f = counts[g.states[g.terminating[i]]] / double(n);
    EXPECT_LT(std::abs(f - p[i]), 3.0 * std::sqrt(p[i] * (1 - p[i]) / n) + 1e-12);
  }
}

TEST(Exact, VisitationPathsAgree) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    auto dag = ExplicitDag::random(15, rng);
    ForwardPolicy pf(dag, tk::tabular(), rng);
    tk::randomize(pf.params(), rng, 1.5);
    const auto g = enumerate_states(dag);
    const auto lpf = forward_edge_log_probs(g, pf);
    const auto a = exact::visitation_by_layers(g, lpf);
    const auto b = exact::visitation_by_inverse(g, lpf);
    const auto c = exact::visitation_by_power_sum(g, lpf);
    double total = 0.0;
    for (int v = 0; v < g.size(); ++v) {
      EXPECT_NEAR(a[v], b[v], 1e-12);
      EXPECT_NEAR(a[v], c[v], 1e-12);
      total += a[v];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Exact, ForwardObjectiveMatchesPathEnumeration) {
  Rng rng(3);
  auto dag = ExplicitDag::random(12, rng);
  ForwardPolicy pf(dag, tk::tabular(), rng);
  auto pb = BackwardPolicy::learned(dag, tk::tabular(), rng);
  tk::randomize(pf.params(), rng, 1.0);
  tk::randomize(pb.params(), rng, 1.0);
  const auto g = enumerate_states(dag);
  const auto lpf = forward_edge_log_probs(g, pf);
  const auto lpb = backward_edge_log_probs(g, pb);
  const double log_z = 0.25;
  double expected = 0.0;
  for (const auto& path : exact::enumerate_trajectories(g)) {
    const double p = std::exp(exact::path_sum(path, lpf));
    const double ratio = exact::path_sum(path, lpf) + log_z - exact::path_sum(path, lpb, true) -
                         g.log_reward[g.edges[path.back()].src];
    expected += p * ratio;
  }
  EXPECT_NEAR(exact::forward_objective(g, lpf, lpb, log_z), expected, 1e-12);
}

TEST(Exact, PerfectFlowSamplesTarget) {
  HyperGrid env(2, 5);
  const auto g = enumerate_states(env);
  const auto pf = exact::perfect_flow(g);
  const auto p = exact::terminating_distribution(g, pf.log_pf);
  const auto t = target_distribution(g);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], t[i], 1e-12);
  EXPECT_NEAR(pf.log_z, exact::log_partition(g), 1e-12);
  for (const auto& path : exact::enumerate_trajectories(g)) {
    const double r = pf.log_z + exact::path_sum(path, pf.log_pf) - exact::path_sum(path, pf.log_pb, true) -
                     g.log_reward[g.edges[path.back()].src];
    EXPECT_NEAR(r, 0.0, 1e-10);
  }
}

TEST(Exact, LogPartitionOfSixteenGrid) {
  const auto g = enumerate_states(HyperGrid(2, 16));
  EXPECT_NEAR(std::exp(exact::log_partition(g)), 42.56, 1e-10);
}

TEST(Exact, TrajectoryCap) {
  const auto g = enumerate_states(HyperGrid(2, 6));
  EXPECT_THROW(exact::enumerate_trajectories(g, 10), TooLargeError);
}

TEST(Metrics, TotalVariationAndJsd) {
  EXPECT_NEAR(d_tv({0.8, 0.2}, {0.5, 0.5}), 0.3, 1e-15);
  EXPECT_EQ(d_tv({0.3, 0.7}, {0.3, 0.7}), 0.0);
  EXPECT_NEAR(d_tv({1, 0}, {0, 1}), 1.0, 1e-15);
  EXPECT_EQ(d_jsd({0.3, 0.7}, {0.3, 0.7}), 0.0);
  EXPECT_NEAR(d_jsd({1, 0}, {0, 1}), std::log(2.0), 1e-15);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> p(5), q(5);
    double sp = 0, sq = 0;
    for (int k = 0; k < 5; ++k) {
      sp += p[k] = uniform01(rng);
      sq += q[k] = uniform01(rng);
    }
    for (int k = 0; k < 5; ++k) p[k] /= sp, q[k] /= sq;
    const double j = d_jsd(p, q);
    EXPECT_GE(j, 0.0);
    EXPECT_LE(j, std::log(2.0));
    EXPECT_NEAR(j, d_jsd(q, p), 1e-15);
  }
  EXPECT_THROW(d_tv({1.0}, {0.5, 0.5}), ContractError);
}

TEST(Metrics, Acc) {
  const std::vector<double> reward{1.0, 3.0};
  EXPECT_NEAR(acc({0.5, 0.5}, {0.25, 0.75}, reward), 2.0 / 2.5, 1e-15);
  EXPECT_EQ(acc({0.0, 1.0}, {0.25, 0.75}, reward), 1.0);
}

TEST(Metrics, ModeSetAndCount) {
  ModeSet modes({10, 11, 12, 13}, {1.0, 5.0, 5.0, 2.0}, 0.25);
  EXPECT_EQ(modes.threshold(), 5.0);
  EXPECT_EQ(modes.size(), 2u);  // the tie at the threshold is included
  EXPECT_TRUE(modes.contains(11) && modes.contains(12));

  HyperGrid env(2, 16);
  const auto g = enumerate_states(env);
  const ModeSet grid_modes = ModeSet::from_graph(env, g, 4.0 / 256.0);
  EXPECT_EQ(grid_modes.size(), 4u);
  Rng rng(5);
  ForwardPolicy pf(env, tk::tabular(), rng);
  std::unordered_set<std::uint64_t> seen;
  std::size_t last = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t now = mode_count(env, pf, grid_modes, 64, seen, rng);
    EXPECT_GE(now, last);
    EXPECT_LE(now, 4u);
    last = now;
  }
}
