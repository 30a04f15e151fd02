#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "gflow/exact.hpp"
#include "gflow/metrics.hpp"
#include "gflow/sampler.hpp"
#include "support.hpp"

using namespace gflow;
namespace tk = gflow::testing;

namespace {

double sigma3(double p, int n) { return 3.0 * std::sqrt(p * (1.0 - p) / n) + 1e-12; }

}  // namespace

TEST(Sampler, ChainHasOneTrajectory) {
  ExplicitDag chain(3, {{0, 1}}, {0.0, 2.0, 0.0});
  Rng rng(0);
  ForwardPolicy pf(chain, tk::tabular(), rng);
  for (const auto& tau : sample_forward(chain, pf, 10, rng)) {
    ASSERT_EQ(tau.states.size(), 3u);
    EXPECT_EQ(tau.states[1], (State{1}));
    EXPECT_TRUE(chain.is_sink(tau.states.back()));
    EXPECT_NEAR(tau.log_reward, std::log(2.0), 1e-15);
  }
}

TEST(Sampler, ForwardMatchesExactTerminatingDistribution) {
  HyperGrid g(1, 2);
  Rng rng(1);
  ForwardPolicy pf(g, tk::tabular(), rng);
  tk::randomize(pf.params(), rng, 1.5);
  const auto graph = enumerate_states(g);
  const auto p = exact::terminating_distribution(graph, forward_edge_log_probs(graph, pf));
  const int n = 100000;
  int hits = 0;
  for (const auto& tau : sample_forward(g, pf, n, rng)) {
    EXPECT_TRUE(g.is_sink(tau.states.back()));
    if (tau.terminal() == State{1}) ++hits;
  }
  const int slot = graph.find(g, {1});
  double p1 = 0.0;
  for (std::size_t i = 0; i < graph.terminating.size(); ++i)
    if (graph.terminating[i] == slot) p1 = p[i];
  EXPECT_LT(std::abs(hits / double(n) - p1), sigma3(p1, n));
}

TEST(Sampler, TrajectoriesValidateAndCachesMatch) {
  HyperGrid g(2, 5);
  Rng rng(2);
  ForwardPolicy pf(g, ModelSpec{ModelKind::Mlp, {16}}, rng);
  auto pb = BackwardPolicy::learned(g, ModelSpec{ModelKind::Mlp, {16}}, rng);
  for (const auto& tau : sample_forward(g, pf, 50, rng, &pb)) {
    validate(g, tau);
    ASSERT_EQ(tau.log_pf.size(), tau.actions.size());
    ASSERT_EQ(tau.log_pb.size(), tau.actions.size());
    for (int t = 0; t < tau.length(); ++t) {
      EXPECT_NEAR(tau.log_pf[t], pf.log_prob(tau.states[t], tau.actions[t]), 1e-12);
      if (t + 1 < tau.length()) EXPECT_NEAR(tau.log_pb[t], pb.log_prob(tau.states[t + 1], tau.actions[t]), 1e-12);
    }
    EXPECT_EQ(tau.log_pb.back(), 0.0);
  }
  Trajectory bad;
  bad.states = {{0, 0}, {2, 0}, g.sink()};
  bad.actions = {0, 2};
  EXPECT_THROW(validate(g, bad), ContractError);
}

TEST(Sampler, MixtureEndpoints) {
  HyperGrid g(1, 3);
  Rng rng(3);
  ForwardPolicy pf(g, tk::tabular(), rng);
  tk::randomize(pf.params(), rng, 2.0);

  // eps = 0 consumes the same draws as the on-policy sampler.
  Rng a(5), b(5);
  const Batch on = sample_forward(g, pf, 200, a);
  const Batch mix0 = sample_mixture(g, pf, 0.0, 200, b);
  for (std::size_t i = 0; i < on.size(); ++i) EXPECT_EQ(on[i].states, mix0[i].states);

  // eps = 1 is the uniform policy; compare against its exact distribution.
  ForwardPolicy uniform(g, tk::tabular(), rng);
  const auto graph = enumerate_states(g);
  const auto p = exact::terminating_distribution(graph, forward_edge_log_probs(graph, uniform));
  const int n = 60000;
  std::map<State, int> counts;
  for (const auto& tau : sample_mixture(g, pf, 1.0, n, rng)) {
    ++counts[tau.terminal()];
    EXPECT_NEAR(tau.log_pf[0], pf.log_prob(tau.states[0], tau.actions[0]), 1e-12);
  }
  for (std::size_t i = 0; i < graph.terminating.size(); ++i) {
    const double f = counts[graph.states[graph.terminating[i]]] / double(n);
    EXPECT_LT(std::abs(f - p[i]), sigma3(p[i], n));
  }
}

TEST(Sampler, MixtureHalfOnTwoActionState) {
  HyperGrid g(1, 2);
  Rng rng(4);
  ForwardPolicy pf(g, tk::tabular(), rng);
  tk::randomize(pf.params(), rng, 2.0);
  const double p_step = std::exp(pf.log_prob({0}, 0));
  const double expected = 0.5 * p_step + 0.25;
  const int n = 100000;
  int steps = 0;
  for (const auto& tau : sample_mixture(g, pf, 0.5, n, rng)) steps += tau.actions[0] == 0;
  EXPECT_LT(std::abs(steps / double(n) - expected), sigma3(expected, n));
}

TEST(Sampler, ScheduleVanishes) {
  MixtureSchedule s{0.99};
  EXPECT_EQ(s.epsilon(0), 1.0);
  EXPECT_NEAR(s.epsilon(1), 0.99, 1e-15);
  EXPECT_LT(s.epsilon(2000), 1e-6);
}

TEST(Sampler, BackwardGivenX) {
  HyperGrid g(2, 3);
  Rng rng(5);
  auto pb = BackwardPolicy::uniform(g);
  // (2,0) has a single path back to s0.
  const auto line = sample_backward_given_x(g, pb, {2, 0}, rng);
  EXPECT_EQ(line.states, (std::vector<State>{{0, 0}, {1, 0}, {2, 0}, g.sink()}));

  const int n = 100000;
  int via_10 = 0;
  for (int i = 0; i < n; ++i) {
    const auto tau = sample_backward_given_x(g, pb, {1, 1}, rng);
    EXPECT_EQ(tau.states.front(), g.initial());
    validate(g, tau);
    via_10 += tau.states[1] == State{1, 0};
  }
  EXPECT_LT(std::abs(via_10 / double(n) - 0.5), sigma3(0.5, n));
}

TEST(Sampler, BackwardSequenceStaysCompatible) {
  SequenceRewardConfig cfg;
  const auto env = SequenceEnv::synthetic(4, 3, cfg);
  Rng rng(6);
  auto pb = BackwardPolicy::learned(env, ModelSpec{ModelKind::Mlp, {8}}, rng);
  ForwardPolicy pf(env, ModelSpec{ModelKind::Mlp, {8}}, rng);
  const State x{2, 0, 1, 1};
  const Batch batch = sample_backward(env, pb, {x, x, x}, rng, &pf);
  for (const auto& tau : batch) {
    EXPECT_EQ(tau.terminal(), x);
    for (const auto& s : tau.states)
      if (!env.is_sink(s)) EXPECT_TRUE(compatible(s, x));
    for (int t = 0; t < tau.length(); ++t)
      EXPECT_NEAR(tau.log_pf[t], pf.log_prob(tau.states[t], tau.actions[t]), 1e-12);
  }
}

TEST(Sampler, ReplayBufferFifo) {
  ReplayBuffer buf(2);
  buf.add({0}, 1.0);
  buf.add({1}, 2.0);
  buf.add({2}, 3.0);
  ASSERT_EQ(buf.size(), 2u);
  EXPECT_EQ(buf.entries().front().first, (State{1}));
  EXPECT_EQ(buf.entries().back().second, 3.0);
}

TEST(Sampler, GuidedScore) {
  const State x1{0, 1, 1}, x2{0, 1, 0};
  ReplayBuffer one(10);
  one.add(x1, 2.0);
  EXPECT_EQ(guided_score(one, {0, -1, -1}, x1), 2.0);
  EXPECT_EQ(guided_score(one, {1, -1, -1}, x1), 0.0);

  ReplayBuffer two(10);
  two.add(x1, 1.0);
  two.add(x2, 3.0);
  EXPECT_EQ(guided_score(two, {0, 1, -1}, x1), 2.0);
  // Compatible with x but nothing in the buffer extends it.
  EXPECT_EQ(guided_score(two, {-1, -1, 2}, State{0, 1, 2}), kScoreFloor);
}
