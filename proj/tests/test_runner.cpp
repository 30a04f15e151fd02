#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gflow/runner.hpp"

using namespace gflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gflow_runner_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_csv(const fs::path& dir, const std::string& name, const std::string& body) {
  const fs::path p = dir / name;
  std::ofstream(p) << kMetricsHeader << '\n' << body;
  return p.string();
}

std::string run_to_string(const RunConfig& cfg, std::uint64_t seed) {
  std::ostringstream out;
  run_seed(cfg, seed, out);
  return out.str();
}

RunConfig grid8(Strategy s, int iterations) {
  RunConfig cfg;
  cfg.height = 8;
  cfg.strategy = s;
  cfg.iterations = iterations;
  cfg.batch = 32;
  cfg.hidden = {32, 32};
  cfg.cadence = std::max(iterations, 1);
  cfg.checkpoint = false;
  cfg.out = "";
  return cfg;
}

}  // namespace

TEST(Config, ParsesKeysAndComments) {
  std::istringstream in(
      "# grid run\n"
      "env = hypergrid\n"
      "height = 12   # trailing comment\n"
      "strategy = TB-B\n"
      "hidden = 16, 16, 8\n"
      "seeds = 1,2,3\n"
      "model = tabular\n"
      "\n"
      "lambda = 0.9\n");
  const RunConfig cfg = parse_config(in);
  EXPECT_EQ(cfg.height, 12);
  EXPECT_EQ(cfg.strategy, Strategy::TB_B);
  EXPECT_EQ(cfg.hidden, (std::vector<int>{16, 16, 8}));
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(cfg.model, ModelKind::Tabular);
  EXPECT_DOUBLE_EQ(cfg.lambda, 0.9);
  EXPECT_EQ(cfg.dim, 2);
}

TEST(Config, Errors) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
  };
  EXPECT_THROW(parse("colour = red\n"), ConfigError);
  EXPECT_THROW(parse("height = twelve\n"), ConfigError);
  EXPECT_THROW(parse("strategy = PPO\n"), ConfigError);
  EXPECT_THROW(parse("lambda = 1.5\n"), ConfigError);
  EXPECT_THROW(parse("batch = 0\n"), ConfigError);
  EXPECT_THROW(parse("just text\n"), ConfigError);
  EXPECT_THROW(parse("strategy = TB-Sub\n"), ConfigError);
  EXPECT_NO_THROW(parse("env = sequence\nstrategy = TB-Sub\n"));
  EXPECT_THROW(load_config("/nonexistent/gflow.cfg"), ConfigError);
}

TEST(Config, StrategyNamesRoundTrip) {
  for (Strategy s : {Strategy::DB_U, Strategy::DB_B, Strategy::TB_U, Strategy::TB_B, Strategy::TB_Sub,
                     Strategy::RL_U, Strategy::RL_B, Strategy::RL_T, Strategy::RL_G})
    EXPECT_EQ(parse_strategy(strategy_name(s)), s);
}

TEST(Runner, ZeroIterationsWritesHeaderOnly) {
  EXPECT_EQ(run_to_string(grid8(Strategy::RL_U, 0), 0), std::string(kMetricsHeader) + "\n");
}

TEST(Runner, SameSeedIsByteIdentical) {
  RunConfig cfg = grid8(Strategy::RL_G, 30);
  cfg.cadence = 10;
  const std::string a = run_to_string(cfg, 4);
  const std::string b = run_to_string(cfg, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, run_to_string(cfg, 5));
  std::istringstream lines(a);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 4);
}

TEST(Runner, RunWritesFilesPerSeed) {
  RunConfig cfg = grid8(Strategy::TB_U, 20);
  cfg.cadence = 10;
  cfg.checkpoint = true;
  cfg.seeds = {0, 1};
  cfg.out = scratch("files").string();
  const auto paths = run(cfg);
  ASSERT_EQ(paths.size(), 2u);
  for (const auto& p : paths) {
    const MetricsTable t = read_metrics(p);
    EXPECT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows.back()[0], 20.0);
  }
  EXPECT_TRUE(fs::exists(fs::path(cfg.out) / "TB-U_seed1.ckpt"));
}

TEST(Runner, TbReducesTotalVariation) {
  Experiment exp(grid8(Strategy::TB_U, 500), 0);
  const double initial = exp.evaluate().d_tv;
  for (int i = 0; i < 500; ++i) exp.step();
  EXPECT_LT(exp.evaluate().d_tv, initial);
}

class EveryStrategy : public ::testing::TestWithParam<Strategy> {};

TEST_P(EveryStrategy, RunsWithoutFaults) {
  RunConfig cfg = grid8(GetParam(), 500);
  if (GetParam() == Strategy::TB_Sub) {
    cfg.env = "sequence";
    cfg.length = 4;
    cfg.alphabet = 3;
  }
  std::vector<MetricsRecord> rows;
  std::ostringstream out;
  ASSERT_NO_THROW(rows = run_seed(cfg, 1, out));
  ASSERT_EQ(rows.size(), 1u);
  const MetricsRecord& r = rows.back();
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_TRUE(r.d_tv >= 0.0 && r.d_tv <= 1.0);
  EXPECT_TRUE(r.d_jsd >= 0.0 && r.d_jsd <= std::log(2.0) + 1e-12);
  EXPECT_TRUE(r.acc > 0.0 && r.acc <= 1.0);
}

INSTANTIATE_TEST_SUITE_P(Roster, EveryStrategy,
                         ::testing::Values(Strategy::DB_U, Strategy::DB_B, Strategy::TB_U, Strategy::TB_B,
                                           Strategy::TB_Sub, Strategy::RL_U, Strategy::RL_B, Strategy::RL_T,
                                           Strategy::RL_G),
                         [](const auto& info) {
                           std::string n = strategy_name(info.param);
                           for (char& c : n)
                             if (c == '-') c = '_';
                           return n;
                         });

TEST(Summary, SingleFileHasZeroStd) {
  const auto dir = scratch("single");
  const auto p = write_csv(dir, "a.csv", "10,0.5,0.2,0.1,0.9,3,0\n");
  const auto s = summarize({p});
  ASSERT_EQ(s.size(), 6u);
  EXPECT_EQ(s[0].name, "loss");
  EXPECT_EQ(s[0].mean, 0.5);
  for (const auto& m : s) EXPECT_EQ(m.std, 0.0);
}

TEST(Summary, SampleStandardDeviation) {
  const auto dir = scratch("two");
  const auto a = write_csv(dir, "a.csv", "10,1,1,1,1,1,0\n");
  const auto b = write_csv(dir, "b.csv", "10,3,3,3,3,3,0\n");
  const auto s = summarize({a, b});
  EXPECT_EQ(s[0].mean, 2.0);
  // Bessel-corrected sample std of {1, 3}.
  EXPECT_NEAR(s[0].std, std::sqrt(2.0), 1e-15);
}

TEST(Summary, SmoothingAndSchema) {
  EXPECT_EQ(smooth({4, 4, 4, 4}, 3), (std::vector<double>{4, 4, 4, 4}));
  EXPECT_EQ(smooth({1, 2, 3}, 1), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(smooth({1, 3, 5}, 2), (std::vector<double>{1, 2, 4}));

  const auto dir = scratch("schema");
  const auto a = write_csv(dir, "a.csv", "10,1,1,1,1,1,0\n20,3,1,1,1,1,0\n");
  const auto s = summarize({a}, 2);
  EXPECT_EQ(s[0].mean, 2.0);
  const fs::path bad = dir / "bad.csv";
  std::ofstream(bad) << "iter,loss\n10,1\n";
  EXPECT_THROW(summarize({a, bad.string()}), std::exception);
}
