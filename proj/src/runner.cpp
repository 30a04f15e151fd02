#include "gflow/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace gflow {

namespace {

const std::map<std::string, Strategy>& strategy_table() {
  static const std::map<std::string, Strategy> table{
      {"DB-U", Strategy::DB_U}, {"DB-B", Strategy::DB_B}, {"TB-U", Strategy::TB_U},
      {"TB-B", Strategy::TB_B}, {"TB-Sub", Strategy::TB_Sub}, {"RL-U", Strategy::RL_U},
      {"RL-B", Strategy::RL_B}, {"RL-T", Strategy::RL_T}, {"RL-G", Strategy::RL_G}};
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("bad value for '" + key + "': " + value);
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for '" + key + "': " + value);
}

bool value_based(Strategy s) {
  return s == Strategy::DB_U || s == Strategy::DB_B || s == Strategy::TB_U || s == Strategy::TB_B ||
         s == Strategy::TB_Sub;
}

AgentSpec agent_spec(const RunConfig& cfg) {
  AgentSpec spec;
  spec.model = ModelSpec{cfg.model, cfg.hidden};
  switch (cfg.strategy) {
    case Strategy::DB_U: spec.state_flow = true; break;
    case Strategy::DB_B: spec.state_flow = true; spec.learned_backward = true; break;
    case Strategy::TB_U: break;
    case Strategy::TB_B: spec.learned_backward = true; break;
    case Strategy::TB_Sub: spec.state_flow = true; spec.learned_backward = true; break;
    case Strategy::RL_U:
    case Strategy::RL_T: spec.forward_value = true; break;
    case Strategy::RL_B:
    case Strategy::RL_G:
      spec.forward_value = true;
      spec.learned_backward = true;
      spec.backward_value = cfg.backward_value;
      break;
  }
  return spec;
}

}  // namespace

Strategy parse_strategy(const std::string& name) {
  const auto it = strategy_table().find(name);
  if (it == strategy_table().end()) throw ConfigError("unknown strategy: " + name);
  return it->second;
}

std::string strategy_name(Strategy s) {
  for (const auto& [name, value] : strategy_table())
    if (value == s) return name;
  return "?";
}

void RunConfig::validate() const {
  if (env != "hypergrid" && env != "sequence") throw ConfigError("env must be hypergrid or sequence");
  if (dim < 1 || height < 2) throw ConfigError("hypergrid needs dim >= 1 and height >= 2");
  if (length < 1 || alphabet < 2) throw ConfigError("sequence needs length >= 1 and alphabet >= 2");
  if (iterations < 0) throw ConfigError("iterations must be nonnegative");
  if (batch < 1) throw ConfigError("batch must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(lr_policy > 0.0 && lr_value > 0.0 && lr_logz > 0.0)) throw ConfigError("all rates must be positive");
  if (strategy == Strategy::RL_T && !(zeta > 0.0)) throw ConfigError("RL-T needs zeta > 0");
  if (!(subtb_base > 0.0)) throw ConfigError("subtb_base must be positive");
  if (cadence < 1) throw ConfigError("cadence must be positive");
  if (mode_samples < 1 || acc_samples < 1) throw ConfigError("sample counts must be positive");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (hidden.empty() && model == ModelKind::Mlp) throw ConfigError("mlp needs hidden layer sizes");
  for (int h : hidden)
    if (h < 1) throw ConfigError("hidden sizes must be positive");
  if (strategy == Strategy::TB_Sub && env == "hypergrid")
    throw ConfigError("TB-Sub needs a graded environment; the hyper-grid is not graded");
}

RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
      {"env", [&](auto&, auto& v) { cfg.env = v; }},
      {"dim", [&](auto& k, auto& v) { cfg.dim = parse_number<int>(k, v); }},
      {"height", [&](auto& k, auto& v) { cfg.height = parse_number<int>(k, v); }},
      {"length", [&](auto& k, auto& v) { cfg.length = parse_number<int>(k, v); }},
      {"alphabet", [&](auto& k, auto& v) { cfg.alphabet = parse_number<int>(k, v); }},
      {"reward_seed", [&](auto& k, auto& v) { cfg.reward_seed = parse_number<std::uint64_t>(k, v); }},
      {"reward_table", [&](auto&, auto& v) { cfg.reward_table = v; }},
      {"strategy", [&](auto&, auto& v) { cfg.strategy = parse_strategy(v); }},
      {"iterations", [&](auto& k, auto& v) { cfg.iterations = parse_number<int>(k, v); }},
      {"batch", [&](auto& k, auto& v) { cfg.batch = parse_number<int>(k, v); }},
      {"lambda", [&](auto& k, auto& v) { cfg.lambda = parse_number<double>(k, v); }},
      {"zeta", [&](auto& k, auto& v) { cfg.zeta = parse_number<double>(k, v); }},
      {"gamma", [&](auto& k, auto& v) { cfg.gamma = parse_number<double>(k, v); }},
      {"lr_policy", [&](auto& k, auto& v) { cfg.lr_policy = parse_number<double>(k, v); }},
      {"lr_value", [&](auto& k, auto& v) { cfg.lr_value = parse_number<double>(k, v); }},
      {"lr_logz", [&](auto& k, auto& v) { cfg.lr_logz = parse_number<double>(k, v); }},
      {"subtb_base", [&](auto& k, auto& v) { cfg.subtb_base = parse_number<double>(k, v); }},
      {"backward_value", [&](auto& k, auto& v) { cfg.backward_value = parse_bool(k, v); }},
      {"model",
       [&](auto&, auto& v) {
         if (v == "mlp") cfg.model = ModelKind::Mlp;
         else if (v == "tabular") cfg.model = ModelKind::Tabular;
         else throw ConfigError("model must be mlp or tabular");
       }},
      {"hidden", [&](auto& k, auto& v) { cfg.hidden = parse_list<int>(k, v); }},
      {"cadence", [&](auto& k, auto& v) { cfg.cadence = parse_number<int>(k, v); }},
      {"mode_samples", [&](auto& k, auto& v) { cfg.mode_samples = parse_number<int>(k, v); }},
      {"mode_quantile", [&](auto& k, auto& v) { cfg.mode_quantile = parse_number<double>(k, v); }},
      {"acc_samples", [&](auto& k, auto& v) { cfg.acc_samples = parse_number<int>(k, v); }},
      {"exact_limit", [&](auto& k, auto& v) { cfg.exact_limit = parse_number<std::uint64_t>(k, v); }},
      {"guide_epsilon", [&](auto& k, auto& v) { cfg.guide_epsilon = parse_number<double>(k, v); }},
      {"guide_capacity", [&](auto& k, auto& v) { cfg.guide_capacity = parse_number<std::size_t>(k, v); }},
      {"seeds", [&](auto& k, auto& v) { cfg.seeds = parse_list<std::uint64_t>(k, v); }},
      {"out", [&](auto&, auto& v) { cfg.out = v; }},
      {"timing", [&](auto& k, auto& v) { cfg.timing = parse_bool(k, v); }},
      {"checkpoint", [&](auto& k, auto& v) { cfg.checkpoint = parse_bool(k, v); }},
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  return parse_config(in);
}

std::unique_ptr<Environment> make_environment(const RunConfig& cfg) {
  if (cfg.env == "hypergrid") return std::make_unique<HyperGrid>(cfg.dim, cfg.height);
  SequenceRewardConfig rc;
  rc.seed = cfg.reward_seed;
  if (!cfg.reward_table.empty())
    return std::make_unique<SequenceEnv>(cfg.length, cfg.alphabet,
                                         SequenceEnv::load_table(cfg.reward_table, cfg.length, cfg.alphabet),
                                         rc.beta, rc.r_min, rc.r_max);
  return std::make_unique<SequenceEnv>(SequenceEnv::synthetic(cfg.length, cfg.alphabet, rc));
}

// ---------------------------------------------------------------------------

const char* const kMetricsHeader = "iter,loss,d_tv,d_jsd,acc,modes,seconds";

std::string format_record(const MetricsRecord& r) {
  std::ostringstream out;
  out << std::setprecision(10) << r.iter << ',' << r.loss << ',' << r.d_tv << ',' << r.d_jsd << ',' << r.acc << ','
      << r.modes << ',' << r.seconds;
  return out.str();
}

Experiment::Experiment(const RunConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), env_(make_environment(cfg)), rng_(seed), eval_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  cfg_.validate();
  if (cfg_.strategy == Strategy::TB_Sub && !env_->graded())
    throw ConfigError("TB-Sub needs a graded environment");
  schedule_.gamma = cfg_.gamma;
  TrainerConfig tc;
  tc.lambda = cfg_.lambda;
  tc.lr_policy = cfg_.lr_policy;
  tc.lr_value = cfg_.lr_value;
  tc.lr_logz = cfg_.lr_logz;
  tc.backward_value = cfg_.backward_value;
  agent_ = std::make_unique<Agent>(*env_, agent_spec(cfg_), tc, rng_);

  if (env_->state_count() + 1 <= cfg_.exact_limit) {
    graph_ = enumerate_states(*env_, cfg_.exact_limit + 1);
    target_ = target_distribution(*graph_);
    reward_ = graph_->rewards();
    modes_ = ModeSet::from_graph(*env_, *graph_, cfg_.mode_quantile);
  } else if (const auto* seq = dynamic_cast<const SequenceEnv*>(env_.get())) {
    modes_ = ModeSet::from_sequence_table(*seq, cfg_.mode_quantile);
    double z = 0.0, r2 = 0.0;
    for (double r : seq->rewards()) {
      z += r;
      r2 += r * r;
    }
    target_mean_reward_ = r2 / z;
  } else {
    throw ConfigError("environment too large for evaluation");
  }

  if (cfg_.strategy == Strategy::RL_G) {
    if (const auto* grid = dynamic_cast<const HyperGrid*>(env_.get()))
      guide_ = std::make_unique<HyperGridGuide>(*grid, cfg_.guide_epsilon);
    else
      guide_ = std::make_unique<SequenceGuide>(*env_, cfg_.guide_capacity);
  }
}

double Experiment::step() {
  Agent& a = *agent_;
  double loss = 0.0;
  if (value_based(cfg_.strategy)) {
    const Batch batch = sample_mixture(*env_, a.forward, schedule_.epsilon(iteration_), cfg_.batch, rng_, &a.backward);
    const Objective obj = cfg_.strategy == Strategy::TB_Sub ? Objective::SubTB
                          : (cfg_.strategy == Strategy::DB_U || cfg_.strategy == Strategy::DB_B) ? Objective::DB
                                                                                                  : Objective::TB;
    loss = value_based_step(a, obj, batch, cfg_.subtb_base);
  } else {
    const Batch batch = sample_forward(*env_, a.forward, cfg_.batch, rng_, &a.backward);
    switch (cfg_.strategy) {
      case Strategy::RL_U: loss = actor_critic_step(a, batch).objective; break;
      case Strategy::RL_T: {
        TrustRegionConfig tr;
        tr.zeta = cfg_.zeta;
        last_trpo_ = trpo_step(a, batch, tr);
        loss = last_trpo_->forward.objective;
        break;
      }
      case Strategy::RL_B: loss = guided_coupled_step(a, batch, nullptr, rng_).objective; break;
      case Strategy::RL_G: loss = guided_coupled_step(a, batch, guide_.get(), rng_).objective; break;
      default: break;
    }
  }
  ++iteration_;
  last_loss_ = loss;
  return loss;
}

std::vector<double> Experiment::terminating_distribution() const {
  if (!graph_) throw ContractError("terminating distribution needs an enumerated environment");
  return exact::terminating_distribution(*graph_, forward_edge_log_probs(*graph_, agent_->forward));
}

MetricsRecord Experiment::evaluate() {
  MetricsRecord r;
  r.iter = iteration_;
  r.loss = last_loss_;
  if (graph_) {
    const auto p = terminating_distribution();
    r.d_tv = d_tv(p, target_);
    r.d_jsd = d_jsd(p, target_);
    r.acc = acc(p, target_, reward_);
  } else {
    r.d_tv = r.d_jsd = std::numeric_limits<double>::quiet_NaN();
    double mean_reward = 0.0;
    const Batch samples = sample_forward(*env_, agent_->forward, cfg_.acc_samples, eval_rng_);
    for (const auto& tau : samples) mean_reward += std::exp(tau.log_reward);
    mean_reward /= static_cast<double>(samples.size());
    r.acc = std::min(mean_reward / target_mean_reward_, 1.0);
  }
  r.modes = mode_count(*env_, agent_->forward, modes_, cfg_.mode_samples, seen_, eval_rng_);
  return r;
}

std::vector<MetricsRecord> run_seed(const RunConfig& cfg, std::uint64_t seed, std::ostream& csv) {
  Experiment exp(cfg, seed);
  std::vector<MetricsRecord> rows;
  csv << kMetricsHeader << '\n';
  const auto start = std::chrono::steady_clock::now();
  for (int it = 1; it <= cfg.iterations; ++it) {
    exp.step();
    if (it % cfg.cadence == 0 || it == cfg.iterations) {
      MetricsRecord r = exp.evaluate();
      if (cfg.timing)
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      csv << format_record(r) << '\n';
      rows.push_back(r);
    }
  }
  csv.flush();
  if (cfg.checkpoint && !cfg.out.empty() && cfg.iterations > 0) {
    Checkpoint ck;
    ck.kind = exp.agent().forward.model().kind();
    ck.dims = exp.agent().forward.model().dims();
    ck.seed = seed;
    ck.values = exp.agent().forward.params().values;
    save_checkpoint((std::filesystem::path(cfg.out) /
                     (strategy_name(cfg.strategy) + "_seed" + std::to_string(seed) + ".ckpt"))
                        .string(),
                    ck);
  }
  return rows;
}

std::vector<std::string> run(const RunConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out);
  std::vector<std::string> paths;
  for (auto seed : cfg.seeds)
    paths.push_back(
        (std::filesystem::path(cfg.out) / (strategy_name(cfg.strategy) + "_seed" + std::to_string(seed) + ".csv"))
            .string());

  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GFLOW_THREADS")) threads = std::max(1, std::atoi(env));
  threads = std::min<unsigned>(threads, static_cast<unsigned>(cfg.seeds.size()));

  std::exception_ptr error;
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= cfg.seeds.size() || error) return;
        i = next++;
      }
      try {
        std::ofstream out(paths[i]);
        if (!out) throw std::runtime_error("cannot write " + paths[i]);
        run_seed(cfg, cfg.seeds[i], out);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return paths;
}

// ---------------------------------------------------------------------------

MetricsTable read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file: " + path);
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics file: " + path);
  std::stringstream header(line);
  std::string col;
  while (std::getline(header, col, ',')) t.columns.push_back(trim(col));
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream cells(line);
    while (std::getline(cells, col, ',')) row.push_back(std::strtod(col.c_str(), nullptr));
    if (row.size() != t.columns.size()) throw std::runtime_error("ragged row in " + path);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<double> smooth(const std::vector<double>& series, int window) {
  if (window < 1) throw ContractError("smoothing window must be positive");
  std::vector<double> out(series.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    sum += series[i];
    if (i >= static_cast<std::size_t>(window)) sum -= series[i - window];
    out[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

std::vector<MetricSummary> summarize(const std::vector<std::string>& paths, int window) {
  if (paths.empty()) throw ContractError("summarize needs at least one metrics file");
  std::vector<MetricsTable> tables;
  for (const auto& p : paths) {
    tables.push_back(read_metrics(p));
    if (tables.back().columns != tables.front().columns) throw ContractError("mismatched metrics schema: " + p);
    if (tables.back().rows.empty()) throw ContractError("metrics file has no rows: " + p);
  }
  const auto& cols = tables.front().columns;
  std::vector<MetricSummary> out;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] == "iter") continue;
    std::vector<double> finals;
    for (const auto& t : tables) {
      std::vector<double> series;
      for (const auto& row : t.rows) series.push_back(row[c]);
      finals.push_back(smooth(series, window).back());
    }
    MetricSummary s;
    s.name = cols[c];
    for (double v : finals) s.mean += v;
    s.mean /= static_cast<double>(finals.size());
    if (finals.size() > 1) {
      double ss = 0.0;
      for (double v : finals) ss += (v - s.mean) * (v - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(finals.size() - 1));
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace gflow
