#include "gflow/policy.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace gflow {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<int> mlp_dims(const Environment& env, int outputs, const ModelSpec& spec) {
  std::vector<int> dims{env.feature_dim()};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(outputs);
  return dims;
}

}  // namespace

StateModel::StateModel(const Environment& env, int outputs, const ModelSpec& spec, Rng& rng)
    : env_(&env), kind_(spec.kind), outputs_(outputs) {
  if (outputs < 1) throw DimensionError("StateModel: need at least one output");
  if (kind_ == ModelKind::Mlp) {
    mlp_ = Mlp(mlp_dims(env, outputs, spec));
    mlp_.init(rng);
  } else {
    if (env.state_count() > 50'000'000 / static_cast<std::uint64_t>(outputs))
      throw TooLargeError("StateModel: table too large for tabular parameterisation");
    table_.add(static_cast<Eigen::Index>(env.state_count()), outputs);
  }
}

std::vector<int> StateModel::dims() const {
  if (kind_ == ModelKind::Mlp) return mlp_.dims();
  return {static_cast<int>(env_->state_count()), outputs_};
}

Eigen::Map<Matrix> StateModel::table() {
  if (kind_ != ModelKind::Tabular) throw ContractError("StateModel::table on an MLP model");
  return table_.view(0);
}

Matrix StateModel::features(const std::vector<State>& states) const {
  Matrix x(static_cast<Eigen::Index>(states.size()), env_->feature_dim());
  Vector row(env_->feature_dim());
  for (std::size_t i = 0; i < states.size(); ++i) {
    env_->encode(states[i], row);
    x.row(i) = row.transpose();
  }
  return x;
}

std::vector<int> StateModel::rows(const std::vector<State>& states) const {
  std::vector<int> r(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (env_->is_sink(states[i])) throw ContractError("StateModel: the sink has no table row");
    r[i] = static_cast<int>(env_->index(states[i]));
  }
  return r;
}

Var StateModel::forward(Tape& tape, const std::vector<State>& states) {
  if (kind_ == ModelKind::Mlp) return mlp_.forward(tape, tape.constant(features(states)));
  return gather_rows(tape.parameter(table_, 0), rows(states));
}

Matrix StateModel::evaluate(const std::vector<State>& states) const {
  if (kind_ == ModelKind::Mlp) return mlp_.evaluate(features(states));
  const auto r = rows(states);
  auto t = table_.view(0);
  Matrix out(static_cast<Eigen::Index>(r.size()), outputs_);
  for (std::size_t i = 0; i < r.size(); ++i) out.row(i) = t.row(r[i]);
  return out;
}

// ---------------------------------------------------------------------------

Matrix masked_log_softmax(const Matrix& logits, const Mask& mask) {
  if (logits.rows() != mask.rows() || logits.cols() != mask.cols())
    throw DimensionError("masked_log_softmax: mask shape differs from logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = kNegInf;
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      if (mask(i, j)) mx = std::max(mx, logits(i, j));
    if (mx == kNegInf) throw InvalidMaskError("masked_log_softmax: row has no valid entry");
    double z = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      if (mask(i, j)) z += std::exp(logits(i, j) - mx);
    const double lse = mx + std::log(z);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) out(i, j) = mask(i, j) ? logits(i, j) - lse : kNegInf;
  }
  return out;
}

int sample_categorical(const Eigen::Ref<const Eigen::RowVectorXd>& log_probs, Rng& rng) {
  const double u = uniform01(rng);
  double cdf = 0.0;
  int last = -1;
  for (Eigen::Index j = 0; j < log_probs.size(); ++j) {
    if (log_probs[j] == kNegInf) continue;
    last = static_cast<int>(j);
    cdf += std::exp(log_probs[j]);
    if (u < cdf) return last;
  }
  if (last < 0) throw InvalidMaskError("sample_categorical: no valid action");
  return last;  // rounding left the total just below u
}

// ---------------------------------------------------------------------------

ForwardPolicy::ForwardPolicy(const Environment& env, const ModelSpec& spec, Rng& rng)
    : env_(&env), model_(env, env.action_count(), spec, rng) {}

Var ForwardPolicy::log_probs(Tape& tape, const std::vector<State>& states) {
  return log_softmax_masked(model_.forward(tape, states), env_->forward_mask(states));
}

Matrix ForwardPolicy::log_probs(const std::vector<State>& states) const {
  return masked_log_softmax(model_.evaluate(states), env_->forward_mask(states));
}

double ForwardPolicy::log_prob(const State& s, int action) const {
  if (action < 0 || action >= env_->action_count()) throw ContractError("log_prob: action out of range");
  const double lp = log_probs(std::vector<State>{s})(0, action);
  if (lp == kNegInf) throw ContractError("log_prob: action not available at this state");
  return lp;
}

std::pair<int, double> ForwardPolicy::sample_action(const State& s, Rng& rng) const {
  const Matrix lp = log_probs(std::vector<State>{s});
  const int a = sample_categorical(lp.row(0), rng);
  return {a, lp(0, a)};
}

// ---------------------------------------------------------------------------

BackwardPolicy BackwardPolicy::uniform(const Environment& env) { return BackwardPolicy(env); }

BackwardPolicy BackwardPolicy::learned(const Environment& env, const ModelSpec& spec, Rng& rng) {
  BackwardPolicy p(env);
  p.model_.emplace(env, env.action_count(), spec, rng);
  return p;
}

Matrix BackwardPolicy::log_probs(const std::vector<State>& states) const {
  for (const auto& s : states)
    if (env_->is_sink(s)) throw ContractError("BackwardPolicy: the sink law is R(x)/Z, not a policy output");
  const Mask mask = env_->backward_mask(states);
  if (model_) return masked_log_softmax(model_->evaluate(states), mask);
  return masked_log_softmax(Matrix::Zero(mask.rows(), mask.cols()), mask);
}

Var BackwardPolicy::log_probs(Tape& tape, const std::vector<State>& states) {
  if (!model_) return tape.constant(log_probs(states));
  for (const auto& s : states)
    if (env_->is_sink(s)) throw ContractError("BackwardPolicy: the sink law is R(x)/Z, not a policy output");
  return log_softmax_masked(model_->forward(tape, states), env_->backward_mask(states));
}

double BackwardPolicy::log_prob(const State& s, int action) const {
  if (action < 0 || action >= env_->action_count()) throw ContractError("log_prob: action out of range");
  const double lp = log_probs(std::vector<State>{s})(0, action);
  if (lp == kNegInf) throw ContractError("log_prob: action not available at this state");
  return lp;
}

std::pair<int, double> BackwardPolicy::sample_action(const State& s, Rng& rng) const {
  const Matrix lp = log_probs(std::vector<State>{s});
  const int a = sample_categorical(lp.row(0), rng);
  return {a, lp(0, a)};
}

ParameterSet& BackwardPolicy::params() {
  if (!model_) throw ContractError("uniform backward policy has no parameters");
  return model_->params();
}

const ParameterSet& BackwardPolicy::params() const {
  if (!model_) throw ContractError("uniform backward policy has no parameters");
  return model_->params();
}

// ---------------------------------------------------------------------------

LogZ::LogZ(double init) {
  params_.add(1, 1);
  params_.values[0] = init;
}

Var LogZ::log_mu(Tape& tape) {
  Var z = var(tape);
  return z - stop_gradient(z);
}

ValueEstimator::ValueEstimator(const Environment& env, Pin pin, const ModelSpec& spec, Rng& rng)
    : env_(&env), pin_(pin), model_(env, 1, spec, rng) {}

bool ValueEstimator::pinned(const State& s) const {
  return pin_ == Pin::Sink ? env_->is_sink(s) : env_->is_initial(s);
}

Var ValueEstimator::values(Tape& tape, const std::vector<State>& states) {
  std::vector<State> live;
  std::vector<int> where(states.size(), -1);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (pinned(states[i])) continue;
    where[i] = static_cast<int>(live.size());
    live.push_back(states[i]);
  }
  if (live.size() == states.size()) return model_.forward(tape, live);
  if (live.empty()) return tape.constant(Matrix::Zero(static_cast<Eigen::Index>(states.size()), 1));
  // Pinned rows read a trailing constant zero.
  Var stacked = vcat({model_.forward(tape, live), tape.constant(0.0)});
  for (int& w : where)
    if (w < 0) w = static_cast<int>(live.size());
  return gather_rows(stacked, where);
}

Vector ValueEstimator::values(const std::vector<State>& states) const {
  std::vector<State> live;
  for (const auto& s : states)
    if (!pinned(s)) live.push_back(s);
  Vector out = Vector::Zero(static_cast<Eigen::Index>(states.size()));
  if (live.empty()) return out;
  const Matrix v = model_.evaluate(live);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < states.size(); ++i)
    if (!pinned(states[i])) out[i] = v(k++, 0);
  return out;
}

StateFlow::StateFlow(const Environment& env, const ModelSpec& spec, Rng& rng)
    : env_(&env), model_(env, 1, spec, rng) {}

Var StateFlow::log_flow(Tape& tape, const std::vector<State>& states) {
  Matrix fixed(static_cast<Eigen::Index>(states.size()), 1);
  Matrix keep(static_cast<Eigen::Index>(states.size()), 1);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const bool terminal = env_->is_terminal_only(states[i]);
    keep(i, 0) = terminal ? 0.0 : 1.0;
    fixed(i, 0) = terminal ? std::log(env_->reward(states[i])) : 0.0;
  }
  return model_.forward(tape, states) * tape.constant(keep) + tape.constant(fixed);
}

Vector StateFlow::log_flow(const std::vector<State>& states) const {
  Vector out = model_.evaluate(states).col(0);
  for (std::size_t i = 0; i < states.size(); ++i)
    if (env_->is_terminal_only(states[i])) out[i] = std::log(env_->reward(states[i]));
  return out;
}

// ---------------------------------------------------------------------------

Vector snapshot_params(const ParameterSet& params) { return params.values; }

void restore_params(ParameterSet& params, const Vector& snapshot) {
  if (snapshot.size() != params.size())
    throw ContractError("restore_params: snapshot has " + std::to_string(snapshot.size()) +
                        " values, model has " + std::to_string(params.size()));
  params.values = snapshot;
}

namespace {

constexpr std::array<char, 8> kMagic{'G', 'F', 'L', 'W', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::uint64_t bits = 0;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.kind));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.dims.size()));
  for (int d : ckpt.dims) put_le<std::int32_t>(out, d);
  put_le<std::uint64_t>(out, ckpt.seed);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.values.size()));
  for (Eigen::Index i = 0; i < ckpt.values.size(); ++i) put_le<double>(out, ckpt.values[i]);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("not a checkpoint file: " + path);
  if (get_le<std::uint32_t>(in) != 1) throw std::runtime_error("unsupported checkpoint version");
  Checkpoint c;
  const auto kind = get_le<std::uint32_t>(in);
  if (kind > 1) throw std::runtime_error("unknown model kind in checkpoint");
  c.kind = static_cast<ModelKind>(kind);
  const auto ndims = get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < ndims; ++i) c.dims.push_back(get_le<std::int32_t>(in));
  c.seed = get_le<std::uint64_t>(in);
  const auto count = get_le<std::uint64_t>(in);
  c.values.resize(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) c.values[static_cast<Eigen::Index>(i)] = get_le<double>(in);
  return c;
}

}  // namespace gflow
