#include "gflow/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gflow {

namespace {

const State& child_by_action(const std::vector<Transition>& children, int action) {
  for (const auto& t : children)
    if (t.action == action) return t.state;
  throw ContractError("sampled action has no matching transition");
}

Batch rollout(const Environment& env, const ForwardPolicy& forward, double epsilon, int n, Rng& rng,
              const BackwardPolicy* backward) {
  if (n < 1) throw ContractError("sampling needs n >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractError("mixture factor must lie in [0, 1]");
  Batch batch(n);
  for (auto& tau : batch) tau.states.push_back(env.initial());
  std::vector<int> active(n);
  for (int i = 0; i < n; ++i) active[i] = i;

  std::vector<State> current;
  Eigen::RowVectorXd probs;
  while (!active.empty()) {
    current.clear();
    for (int i : active) current.push_back(batch[i].states.back());
    const Matrix lp = forward.log_probs(current);
    std::vector<int> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      Trajectory& tau = batch[active[k]];
      int a;
      if (epsilon > 0.0) {
        const int valid = static_cast<int>((lp.row(k).array() > -std::numeric_limits<double>::infinity()).count());
        probs = lp.row(k).array().exp() * (1.0 - epsilon);
        for (Eigen::Index j = 0; j < probs.size(); ++j)
          if (std::isfinite(lp(k, j))) probs[j] += epsilon / valid;
        a = sample_categorical(probs.array().log().matrix(), rng);
      } else {
        a = sample_categorical(lp.row(k), rng);
      }
      const auto children = env.children(current[k]);
      tau.actions.push_back(a);
      tau.log_pf.push_back(lp(k, a));
      tau.states.push_back(child_by_action(children, a));
      if (env.is_sink(tau.states.back())) {
        tau.log_reward = std::log(env.reward(tau.terminal()));
      } else {
        still.push_back(active[k]);
      }
    }
    active = std::move(still);
  }
  for (auto& tau : batch) tau.log_pb.assign(tau.actions.size(), 0.0);
  if (backward != nullptr) fill_log_pb(*backward, batch);
  return batch;
}

}  // namespace

Batch sample_forward(const Environment& env, const ForwardPolicy& forward, int n, Rng& rng,
                     const BackwardPolicy* backward) {
  return rollout(env, forward, 0.0, n, rng, backward);
}

Batch sample_mixture(const Environment& env, const ForwardPolicy& forward, double epsilon, int n,
                     Rng& rng, const BackwardPolicy* backward) {
  return rollout(env, forward, epsilon, n, rng, backward);
}

Batch sample_backward(const Environment& env, const BackwardPolicy& backward,
                      const std::vector<State>& terminals, Rng& rng, const ForwardPolicy* forward) {
  const int n = static_cast<int>(terminals.size());
  // Reversed paths: x, parent, ..., s0.
  std::vector<std::vector<State>> paths(n);
  std::vector<std::vector<int>> acts(n);
  std::vector<std::vector<double>> lpb(n);
  std::vector<int> active;
  for (int i = 0; i < n; ++i) {
    if (!env.is_terminating(terminals[i])) throw ContractError("sample_backward: x is not terminating");
    paths[i].push_back(terminals[i]);
    if (!env.is_initial(terminals[i])) active.push_back(i);
  }
  std::vector<State> current;
  while (!active.empty()) {
    current.clear();
    for (int i : active) current.push_back(paths[i].back());
    const Matrix lp = backward.log_probs(current);
    std::vector<int> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const int i = active[k];
      const int a = sample_categorical(lp.row(k), rng);
      const auto parents = env.parents(current[k]);
      acts[i].push_back(a);
      lpb[i].push_back(lp(k, a));
      paths[i].push_back(child_by_action(parents, a));
      if (!env.is_initial(paths[i].back())) still.push_back(i);
    }
    active = std::move(still);
  }
  Batch batch(n);
  for (int i = 0; i < n; ++i) {
    Trajectory& tau = batch[i];
    tau.states.assign(paths[i].rbegin(), paths[i].rend());
    tau.states.push_back(env.sink());
    tau.actions.assign(acts[i].rbegin(), acts[i].rend());
    tau.actions.push_back(env.stop_action());
    tau.log_pb.assign(lpb[i].rbegin(), lpb[i].rend());
    tau.log_pb.push_back(0.0);
    tau.log_pf.assign(tau.actions.size(), 0.0);
    tau.log_reward = std::log(env.reward(terminals[i]));
  }
  if (forward != nullptr) fill_log_pf(*forward, batch);
  return batch;
}

Trajectory sample_backward_given_x(const Environment& env, const BackwardPolicy& backward,
                                   const State& x, Rng& rng, const ForwardPolicy* forward) {
  return sample_backward(env, backward, {x}, rng, forward).front();
}

void fill_log_pf(const ForwardPolicy& forward, Batch& batch) {
  std::vector<State> states;
  for (const auto& tau : batch)
    for (int t = 0; t < tau.length(); ++t) states.push_back(tau.states[t]);
  if (states.empty()) return;
  const Matrix lp = forward.log_probs(states);
  Eigen::Index row = 0;
  for (auto& tau : batch) {
    tau.log_pf.resize(tau.actions.size());
    for (int t = 0; t < tau.length(); ++t, ++row) tau.log_pf[t] = lp(row, tau.actions[t]);
  }
}

void fill_log_pb(const BackwardPolicy& backward, Batch& batch) {
  std::vector<State> states;
  for (const auto& tau : batch)
    for (int t = 0; t + 1 < tau.length(); ++t) states.push_back(tau.states[t + 1]);
  Matrix lp;
  if (!states.empty()) lp = backward.log_probs(states);
  Eigen::Index row = 0;
  for (auto& tau : batch) {
    tau.log_pb.assign(tau.actions.size(), 0.0);
    for (int t = 0; t + 1 < tau.length(); ++t, ++row) tau.log_pb[t] = lp(row, tau.actions[t]);
  }
}

void validate(const Environment& env, const Trajectory& tau) {
  if (tau.states.size() != tau.actions.size() + 1 || tau.actions.empty())
    throw ContractError("validate: malformed trajectory");
  if (!env.is_initial(tau.states.front())) throw ContractError("validate: does not start at s0");
  if (!env.is_sink(tau.states.back())) throw ContractError("validate: does not end at the sink");
  for (int t = 0; t < tau.length(); ++t) {
    const auto children = env.children(tau.states[t]);
    const bool ok = std::any_of(children.begin(), children.end(), [&](const Transition& c) {
      return c.action == tau.actions[t] && c.state == tau.states[t + 1];
    });
    if (!ok) throw ContractError("validate: step " + std::to_string(t) + " is not an edge");
  }
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(const State& x, double reward) {
  entries_.emplace_back(x, reward);
  while (entries_.size() > capacity_) entries_.pop_front();
}

void ReplayBuffer::update(const Batch& batch) {
  for (const auto& tau : batch) add(tau.terminal(), std::exp(tau.log_reward));
}

bool compatible(const State& s, const State& x) {
  if (s.size() != x.size()) return false;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] >= 0 && s[i] != x[i]) return false;
  return true;
}

double guided_score(const ReplayBuffer& buffer, const State& s, const State& x) {
  if (!compatible(s, x)) return 0.0;
  double total = 0.0;
  int count = 0;
  for (const auto& [xp, r] : buffer.entries()) {
    if (compatible(s, xp)) {
      total += r;
      ++count;
    }
  }
  return count > 0 ? std::max(total / count, kScoreFloor) : kScoreFloor;
}

}  // namespace gflow
