#include "gflow/objectives.hpp"

#include <cmath>

namespace gflow {

namespace {

// Every edge of every trajectory as a forward row (state s_t, action a_t),
// and every non-terminal edge as a backward row (state s_{t+1}, action a_t).
struct Rows {
  std::vector<State> fstates, bstates;
  std::vector<int> factions, bactions;
  std::vector<int> ftraj, btraj;
  std::vector<int> fstart, bstart;
  Matrix log_reward;
  int batch = 0;
};

Rows flatten(const Batch& batch) {
  if (batch.empty()) throw ContractError("empty trajectory batch");
  Rows r;
  r.batch = static_cast<int>(batch.size());
  r.log_reward.resize(r.batch, 1);
  for (int b = 0; b < r.batch; ++b) {
    const Trajectory& tau = batch[b];
    if (tau.length() < 1 || tau.states.size() != tau.actions.size() + 1)
      throw ContractError("malformed trajectory in batch");
    if (!std::isfinite(tau.log_reward)) throw DomainError("trajectory reward must be positive and finite");
    r.log_reward(b, 0) = tau.log_reward;
    r.fstart.push_back(static_cast<int>(r.fstates.size()));
    r.bstart.push_back(static_cast<int>(r.bstates.size()));
    for (int t = 0; t < tau.length(); ++t) {
      r.fstates.push_back(tau.states[t]);
      r.factions.push_back(tau.actions[t]);
      r.ftraj.push_back(b);
      if (t + 1 < tau.length()) {
        r.bstates.push_back(tau.states[t + 1]);
        r.bactions.push_back(tau.actions[t]);
        r.btraj.push_back(b);
      }
    }
  }
  return r;
}

struct RowTerms {
  Var lpf;  // M x 1
  Var lpb;  // Mb x 1, unset when there are no backward rows
  bool has_backward = false;
};

RowTerms row_terms(Tape& tape, const Rows& r, ForwardPolicy& forward, BackwardPolicy& backward) {
  RowTerms out;
  out.lpf = gather(forward.log_probs(tape, r.fstates), r.factions);
  if (!r.bstates.empty()) {
    out.lpb = gather(backward.log_probs(tape, r.bstates), r.bactions);
    out.has_backward = true;
  }
  return out;
}

SparseMatrix build_sparse(int rows, int cols, const std::vector<Eigen::Triplet<double>>& triplets) {
  SparseMatrix a(rows, cols);
  a.setFromTriplets(triplets.begin(), triplets.end());
  return a;
}

}  // namespace

Var tb_losses(Tape& tape, const Batch& batch, ForwardPolicy& forward, BackwardPolicy& backward, LogZ& log_z) {
  const Rows r = flatten(batch);
  const RowTerms t = row_terms(tape, r, forward, backward);
  Var diff = segment_sum(t.lpf, r.ftraj, r.batch) + log_z.var(tape) - tape.constant(r.log_reward);
  if (t.has_backward) diff = diff - segment_sum(t.lpb, r.btraj, r.batch);
  return square(diff);
}

Var db_losses(Tape& tape, const Batch& batch, ForwardPolicy& forward, BackwardPolicy& backward, StateFlow& flow) {
  const Rows r = flatten(batch);
  const RowTerms t = row_terms(tape, r, forward, backward);
  const int m = static_cast<int>(r.fstates.size());
  const int mb = static_cast<int>(r.bstates.size());
  // v = [log F (m) | log pi_F (m) | log pi_B (mb) | log R (B)]
  std::vector<Var> parts{flow.log_flow(tape, r.fstates), t.lpf};
  if (t.has_backward) parts.push_back(t.lpb);
  parts.push_back(tape.constant(r.log_reward));
  const int off_pf = m, off_pb = 2 * m, off_r = 2 * m + mb;

  std::vector<Eigen::Triplet<double>> trip;
  for (int b = 0; b < r.batch; ++b) {
    const int len = batch[b].length();
    for (int k = 0; k < len; ++k) {
      const int row = r.fstart[b] + k;
      trip.emplace_back(row, row, 1.0);
      trip.emplace_back(row, off_pf + row, 1.0);
      if (k + 1 < len) {
        trip.emplace_back(row, row + 1, -1.0);
        trip.emplace_back(row, off_pb + r.bstart[b] + k, -1.0);
      } else {
        trip.emplace_back(row, off_r + b, -1.0);
      }
    }
  }
  Var resid = spmv(build_sparse(m, off_r + r.batch, trip), vcat(parts));
  return segment_sum(square(resid), r.ftraj, r.batch);
}

std::vector<double> subtb_weights(int states, double base) {
  if (states < 1) throw ContractError("subtb_weights: empty chain");
  if (!(base > 0.0)) throw ContractError("subtb_weights: base must be positive");
  const int last = states - 1;
  std::vector<double> w;
  if (last == 0) return {1.0};
  const bool full_only = std::isinf(base);
  const double lb = std::log(base);
  double mx = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < last; ++m)
    for (int n = m + 1; n <= last; ++n) mx = std::max(mx, (n - m) * lb);
  double total = 0.0;
  for (int m = 0; m < last; ++m) {
    for (int n = m + 1; n <= last; ++n) {
      const double v = full_only ? (m == 0 && n == last ? 1.0 : 0.0) : std::exp((n - m) * lb - mx);
      w.push_back(v);
      total += v;
    }
  }
  for (double& v : w) v /= total;
  return w;
}

Var subtb_losses(Tape& tape, const Environment& env, const Batch& batch, ForwardPolicy& forward,
                 BackwardPolicy& backward, StateFlow& flow, LogZ& log_z, double base) {
  if (!env.graded()) throw UnsupportedError("Sub-TB needs a graded environment");
  const Rows r = flatten(batch);
  const RowTerms t = row_terms(tape, r, forward, backward);
  const int m = static_cast<int>(r.fstates.size());
  const int mb = static_cast<int>(r.bstates.size());
  // v = [log F (m) | log pi_F (m) | log pi_B (mb) | log Z | log R (B)]
  std::vector<Var> parts{flow.log_flow(tape, r.fstates), t.lpf};
  if (t.has_backward) parts.push_back(t.lpb);
  parts.push_back(log_z.var(tape));
  parts.push_back(tape.constant(r.log_reward));
  const int off_pf = m, off_pb = 2 * m, off_z = 2 * m + mb, off_r = off_z + 1;

  std::vector<Eigen::Triplet<double>> trip;
  std::vector<int> pair_traj;
  std::vector<double> weights;
  int row = 0;
  for (int b = 0; b < r.batch; ++b) {
    const int last = batch[b].length() - 1;  // chain s0..x has last + 1 states
    const int fs = r.fstart[b], bs = r.bstart[b];
    const auto w = subtb_weights(last + 1, base);
    weights.insert(weights.end(), w.begin(), w.end());
    auto add_pair = [&](int lo, int hi) {
      trip.emplace_back(row, lo == 0 ? off_z : fs + lo, 1.0);
      for (int k = lo; k < hi; ++k) {
        trip.emplace_back(row, off_pf + fs + k, 1.0);
        trip.emplace_back(row, off_pb + bs + k, -1.0);
      }
      if (hi == last) {
        trip.emplace_back(row, off_pf + fs + last, 1.0);
        trip.emplace_back(row, off_r + b, -1.0);
      } else {
        trip.emplace_back(row, fs + hi, -1.0);
      }
      pair_traj.push_back(b);
      ++row;
    };
    if (last == 0) {
      add_pair(0, 0);
      continue;
    }
    for (int lo = 0; lo < last; ++lo)
      for (int hi = lo + 1; hi <= last; ++hi) add_pair(lo, hi);
  }
  Var resid = spmv(build_sparse(row, off_r + r.batch, trip), vcat(parts));
  Matrix wcol = Eigen::Map<const Matrix>(weights.data(), static_cast<Eigen::Index>(weights.size()), 1);
  return segment_sum(square(resid) * tape.constant(wcol), pair_traj, r.batch);
}

// ---------------------------------------------------------------------------

std::vector<double> forward_step_rewards(const Trajectory& tau, double log_z) {
  const int len = tau.length();
  std::vector<double> r(len);
  for (int t = 0; t + 1 < len; ++t) r[t] = tau.log_pf[t] - tau.log_pb[t];
  r[len - 1] = tau.log_pf[len - 1] - (tau.log_reward - log_z);
  return r;
}

std::vector<double> backward_step_rewards(const Trajectory& tau) {
  std::vector<double> r(tau.length() - 1);
  for (std::size_t t = 0; t < r.size(); ++t) r[t] = tau.log_pb[t] - tau.log_pf[t];
  return r;
}

std::vector<double> guided_step_rewards(const Trajectory& tau, const std::vector<double>& log_guide) {
  if (static_cast<int>(log_guide.size()) != tau.length() - 1)
    throw DimensionError("guided_step_rewards: one guide log-prob per non-terminal edge");
  std::vector<double> r(log_guide.size());
  for (std::size_t t = 0; t < r.size(); ++t) r[t] = tau.log_pb[t] - log_guide[t];
  return r;
}

Advantage gae(const std::vector<double>& rewards, const std::vector<double>& values, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("gae: lambda must lie in [0, 1]");
  if (values.size() != rewards.size() + 1) throw DimensionError("gae: need one value per state");
  const std::size_t n = rewards.size();
  Advantage out{std::vector<double>(n), std::vector<double>(n)};
  double running = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double delta = rewards[k] + values[k + 1] - values[k];
    running = delta + lambda * running;
    out.adv[k] = running;
    out.ret[k] = running + values[k];
  }
  return out;
}

}  // namespace gflow
