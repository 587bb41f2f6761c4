#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "irpm/grpo.hpp"
#include "irpm/policy.hpp"
#include "irpm/preference_data.hpp"
#include "irpm/reward_engine.hpp"
#include "irpm/rng.hpp"

namespace irpm {

struct StepDiagnostics {
  std::size_t step = 0;  // 1-based
  double mean_reward = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  double score_variance = 0.0;
  std::size_t scorer_calls = 0;  // cumulative
  std::size_t skipped_pairs = 0;
  double format_violation_rate = 0.0;
  double grad_norm = 0.0;  // before clipping
};

struct SkippedPair {
  std::string reason;
  PairRollouts rollouts;  // rewards and advantages left at zero
};

/// Distribution of one key at sampling time, kept so entropy can be
/// recomputed from the log.
struct KeySnapshot {
  ResponseKey key;
  double format_ok_prob = 0.0;
  std::vector<double> bin_probs;
};

/// Raw record of one step: every rollout plus the per-key distributions.
struct StepLog {
  std::size_t step = 0;
  StepDiagnostics diagnostics;
  RolloutBatch batch;
  std::vector<SkippedPair> skipped;
  std::vector<KeySnapshot> keys;
};

/// Policy, frozen reference, step counter, diagnostics and cost meter.
class TrainState {
 public:
  explicit TrainState(ToyScorerPolicy initial) : policy_(initial), reference_(std::move(initial)) {}

  const ToyScorerPolicy& policy() const noexcept { return policy_; }
  ToyScorerPolicy& policy() noexcept { return policy_; }
  const ToyScorerPolicy& reference() const noexcept { return reference_; }
  std::size_t step() const noexcept { return step_; }
  std::size_t scorer_calls() const noexcept { return scorer_calls_; }
  const std::vector<StepDiagnostics>& history() const noexcept { return history_; }

 private:
  friend struct TrainStepAccess;

  ToyScorerPolicy policy_;
  ToyScorerPolicy reference_;
  std::size_t step_ = 0;
  std::size_t scorer_calls_ = 0;
  std::vector<StepDiagnostics> history_;
};

struct TrainStepAccess {
  static void record(TrainState& s, const StepDiagnostics& d, std::size_t calls) {
    s.scorer_calls_ += calls;
    s.step_ += 1;
    s.history_.push_back(d);
    s.history_.back().scorer_calls = s.scorer_calls_;
  }
};

/// Every parsable score sampled in the step, skipped pairs included.
inline std::vector<double> sampled_scores(const StepLog& log) {
  std::vector<double> scores;
  auto collect = [&](const PairRollouts& p) {
    for (const auto* side : {&p.chosen, &p.rejected})
      for (const auto& r : *side)
        if (r.outcome.score) scores.push_back(*r.outcome.score);
  };
  for (const auto& p : log.batch.pairs) collect(p);
  for (const auto& s : log.skipped) collect(s.rollouts);
  return scores;
}

/// Population variance, two-pass.
inline double score_variance(std::span<const double> scores) {
  if (scores.empty()) return 0.0;
  const double n = static_cast<double>(scores.size());
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  return ss / n;
}

namespace detail {

inline std::vector<RolloutRecord> sample_group(const TrainState& state, const ResponseKey& key, std::size_t g, Rng& rng) {
  std::vector<RolloutRecord> out;
  out.reserve(g);
  for (std::size_t i = 0; i < g; ++i) {
    RolloutRecord r;
    r.key = key;
    r.outcome = sample_rollout(state.policy(), key, rng).outcome;
    r.old_logp = token_log_probs(state.policy(), key, r.outcome);
    r.ref_logp = token_log_probs(state.reference(), key, r.outcome);
    out.push_back(std::move(r));
  }
  return out;
}

inline double rollout_kl(const RolloutRecord& r) {
  double kl = kl_estimate(r.old_logp.format, r.ref_logp.format);
  if (r.old_logp.score) kl += kl_estimate(*r.old_logp.score, *r.ref_logp.score);
  return kl / static_cast<double>(r.old_logp.length());
}

}  // namespace detail

/// One IRPM iteration over a minibatch of preference pairs.
///
/// Samples G rollouts per side of every pair from the current policy,
/// assigns total rewards, normalises advantages separately within the
/// chosen and the rejected group, and takes one clipped gradient-ascent
/// step on the GRPO objective. Pairs without a definable reward are logged
/// and left out of the objective. Each pair draws from its own stream keyed
/// by (seed, step, pair_id).
inline StepLog irpm_train_step(TrainState& state, std::span<const PreferencePair> batch_pairs,
                               const RewardConfig& reward_config, const GRPOConfig& grpo_config, std::uint64_t seed) {
  if (batch_pairs.empty()) throw std::invalid_argument("training batch is empty");
  reward_config.validate();
  grpo_config.validate();
  const std::size_t g = grpo_config.group_size;

  StepLog log;
  log.step = state.step() + 1;
  std::size_t calls = 0;
  std::set<ResponseKey> seen_keys;
  double reward_sum = 0.0;
  std::size_t reward_count = 0;
  std::size_t violations = 0;
  std::size_t rollouts = 0;

  // Read phase: sampling only touches the policy through const access.
  for (const auto& pair : batch_pairs) {
    Rng rng = Rng::stream(seed, {log.step, fnv1a(pair.pair_id)});
    PairRollouts pr;
    pr.pair_id = pair.pair_id;
    pr.chosen = detail::sample_group(state, pair.chosen_key(), g, rng);
    pr.rejected = detail::sample_group(state, pair.rejected_key(), g, rng);
    calls += 2 * g;
    for (const auto& key : {pair.chosen_key(), pair.rejected_key()}) {
      if (seen_keys.insert(key).second)
        log.keys.push_back({key, state.policy().format_ok_prob(key), state.policy().bin_probs(key)});
    }

    for (const auto* side : {&pr.chosen, &pr.rejected})
      for (const auto& r : *side) {
        ++rollouts;
        violations += !r.outcome.format_ok;
      }

    std::vector<RolloutOutcome> oc, orj;
    for (const auto& r : pr.chosen) oc.push_back(r.outcome);
    for (const auto& r : pr.rejected) orj.push_back(r.outcome);
    try {
      const IntergroupRewards rewards = total_rewards(oc, orj, reward_config, pair.strength);
      const auto adv_c = normalize_advantages(rewards.chosen, grpo_config);
      const auto adv_r = normalize_advantages(rewards.rejected, grpo_config);
      for (std::size_t i = 0; i < g; ++i) {
        pr.chosen[i].reward = rewards.chosen[i];
        pr.chosen[i].advantage = adv_c[i];
        pr.rejected[i].reward = rewards.rejected[i];
        pr.rejected[i].advantage = adv_r[i];
        reward_sum += rewards.chosen[i] + rewards.rejected[i];
      }
      reward_count += 2 * g;
      log.batch.pairs.push_back(std::move(pr));
    } catch (const UndefinedRewardError& e) {
      log.skipped.push_back({e.what(), std::move(pr)});
    }
  }

  StepDiagnostics d;
  d.step = log.step;
  d.mean_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
  double kl_sum = 0.0;
  std::size_t kl_count = 0;
  for (const auto& p : log.batch.pairs)
    for (const auto* side : {&p.chosen, &p.rejected})
      for (const auto& r : *side) {
        kl_sum += detail::rollout_kl(r);
        ++kl_count;
      }
  d.kl = kl_count ? kl_sum / static_cast<double>(kl_count) : 0.0;
  double h = 0.0;
  for (const auto& k : log.keys) h += entropy(state.policy(), k.key);
  d.entropy = h / static_cast<double>(log.keys.size());
  d.skipped_pairs = log.skipped.size();
  d.format_violation_rate = rollouts ? static_cast<double>(violations) / static_cast<double>(rollouts) : 0.0;

  d.score_variance = score_variance(sampled_scores(log));

  // Write phase.
  PolicyGradient grad = objective_gradient(state.policy(), log.batch, grpo_config);
  d.grad_norm = grad.norm();
  if (d.grad_norm > 0.0) {
    if (grpo_config.max_grad_norm > 0.0 && d.grad_norm > grpo_config.max_grad_norm)
      grad.scale(grpo_config.max_grad_norm / d.grad_norm);
    apply_gradient(state.policy(), grad, grpo_config.learning_rate);
  }
  TrainStepAccess::record(state, d, calls);
  log.diagnostics = state.history().back();
  return log;
}

/// Deterministic minibatch: batch_size distinct pair indices for `step`
/// (partial Fisher-Yates on a stream keyed by seed and step).
inline std::vector<std::size_t> select_batch(std::size_t n_pairs, std::size_t batch_size, std::size_t step,
                                             std::uint64_t seed) {
  if (n_pairs == 0) throw std::invalid_argument("cannot draw a batch from an empty dataset");
  const std::size_t b = std::min(batch_size, n_pairs);
  std::vector<std::size_t> idx(n_pairs);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, {step, 0x6261746368ULL});
  for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.below(n_pairs - i)]);
  idx.resize(b);
  return idx;
}

}  // namespace irpm
