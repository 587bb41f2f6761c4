#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "irpm/policy.hpp"
#include "irpm/reward_engine.hpp"

namespace irpm {

struct GRPOConfig {
  double clip_epsilon = 0.2;
  double kl_beta = 1e-3;
  double learning_rate = 30.0;  // plain gradient ascent on tabular logits, not Adam
  std::size_t group_size = 4;
  double std_epsilon = 1e-8;
  double max_grad_norm = 1.0;  // <= 0 disables clipping

  void validate() const {
    if (!(clip_epsilon >= 0.0 && clip_epsilon < 1.0)) throw std::invalid_argument("clip_epsilon must lie in [0,1)");
    if (!(kl_beta >= 0.0)) throw std::invalid_argument("kl_beta must be nonnegative");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (group_size < 1) throw std::invalid_argument("group_size must be at least 1");
    if (!(std_epsilon > 0.0)) throw std::invalid_argument("std_epsilon must be positive");
  }
};

/// Within-group standardisation (population std). Groups whose std does not
/// exceed std_epsilon get all-zero advantages.
inline std::vector<double> normalize_advantages(std::span<const double> rewards, const GRPOConfig& config) {
  std::vector<double> adv(rewards.size(), 0.0);
  if (rewards.empty()) return adv;
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > config.std_epsilon)) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

/// rho - log(rho) - 1 with rho = pi_ref / pi_current, evaluated as
/// expm1(d) - d for accuracy near rho = 1.
inline double kl_estimate(double logp_current, double logp_ref) {
  if (!std::isfinite(logp_current) || !std::isfinite(logp_ref))
    throw std::invalid_argument("kl_estimate needs finite log-probabilities");
  const double d = logp_ref - logp_current;
  return std::max(std::expm1(d) - d, 0.0);
}

inline double clip_ratio(double ratio, double eps) { return std::clamp(ratio, 1.0 - eps, 1.0 + eps); }

inline double grpo_surrogate(double ratio, double advantage, double clip_epsilon) {
  if (!(ratio > 0.0)) throw std::invalid_argument("ratio must be positive");
  return std::min(ratio * advantage, clip_ratio(ratio, clip_epsilon) * advantage);
}

/// True when the unclipped term attains the min, i.e. the surrogate passes
/// gradient. Ties count as unclipped.
inline bool surrogate_unclipped(double ratio, double advantage, double clip_epsilon) {
  return ratio * advantage <= clip_ratio(ratio, clip_epsilon) * advantage;
}

/// One sampled rollout with the log-probabilities recorded at sampling time.
struct RolloutRecord {
  ResponseKey key;
  RolloutOutcome outcome;
  TokenLogProbs old_logp;  // sampling policy
  TokenLogProbs ref_logp;  // frozen reference policy
  double reward = 0.0;
  double advantage = 0.0;
};

/// Rollouts for one preference pair. The chosen and rejected sides are
/// separate GRPO groups.
struct PairRollouts {
  std::string pair_id;
  std::vector<RolloutRecord> chosen;
  std::vector<RolloutRecord> rejected;
};

struct RolloutBatch {
  std::vector<PairRollouts> pairs;

  std::size_t group_count() const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += !p.chosen.empty() + !p.rejected.empty();
    return n;
  }
};

namespace detail {

// Calls fn(record, group_weight) for every rollout; the weight is
// 1 / (groups * group size), the per-rollout share of the batch average.
template <typename Fn>
void for_each_weighted(const RolloutBatch& batch, Fn&& fn) {
  const std::size_t groups = batch.group_count();
  if (groups == 0) return;
  auto visit = [&](const std::vector<RolloutRecord>& g) {
    if (g.empty()) return;
    const double w = 1.0 / (static_cast<double>(groups) * static_cast<double>(g.size()));
    for (const auto& r : g) fn(r, w);
  };
  for (const auto& p : batch.pairs) {
    visit(p.chosen);
    visit(p.rejected);
  }
}

inline double token_term(double logp, double old_logp, double ref_logp, double advantage, const GRPOConfig& c) {
  const double ratio = std::exp(logp - old_logp);
  return grpo_surrogate(ratio, advantage, c.clip_epsilon) - c.kl_beta * kl_estimate(logp, ref_logp);
}

// d(token_term)/d(logp).
inline double token_term_slope(double logp, double old_logp, double ref_logp, double advantage, const GRPOConfig& c) {
  const double ratio = std::exp(logp - old_logp);
  const double surrogate = surrogate_unclipped(ratio, advantage, c.clip_epsilon) ? ratio * advantage : 0.0;
  return surrogate + c.kl_beta * (std::exp(ref_logp - logp) - 1.0);
}

}  // namespace detail

/// Clipped-surrogate GRPO objective minus the KL penalty, averaged over
/// tokens within a rollout, rollouts within a group, and groups in the batch.
inline double objective_value(const ToyScorerPolicy& policy, const RolloutBatch& batch, const GRPOConfig& config) {
  double total = 0.0;
  detail::for_each_weighted(batch, [&](const RolloutRecord& r, double w) {
    const TokenLogProbs cur = token_log_probs(policy, r.key, r.outcome);
    const double per_token = w / static_cast<double>(cur.length());
    total += per_token * detail::token_term(cur.format, r.old_logp.format, r.ref_logp.format, r.advantage, config);
    if (cur.score)
      total += per_token * detail::token_term(*cur.score, *r.old_logp.score, *r.ref_logp.score, r.advantage, config);
  });
  return total;
}

/// Analytic gradient of objective_value with respect to every logit.
inline PolicyGradient objective_gradient(const ToyScorerPolicy& policy, const RolloutBatch& batch,
                                         const GRPOConfig& config) {
  PolicyGradient grad;
  const double inv_t = 1.0 / policy.temperature();
  const std::size_t n_bins = policy.grid().size();
  detail::for_each_weighted(batch, [&](const RolloutRecord& r, double w) {
    const TokenLogProbs cur = token_log_probs(policy, r.key, r.outcome);
    const double per_token = w / static_cast<double>(cur.length());
    PolicyRow& g = grad.touch(r.key, n_bins);

    const double fmt_slope =
        per_token * detail::token_term_slope(cur.format, r.old_logp.format, r.ref_logp.format, r.advantage, config);
    const double q = policy.format_ok_prob(r.key);
    g.format_logit += fmt_slope * (r.outcome.format_ok ? (1.0 - q) : -q) * inv_t;

    if (cur.score) {
      const double slope =
          per_token * detail::token_term_slope(*cur.score, *r.old_logp.score, *r.ref_logp.score, r.advantage, config);
      if (slope != 0.0) {
        const std::size_t bin = *policy.grid().index_of(*r.outcome.score);
        const std::vector<double> p = policy.bin_probs(r.key);
        for (std::size_t k = 0; k < n_bins; ++k) g.logits[k] -= slope * p[k] * inv_t;
        g.logits[bin] += slope * inv_t;
      }
    }
  });
  return grad;
}

}  // namespace irpm
