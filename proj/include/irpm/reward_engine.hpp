#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "irpm/student_t.hpp"

namespace irpm {

inline constexpr double kScoreMin = 0.0;
inline constexpr double kScoreMax = 10.0;

/// G sampled scores for one (prompt, response), in rollout order.
class ScoreGroup {
 public:
  ScoreGroup(std::initializer_list<double> scores) : ScoreGroup(std::vector<double>(scores)) {}

  explicit ScoreGroup(std::vector<double> scores) : scores_(std::move(scores)) {
    if (scores_.empty()) throw std::invalid_argument("score group is empty");
    for (double s : scores_)
      if (!(s >= kScoreMin && s <= kScoreMax))
        throw std::invalid_argument("score " + std::to_string(s) + " outside the [0,10] rubric scale");
  }

  std::size_t size() const noexcept { return scores_.size(); }
  double operator[](std::size_t i) const { return scores_[i]; }
  std::span<const double> scores() const noexcept { return scores_; }
  auto begin() const noexcept { return scores_.begin(); }
  auto end() const noexcept { return scores_.end(); }

 private:
  std::vector<double> scores_;
};

/// One scorer output. An absent score means the output could not be parsed.
struct RolloutOutcome {
  std::optional<double> score;
  bool format_ok = false;

  bool valid() const noexcept { return score.has_value() || !format_ok; }
};

enum class RewardVariant { Preference, AUC, Mean, Median, Interval };

inline bool is_rule_based(RewardVariant v) noexcept {
  return v == RewardVariant::Mean || v == RewardVariant::Median || v == RewardVariant::Interval;
}

inline std::string_view to_string(RewardVariant v) noexcept {
  switch (v) {
    case RewardVariant::Preference: return "Preference";
    case RewardVariant::AUC: return "AUC";
    case RewardVariant::Mean: return "Mean";
    case RewardVariant::Median: return "Median";
    case RewardVariant::Interval: return "Interval";
  }
  return "?";
}

/// Accepts "Mean", "mean", "IRPM-Mean", etc.
inline RewardVariant parse_variant(std::string_view name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s.rfind("irpm-", 0) == 0) s = s.substr(5);
  if (s == "preference") return RewardVariant::Preference;
  if (s == "auc") return RewardVariant::AUC;
  if (s == "mean") return RewardVariant::Mean;
  if (s == "median") return RewardVariant::Median;
  if (s == "interval") return RewardVariant::Interval;
  throw std::invalid_argument("unknown reward variant '" + std::string(name) + "'");
}

struct RewardConfig {
  RewardVariant variant = RewardVariant::Mean;
  double margin_delta = 0.0;
  bool adaptive_margin = true;
  double ci_alpha = 0.05;
  double format_penalty = -0.5;
  double temperature = 1.0;  // divides score differences inside the logistic

  void validate() const {
    if (!(margin_delta >= 0.0)) throw std::invalid_argument("margin_delta must be nonnegative");
    if (!(ci_alpha > 0.0 && ci_alpha < 1.0)) throw std::invalid_argument("ci_alpha must lie in (0,1)");
    if (!(temperature > 0.0)) throw std::invalid_argument("logistic temperature must be positive");
    if (!std::isfinite(format_penalty)) throw std::invalid_argument("format_penalty must be finite");
  }
};

struct IntergroupRewards {
  std::vector<double> chosen;
  std::vector<double> rejected;
  double estimate = 0.0;
};

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
};

/// No reward signal is definable for the pair (e.g. one side has no
/// parsable score). Training skips such pairs.
class UndefinedRewardError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline double logistic(double x) noexcept {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Monte-Carlo Bradley-Terry preference estimate over all G_c x G_r
/// intergroup comparisons.
inline double mc_bt_estimate(const ScoreGroup& chosen, const ScoreGroup& rejected, double temperature = 1.0) {
  double total = 0.0;
  for (double c : chosen)
    for (double r : rejected) total += logistic((c - r) / temperature);
  return total / (static_cast<double>(chosen.size()) * static_cast<double>(rejected.size()));
}

/// Per-rollout decomposition of mc_bt_estimate: each rollout is scored by
/// its average logistic win against the opposite group.
inline IntergroupRewards preference_rewards(const ScoreGroup& chosen, const ScoreGroup& rejected,
                                            double temperature = 1.0) {
  const std::size_t gc = chosen.size();
  const std::size_t gr = rejected.size();
  IntergroupRewards out{std::vector<double>(gc, 0.0), std::vector<double>(gr, 0.0), 0.0};
  for (std::size_t i = 0; i < gc; ++i) {
    for (std::size_t j = 0; j < gr; ++j) {
      const double k = logistic((chosen[i] - rejected[j]) / temperature);
      out.chosen[i] += k;
      out.rejected[j] += k;
    }
  }
  for (double& v : out.chosen) v /= static_cast<double>(gr);
  for (double& v : out.rejected) v /= static_cast<double>(gc);
  out.estimate = mc_bt_estimate(chosen, rejected, temperature);
  return out;
}

/// Hard-kernel variant: strict win indicator instead of the logistic.
inline IntergroupRewards auc_rewards(const ScoreGroup& chosen, const ScoreGroup& rejected) {
  const std::size_t gc = chosen.size();
  const std::size_t gr = rejected.size();
  std::vector<std::size_t> wins_c(gc, 0), wins_r(gr, 0);
  for (std::size_t i = 0; i < gc; ++i)
    for (std::size_t j = 0; j < gr; ++j)
      if (chosen[i] > rejected[j]) {
        ++wins_c[i];
        ++wins_r[j];
      }
  IntergroupRewards out;
  out.chosen.reserve(gc);
  out.rejected.reserve(gr);
  double total = 0.0;
  for (std::size_t w : wins_c) {
    out.chosen.push_back(static_cast<double>(w) / static_cast<double>(gr));
    total += static_cast<double>(w);
  }
  for (std::size_t w : wins_r) out.rejected.push_back(static_cast<double>(w) / static_cast<double>(gc));
  out.estimate = total / (static_cast<double>(gc) * static_cast<double>(gr));
  return out;
}

inline double group_mean(const ScoreGroup& g) {
  double sum = 0.0;
  for (double s : g) sum += s;
  return sum / static_cast<double>(g.size());
}

/// Element ceil(G/2) (1-based) of the ascending sort: the lower middle
/// element for even G, not the midpoint average.
inline double group_median(const ScoreGroup& g) {
  std::vector<double> sorted(g.begin(), g.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[(sorted.size() + 1) / 2 - 1];
}

/// Two-sided t interval for the group mean using the unbiased variance.
inline ConfidenceInterval confidence_interval(const ScoreGroup& g, double alpha) {
  if (g.size() < 2) throw std::invalid_argument("confidence interval needs at least two scores");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
  const double n = static_cast<double>(g.size());
  const double mu = group_mean(g);
  double ss = 0.0;
  for (double s : g) ss += (s - mu) * (s - mu);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double half = stats::student_t_quantile(1.0 - alpha / 2.0, n - 1.0) * sd / std::sqrt(n);
  return {mu - half, mu + half};
}

/// Binary rewards against a summary threshold of the opposite group:
/// chosen rollouts earn +1 when strictly above theta_r + delta, rejected
/// rollouts earn +1 when strictly below theta_c - delta, -1 otherwise.
/// Uses config.margin_delta as delta.
inline IntergroupRewards rule_based_rewards(const ScoreGroup& chosen, const ScoreGroup& rejected,
                                            const RewardConfig& config) {
  config.validate();
  double theta_c = 0.0;
  double theta_r = 0.0;
  switch (config.variant) {
    case RewardVariant::Mean:
      theta_c = group_mean(chosen);
      theta_r = group_mean(rejected);
      break;
    case RewardVariant::Median:
      theta_c = group_median(chosen);
      theta_r = group_median(rejected);
      break;
    case RewardVariant::Interval:
      if (chosen.size() < 2 || rejected.size() < 2)
        throw UndefinedRewardError("Interval variant needs at least two parsable scores per side");
      theta_c = confidence_interval(chosen, config.ci_alpha).lower;
      theta_r = confidence_interval(rejected, config.ci_alpha).upper;
      break;
    default:
      throw std::invalid_argument("rule_based_rewards called with a non rule-based variant");
  }
  const double delta = config.margin_delta;
  IntergroupRewards out;
  std::size_t positives = 0;
  for (double s : chosen) {
    const bool win = s > theta_r + delta;
    positives += win;
    out.chosen.push_back(win ? 1.0 : -1.0);
  }
  for (double s : rejected) {
    const bool win = s < theta_c - delta;
    positives += win;
    out.rejected.push_back(win ? 1.0 : -1.0);
  }
  out.estimate = static_cast<double>(positives) / static_cast<double>(chosen.size() + rejected.size());
  return out;
}

/// Dispatches to the configured variant.
inline IntergroupRewards intergroup_rewards(const ScoreGroup& chosen, const ScoreGroup& rejected,
                                            const RewardConfig& config) {
  switch (config.variant) {
    case RewardVariant::Preference: return preference_rewards(chosen, rejected, config.temperature);
    case RewardVariant::AUC: return auc_rewards(chosen, rejected);
    default: return rule_based_rewards(chosen, rejected, config);
  }
}

/// Margin for rule-based rewards: strength - 2 (clamped at 0) when adaptive
/// margins are on and a strength annotation exists, else the fixed margin.
inline double adaptive_margin(std::optional<int> strength, const RewardConfig& config) {
  if (config.adaptive_margin && strength) return std::max(static_cast<double>(*strength) - 2.0, 0.0);
  return config.margin_delta;
}

inline double format_reward(const RolloutOutcome& o, const RewardConfig& config) {
  return o.format_ok ? 0.0 : config.format_penalty;
}

/// Lowest intergroup reward the variant can emit; assigned to rollouts
/// without a parsable score.
inline double floor_reward(RewardVariant v) noexcept { return is_rule_based(v) ? -1.0 : 0.0; }

/// Intergroup plus format reward for every rollout of a pair.
///
/// Rollouts with absent scores are left out of the groups (and therefore of
/// the thresholds and opponent statistics) and receive floor_reward().
/// Throws UndefinedRewardError when a side has no parsable score.
inline IntergroupRewards total_rewards(std::span<const RolloutOutcome> outcomes_c,
                                       std::span<const RolloutOutcome> outcomes_r, const RewardConfig& config,
                                       std::optional<int> strength) {
  config.validate();
  auto parsable = [](std::span<const RolloutOutcome> outs, const char* side) {
    std::vector<double> scores;
    for (const auto& o : outs) {
      if (!o.valid()) throw std::invalid_argument("rollout marked format_ok without a score");
      if (o.score) scores.push_back(*o.score);
    }
    if (scores.empty()) throw UndefinedRewardError(std::string("no parsable score on the ") + side + " side");
    return ScoreGroup(std::move(scores));
  };
  const ScoreGroup chosen = parsable(outcomes_c, "chosen");
  const ScoreGroup rejected = parsable(outcomes_r, "rejected");

  RewardConfig effective = config;
  effective.margin_delta = adaptive_margin(strength, config);
  const IntergroupRewards inter = intergroup_rewards(chosen, rejected, effective);

  const double floor = floor_reward(config.variant);
  auto assemble = [&](std::span<const RolloutOutcome> outs, const std::vector<double>& parsed) {
    std::vector<double> totals;
    totals.reserve(outs.size());
    std::size_t next = 0;
    for (const auto& o : outs) {
      const double base = o.score ? parsed[next++] : floor;
      totals.push_back(base + format_reward(o, config));
    }
    return totals;
  };
  return {assemble(outcomes_c, inter.chosen), assemble(outcomes_r, inter.rejected), inter.estimate};
}

}  // namespace irpm
