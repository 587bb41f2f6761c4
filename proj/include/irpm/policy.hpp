#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "irpm/preference_data.hpp"
#include "irpm/reward_engine.hpp"
#include "irpm/rng.hpp"

namespace irpm {

/// Evenly spaced score bins covering [0, 10].
class ScoreBinGrid {
 public:
  explicit ScoreBinGrid(double step = 0.5) : step_(step) {
    if (!(step > 0.0 && step <= 10.0)) throw std::invalid_argument("bin step must lie in (0, 10]");
    const double intervals = (kScoreMax - kScoreMin) / step;
    const double rounded = std::round(intervals);
    if (std::abs(intervals - rounded) > 1e-9) throw std::invalid_argument("bin step must divide 10 evenly");
    const auto n = static_cast<std::size_t>(rounded) + 1;
    values_.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      values_[i] = kScoreMin + (kScoreMax - kScoreMin) * static_cast<double>(i) / static_cast<double>(n - 1);
  }

  double step() const noexcept { return step_; }
  std::size_t size() const noexcept { return values_.size(); }
  double value(std::size_t i) const { return values_.at(i); }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Bin holding `score`, or nullopt when the score is off-grid.
  std::optional<std::size_t> index_of(double score) const {
    if (!(score >= kScoreMin - 1e-9 && score <= kScoreMax + 1e-9)) return std::nullopt;
    const double pos = (score - kScoreMin) / step_;
    const double idx = std::round(pos);
    if (std::abs(pos - idx) > 1e-9) return std::nullopt;
    return static_cast<std::size_t>(idx);
  }

  bool operator==(const ScoreBinGrid& o) const { return step_ == o.step_; }

 private:
  double step_;
  std::vector<double> values_;
};

/// Logits for one key: one per score bin plus the format-validity logit.
struct PolicyRow {
  std::vector<double> logits;
  double format_logit = 0.0;

  bool operator==(const PolicyRow&) const = default;
};

inline double log_sigmoid(double x) noexcept { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

inline double log_sum_exp(const std::vector<double>& v, double scale) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x * scale);
  double s = 0.0;
  for (double x : v) s += std::exp(x * scale - m);
  return m + std::log(s);
}

/// Tabular stand-in for a generative reward model.
///
/// Each (prompt, response) key owns a categorical distribution over score
/// bins and a Bernoulli format-validity flag, both parameterised by logits
/// divided by the sampling temperature. Keys without a row fall back to a
/// shared default row.
class ToyScorerPolicy {
 public:
  ToyScorerPolicy(ScoreBinGrid grid, PolicyRow default_row, double temperature = 1.0)
      : grid_(std::move(grid)), default_row_(std::move(default_row)), temperature_(temperature) {
    if (!(temperature_ > 0.0)) throw std::invalid_argument("temperature must be positive");
    check_row(default_row_);
  }

  /// Uniform bins and the given probability of a format-valid output.
  static ToyScorerPolicy uniform(ScoreBinGrid grid, double format_ok_prob, double temperature = 1.0) {
    if (!(format_ok_prob > 0.0 && format_ok_prob < 1.0))
      throw std::invalid_argument("format_ok_prob must lie in (0,1)");
    PolicyRow row{std::vector<double>(grid.size(), 0.0), std::log(format_ok_prob / (1.0 - format_ok_prob)) * temperature};
    return ToyScorerPolicy(std::move(grid), std::move(row), temperature);
  }

  const ScoreBinGrid& grid() const noexcept { return grid_; }
  double temperature() const noexcept { return temperature_; }
  const PolicyRow& default_row() const noexcept { return default_row_; }
  const std::map<ResponseKey, PolicyRow>& rows() const noexcept { return rows_; }

  bool contains(const ResponseKey& key) const { return rows_.count(key) != 0; }

  const PolicyRow& row(const ResponseKey& key) const {
    auto it = rows_.find(key);
    return it == rows_.end() ? default_row_ : it->second;
  }

  /// Row for `key`, created from the default row on first access.
  PolicyRow& mutable_row(const ResponseKey& key) { return rows_.try_emplace(key, default_row_).first->second; }

  void set_row(const ResponseKey& key, PolicyRow row) {
    check_row(row);
    rows_[key] = std::move(row);
  }

  std::vector<double> bin_probs(const ResponseKey& key) const {
    const PolicyRow& r = row(key);
    const double inv_t = 1.0 / temperature_;
    const double lse = log_sum_exp(r.logits, inv_t);
    std::vector<double> p(r.logits.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(r.logits[i] * inv_t - lse);
    return p;
  }

  double bin_log_prob(const ResponseKey& key, std::size_t bin) const {
    const PolicyRow& r = row(key);
    const double inv_t = 1.0 / temperature_;
    return r.logits.at(bin) * inv_t - log_sum_exp(r.logits, inv_t);
  }

  double format_ok_prob(const ResponseKey& key) const { return logistic(row(key).format_logit / temperature_); }

  double format_log_prob(const ResponseKey& key, bool ok) const {
    const double x = row(key).format_logit / temperature_;
    return ok ? log_sigmoid(x) : log_sigmoid(-x);
  }

  bool operator==(const ToyScorerPolicy&) const = default;

 private:
  void check_row(const PolicyRow& r) const {
    if (r.logits.size() != grid_.size()) throw std::invalid_argument("logit row does not match the bin grid");
    for (double z : r.logits)
      if (!std::isfinite(z)) throw std::invalid_argument("non-finite logit");
    if (!std::isfinite(r.format_logit)) throw std::invalid_argument("non-finite format logit");
  }

  ScoreBinGrid grid_;
  PolicyRow default_row_;
  double temperature_;
  std::map<ResponseKey, PolicyRow> rows_;
};

/// Per-token log-probabilities of a rollout. The format token is always
/// emitted; the score token only when the score was parsable.
struct TokenLogProbs {
  double format = 0.0;
  std::optional<double> score;

  double total() const noexcept { return format + score.value_or(0.0); }
  std::size_t length() const noexcept { return score ? 2 : 1; }
};

inline TokenLogProbs token_log_probs(const ToyScorerPolicy& policy, const ResponseKey& key, const RolloutOutcome& o) {
  if (!o.valid()) throw std::invalid_argument("rollout marked format_ok without a score");
  TokenLogProbs lp;
  lp.format = policy.format_log_prob(key, o.format_ok);
  if (o.score) {
    const auto bin = policy.grid().index_of(*o.score);
    if (!bin) throw std::invalid_argument("score " + std::to_string(*o.score) + " is not on the bin grid");
    lp.score = policy.bin_log_prob(key, *bin);
  }
  return lp;
}

/// Exact log-probability of an outcome under the current parameters.
inline double log_prob(const ToyScorerPolicy& policy, const ResponseKey& key, const RolloutOutcome& o) {
  return token_log_probs(policy, key, o).total();
}

struct SampledRollout {
  RolloutOutcome outcome;
  double logp = 0.0;
};

/// Draws the format flag, then a score bin. A format-violating rollout
/// loses its score with probability 0.5 (the drop itself is parameter-free
/// and does not enter logp).
inline SampledRollout sample_rollout(const ToyScorerPolicy& policy, const ResponseKey& key, Rng& rng) {
  const bool ok = rng.bernoulli(policy.format_ok_prob(key));
  const std::vector<double> probs = policy.bin_probs(key);
  const std::size_t bin = rng.categorical(probs);
  const bool dropped = !ok && rng.bernoulli(0.5);
  SampledRollout out;
  out.outcome.format_ok = ok;
  if (!dropped) out.outcome.score = policy.grid().value(bin);
  out.logp = log_prob(policy, key, out.outcome);
  return out;
}

/// Shannon entropy (nats) of the joint (format, bin) distribution.
inline double entropy(const ToyScorerPolicy& policy, const ResponseKey& key) {
  auto h = [](double p) { return p > 0.0 ? -p * std::log(p) : 0.0; };
  const double q = policy.format_ok_prob(key);
  double total = h(q) + h(1.0 - q);
  for (double p : policy.bin_probs(key)) total += h(p);
  return total;
}

inline double expected_score(const ToyScorerPolicy& policy, const ResponseKey& key) {
  const auto probs = policy.bin_probs(key);
  double e = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) e += probs[i] * policy.grid().value(i);
  return std::clamp(e, kScoreMin, kScoreMax);
}

/// Sparse gradient over policy rows; only touched keys are present.
struct PolicyGradient {
  std::map<ResponseKey, PolicyRow> rows;

  PolicyRow& touch(const ResponseKey& key, std::size_t n_bins) {
    auto [it, inserted] = rows.try_emplace(key);
    if (inserted) it->second.logits.assign(n_bins, 0.0);
    return it->second;
  }

  double norm() const {
    double ss = 0.0;
    for (const auto& [key, r] : rows) {
      for (double g : r.logits) ss += g * g;
      ss += r.format_logit * r.format_logit;
    }
    return std::sqrt(ss);
  }

  void scale(double factor) {
    for (auto& [key, r] : rows) {
      for (double& g : r.logits) g *= factor;
      r.format_logit *= factor;
    }
  }
};

/// theta += step * gradient.
inline void apply_gradient(ToyScorerPolicy& policy, const PolicyGradient& grad, double step) {
  for (const auto& [key, g] : grad.rows) {
    PolicyRow& r = policy.mutable_row(key);
    for (std::size_t i = 0; i < r.logits.size(); ++i) r.logits[i] += step * g.logits[i];
    r.format_logit += step * g.format_logit;
  }
}

// -- checkpoints ------------------------------------------------------------

inline void write_checkpoint(std::ostream& out, const ToyScorerPolicy& policy) {
  nlohmann::ordered_json meta;
  meta["format"] = "irpm-policy";
  meta["bin_step"] = policy.grid().step();
  meta["temperature"] = policy.temperature();
  out << meta.dump() << '\n';
  auto emit = [&](const PolicyRow& r, const ResponseKey* key) {
    nlohmann::ordered_json rec;
    if (key) {
      rec["prompt"] = key->prompt;
      rec["response"] = key->response;
    } else {
      rec["default"] = true;
    }
    rec["logits"] = r.logits;
    rec["format_logit"] = r.format_logit;
    out << rec.dump() << '\n';
  };
  emit(policy.default_row(), nullptr);
  for (const auto& [key, r] : policy.rows()) emit(r, &key);
}

inline ToyScorerPolicy read_checkpoint(std::istream& in) {
  if (!in) throw std::runtime_error("checkpoint stream is not readable");
  std::string line;
  std::size_t line_no = 0;
  auto next_record = [&]() -> std::optional<nlohmann::json> {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        return nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    return std::nullopt;
  };
  auto row_of = [&](const nlohmann::json& rec) {
    try {
      return PolicyRow{rec.at("logits").get<std::vector<double>>(), rec.at("format_logit").get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("checkpoint line " + std::to_string(line_no) + ": " + e.what());
    }
  };
  const auto meta = next_record();
  if (!meta || meta->value("format", "") != "irpm-policy") throw std::runtime_error("not an irpm policy checkpoint");
  const auto def = next_record();
  if (!def || !def->value("default", false)) throw std::runtime_error("checkpoint lacks the default row");
  ToyScorerPolicy policy(ScoreBinGrid(meta->at("bin_step").get<double>()), row_of(*def),
                         meta->at("temperature").get<double>());
  while (auto rec = next_record()) {
    try {
      policy.set_row({rec->at("prompt").get<std::string>(), rec->at("response").get<std::string>()}, row_of(*rec));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("checkpoint line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return policy;
}

}  // namespace irpm
