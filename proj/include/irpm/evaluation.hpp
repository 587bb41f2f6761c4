#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "irpm/policy.hpp"
#include "irpm/preference_data.hpp"
#include "irpm/reward_engine.hpp"
#include "irpm/rng.hpp"

namespace irpm {

/// Anything that can be asked for one (possibly stochastic) judgement.
template <typename S>
concept Scorer = requires(const S& s, const ResponseKey& key, Rng& rng) {
  { s.sample(key, rng) } -> std::same_as<RolloutOutcome>;
};

/// Samples the toy policy.
struct PolicyScorer {
  const ToyScorerPolicy* policy;
  RolloutOutcome sample(const ResponseKey& key, Rng& rng) const { return sample_rollout(*policy, key, rng).outcome; }
};

/// Deterministic: the policy's expected score.
struct ExpectedScoreScorer {
  const ToyScorerPolicy* policy;
  RolloutOutcome sample(const ResponseKey& key, Rng&) const { return {expected_score(*policy, key), true}; }
};

/// Returns the hidden ground-truth utility.
struct UtilityScorer {
  const UtilityTable* utility;
  RolloutOutcome sample(const ResponseKey& key, Rng&) const {
    auto it = utility->find(key);
    if (it == utility->end()) throw std::out_of_range("no utility for response '" + key.response + "'");
    return {it->second, true};
  }
};

struct ConstantScorer {
  double value = 5.0;
  RolloutOutcome sample(const ResponseKey&, Rng&) const { return {value, true}; }
};

inline constexpr std::size_t kVoteRetryBudget = 3;

struct VoteResult {
  double score = 0.0;
  std::size_t retries = 0;   // extra samples drawn after unparsable outputs
  std::size_t failures = 0;  // votes that exhausted the retry budget (scored 0)
};

/// voting@n: mean of n sampled scores. An unparsable sample is redrawn up to
/// kVoteRetryBudget times, after which that vote counts as 0.
template <Scorer S>
VoteResult vote_score(const S& scorer, const ResponseKey& key, std::size_t n_votes, Rng& rng) {
  if (n_votes < 1) throw std::invalid_argument("n_votes must be at least 1");
  VoteResult out;
  double sum = 0.0;
  for (std::size_t v = 0; v < n_votes; ++v) {
    RolloutOutcome o = scorer.sample(key, rng);
    for (std::size_t attempt = 0; !o.score && attempt < kVoteRetryBudget; ++attempt) {
      ++out.retries;
      o = scorer.sample(key, rng);
    }
    if (o.score) {
      sum += *o.score;
    } else {
      ++out.failures;
    }
  }
  out.score = sum / static_cast<double>(n_votes);
  return out;
}

struct EvalProtocol {
  std::size_t n_votes = 1;
  double tie_credit = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_votes < 1) throw std::invalid_argument("n_votes must be at least 1");
  }
};

enum class Verdict { Win, Tie, Loss };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Win: return "win";
    case Verdict::Tie: return "tie";
    case Verdict::Loss: return "loss";
  }
  return "?";
}

struct PairVerdict {
  std::string pair_id;
  double chosen_score = 0.0;
  double rejected_score = 0.0;
  Verdict verdict = Verdict::Tie;
};

struct EvalReport {
  std::size_t n_votes = 1;
  std::size_t n_pairs = 0;
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  double accuracy = 0.0;
  double tie_rate = 0.0;
  std::size_t scorer_calls = 0;  // 2 * n_votes * n_pairs; retries reported separately
  std::size_t retry_calls = 0;
  std::size_t vote_failures = 0;
  std::vector<PairVerdict> records;
};

/// Pairwise accuracy of a pointwise scorer. Exact score equality is a tie
/// and earns tie_credit. Each pair samples from a stream keyed by
/// (seed, pair_id), so the result does not depend on evaluation order.
template <Scorer S>
EvalReport evaluate_pairs(const S& scorer, std::span<const PreferencePair> pairs, const EvalProtocol& protocol) {
  protocol.validate();
  if (pairs.empty()) throw std::invalid_argument("no pairs to evaluate");
  EvalReport rep;
  rep.n_votes = protocol.n_votes;
  rep.n_pairs = pairs.size();
  rep.records.reserve(pairs.size());
  for (const auto& p : pairs) {
    Rng rng = Rng::stream(protocol.seed, {fnv1a(p.pair_id), 0x6576616cULL});
    const VoteResult c = vote_score(scorer, p.chosen_key(), protocol.n_votes, rng);
    const VoteResult r = vote_score(scorer, p.rejected_key(), protocol.n_votes, rng);
    rep.retry_calls += c.retries + r.retries;
    rep.vote_failures += c.failures + r.failures;
    PairVerdict v{p.pair_id, c.score, r.score, Verdict::Tie};
    if (c.score > r.score) {
      v.verdict = Verdict::Win;
      ++rep.wins;
    } else if (c.score < r.score) {
      v.verdict = Verdict::Loss;
      ++rep.losses;
    } else {
      ++rep.ties;
    }
    rep.records.push_back(std::move(v));
  }
  const double n = static_cast<double>(rep.n_pairs);
  rep.accuracy = (static_cast<double>(rep.wins) + protocol.tie_credit * static_cast<double>(rep.ties)) / n;
  rep.tie_rate = static_cast<double>(rep.ties) / n;
  rep.scorer_calls = 2 * protocol.n_votes * rep.n_pairs;
  return rep;
}

struct CallBudgets {
  std::size_t pointwise = 0;
  std::size_t round_robin = 0;
  std::size_t rrm_style = 0;
};

/// Reward-model invocations needed to score n candidates for one prompt:
/// one call each for a pointwise scorer, all unordered pairs for a
/// round-robin pairwise judge, and four sampled opponents per candidate for
/// an RRM-style judge.
inline CallBudgets compare_call_budgets(std::size_t n_candidates, std::size_t group_size) {
  if (n_candidates < 2) throw std::invalid_argument("need at least two candidates");
  if (group_size < 1) throw std::invalid_argument("group size must be positive");
  return {n_candidates, n_candidates * (n_candidates - 1) / 2, 4 * n_candidates};
}

inline nlohmann::ordered_json summary_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["n_votes"] = rep.n_votes;
  j["n_pairs"] = rep.n_pairs;
  j["accuracy"] = rep.accuracy;
  j["tie_rate"] = rep.tie_rate;
  j["wins"] = rep.wins;
  j["ties"] = rep.ties;
  j["losses"] = rep.losses;
  j["scorer_calls"] = rep.scorer_calls;
  j["retry_calls"] = rep.retry_calls;
  j["vote_failures"] = rep.vote_failures;
  return j;
}

inline void write_eval_detail(std::ostream& out, const EvalReport& rep) {
  for (const auto& r : rep.records) {
    nlohmann::ordered_json j;
    j["pair_id"] = r.pair_id;
    j["chosen_score"] = r.chosen_score;
    j["rejected_score"] = r.rejected_score;
    j["verdict"] = to_string(r.verdict);
    out << j.dump() << '\n';
  }
}

}  // namespace irpm
