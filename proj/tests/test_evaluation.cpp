#include <gtest/gtest.h>

#include <sstream>

#include "irpm/evaluation.hpp"

using namespace irpm;

namespace {

/// Replays a fixed list of outcomes, cycling.
struct ScriptedScorer {
  std::vector<RolloutOutcome> script;
  mutable std::size_t next = 0;
  mutable std::size_t calls = 0;
  RolloutOutcome sample(const ResponseKey&, Rng&) const {
    ++calls;
    return script[next++ % script.size()];
  }
};

const ResponseKey kKey{"p", "r"};

}  // namespace

TEST(VoteScore, Examples) {
  Rng rng(0);
  EXPECT_EQ(vote_score(ScriptedScorer{{{4.5, true}}}, kKey, 1, rng).score, 4.5);
  for (std::size_t n : {1u, 3u, 8u}) EXPECT_EQ(vote_score(ConstantScorer{7.0}, kKey, n, rng).score, 7.0);
  EXPECT_EQ(vote_score(ScriptedScorer{{{6.0, true}, {8.0, true}}}, kKey, 2, rng).score, 7.0);
  EXPECT_THROW(vote_score(ConstantScorer{}, kKey, 0, rng), std::invalid_argument);
}

TEST(VoteScore, AbsentScoresAreRetriedThenCountAsZero) {
  Rng rng(0);
  const RolloutOutcome none{std::nullopt, false};
  ScriptedScorer once{{none, {8.0, true}}};
  const auto a = vote_score(once, kKey, 1, rng);
  EXPECT_EQ(a.score, 8.0);
  EXPECT_EQ(a.retries, 1u);
  EXPECT_EQ(a.failures, 0u);

  ScriptedScorer never{{none}};
  const auto b = vote_score(never, kKey, 2, rng);
  EXPECT_EQ(b.score, 0.0);
  EXPECT_EQ(b.failures, 2u);
  EXPECT_EQ(b.retries, 2 * kVoteRetryBudget);
  EXPECT_EQ(never.calls, 2 * (kVoteRetryBudget + 1));
}

TEST(EvaluatePairs, OracleAndConstantScorers) {
  const auto task = make_synthetic_dataset(50, 3, 0.5);
  const auto oracle = evaluate_pairs(UtilityScorer{&task.utility}, task.pairs, EvalProtocol{});
  EXPECT_EQ(oracle.accuracy, 1.0);
  EXPECT_EQ(oracle.tie_rate, 0.0);

  for (std::size_t n : {1u, 8u}) {
    const auto flat = evaluate_pairs(ConstantScorer{3.5}, task.pairs, EvalProtocol{n, 0.5, 0});
    EXPECT_EQ(flat.accuracy, 0.5);
    EXPECT_EQ(flat.tie_rate, 1.0);
    EXPECT_EQ(flat.scorer_calls, 2 * n * task.pairs.size());
  }
}

TEST(EvaluatePairs, AccuracyMatchesRecountFromRecords) {
  const auto task = make_synthetic_dataset(120, 5, 1.0);
  Rng rng(5);
  auto policy = ToyScorerPolicy::uniform(ScoreBinGrid(), 0.7);
  for (const auto& p : task.pairs)
    for (const auto& key : {p.chosen_key(), p.rejected_key()}) {
      PolicyRow row = policy.default_row();
      for (double& z : row.logits) z = 2.0 * rng.normal();
      policy.set_row(key, row);
    }
  for (std::size_t n : {1u, 2u, 8u}) {
    const auto rep = evaluate_pairs(PolicyScorer{&policy}, task.pairs, EvalProtocol{n, 0.5, 1});
    double credit = 0.0;
    std::size_t ties = 0;
    ASSERT_EQ(rep.records.size(), task.pairs.size());
    for (const auto& r : rep.records) {
      const double c = r.chosen_score > r.rejected_score ? 1.0 : r.chosen_score == r.rejected_score ? 0.5 : 0.0;
      credit += c;
      ties += c == 0.5;
      EXPECT_EQ(r.verdict == Verdict::Tie, c == 0.5);
    }
    EXPECT_DOUBLE_EQ(rep.accuracy, credit / static_cast<double>(task.pairs.size()));
    EXPECT_EQ(rep.ties, ties);
    EXPECT_EQ(rep.wins + rep.ties + rep.losses, rep.n_pairs);
    EXPECT_GT(rep.retry_calls, 0u);  // 30% format violations drop scores

    const auto again = evaluate_pairs(PolicyScorer{&policy}, task.pairs, EvalProtocol{n, 0.5, 1});
    std::ostringstream a, b;
    write_eval_detail(a, rep);
    write_eval_detail(b, again);
    EXPECT_EQ(a.str(), b.str());
  }
}

TEST(EvaluatePairs, ResultDoesNotDependOnPairOrder) {
  const auto task = make_synthetic_dataset(30, 2, 0.5);
  const auto policy = ToyScorerPolicy::uniform(ScoreBinGrid(), 0.9);
  auto reversed = task.pairs;
  std::reverse(reversed.begin(), reversed.end());
  const auto a = evaluate_pairs(PolicyScorer{&policy}, task.pairs, EvalProtocol{4, 0.5, 9});
  const auto b = evaluate_pairs(PolicyScorer{&policy}, reversed, EvalProtocol{4, 0.5, 9});
  EXPECT_EQ(a.wins, b.wins);
  EXPECT_EQ(a.ties, b.ties);
  EXPECT_EQ(a.records.front().chosen_score, b.records.back().chosen_score);
}

TEST(EvaluatePairs, Errors) {
  EXPECT_THROW(evaluate_pairs(ConstantScorer{}, std::span<const PreferencePair>{}, EvalProtocol{}),
               std::invalid_argument);
  const auto task = make_synthetic_dataset(2, 0, 0.5);
  EXPECT_THROW(evaluate_pairs(ConstantScorer{}, task.pairs, EvalProtocol{0, 0.5, 0}), std::invalid_argument);
}

TEST(CallBudgets, Examples) {
  const auto b = compare_call_budgets(8, 8);
  EXPECT_EQ(b.rrm_style, 32u);
  EXPECT_EQ(b.pointwise, 8u);
  EXPECT_EQ(b.round_robin, 28u);
  EXPECT_EQ(compare_call_budgets(2, 4).round_robin, 1u);
  EXPECT_THROW(compare_call_budgets(1, 4), std::invalid_argument);
}

TEST(SummaryJson, CarriesCounts) {
  const auto task = make_synthetic_dataset(10, 0, 0.5);
  const auto rep = evaluate_pairs(ConstantScorer{}, task.pairs, EvalProtocol{2, 0.5, 0});
  const auto j = summary_json(rep);
  EXPECT_EQ(j.at("scorer_calls").get<std::size_t>(), 40u);
  EXPECT_EQ(j.at("ties").get<std::size_t>(), 10u);
  EXPECT_EQ(j.at("n_votes").get<std::size_t>(), 2u);
}
