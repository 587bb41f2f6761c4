#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "irpm/config.hpp"
#include "irpm/evaluation.hpp"
#include "irpm/policy.hpp"
#include "irpm/preference_data.hpp"
#include "irpm/reward_engine.hpp"
#include "irpm/training.hpp"

namespace irpm::cli {

namespace fs = std::filesystem;

namespace detail {

inline std::ifstream open_in(const fs::path& p, const char* what) {
  if (p.empty()) throw std::runtime_error(std::string("no ") + what + " path configured");
  std::ifstream in(p);
  if (!in) throw std::runtime_error(std::string("cannot read ") + what + " '" + p.string() + "'");
  return in;
}

inline std::ofstream open_out(const fs::path& p) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  return out;
}

inline std::vector<PreferencePair> read_pairs(const std::string& path) {
  auto in = open_in(path, "dataset");
  return load_dataset(in);
}

/// Shortest text that parses back to exactly `x`.
inline std::string fmt(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Policy before training: uniform bins (optionally jittered), format
/// violation probability init_format_violation, one row per dataset key.
inline ToyScorerPolicy initial_policy(const RunConfig& cfg, const std::vector<PreferencePair>& pairs) {
  ToyScorerPolicy policy =
      ToyScorerPolicy::uniform(ScoreBinGrid(cfg.bin_step), 1.0 - cfg.init_format_violation, cfg.policy_temperature);
  for (const auto& p : pairs) {
    for (const auto& key : {p.chosen_key(), p.rejected_key()}) {
      if (policy.contains(key)) continue;
      PolicyRow row = policy.default_row();
      if (cfg.init_logit_noise > 0.0) {
        Rng rng = Rng::stream(cfg.seed, {fnv1a(key.prompt), fnv1a(key.response), 0x696e6974ULL});
        for (double& z : row.logits) z += cfg.init_logit_noise * rng.normal();
      }
      policy.set_row(key, std::move(row));
    }
  }
  return policy;
}

inline nlohmann::ordered_json diagnostics_json(const StepDiagnostics& d) {
  nlohmann::ordered_json j;
  j["step"] = d.step;
  j["mean_reward"] = d.mean_reward;
  j["kl"] = d.kl;
  j["entropy"] = d.entropy;
  j["score_variance"] = d.score_variance;
  j["scorer_calls"] = d.scorer_calls;
  j["skipped_pairs"] = d.skipped_pairs;
  j["format_violation_rate"] = d.format_violation_rate;
  j["grad_norm"] = d.grad_norm;
  return j;
}

inline nlohmann::ordered_json step_log_json(const StepLog& log) {
  auto outcome = [](const RolloutRecord& r) {
    nlohmann::ordered_json j;
    j["score"] = r.outcome.score ? nlohmann::ordered_json(*r.outcome.score) : nlohmann::ordered_json(nullptr);
    j["format_ok"] = r.outcome.format_ok;
    j["reward"] = r.reward;
    j["advantage"] = r.advantage;
    return j;
  };
  auto pair_json = [&](const PairRollouts& p, const std::string* skip_reason) {
    nlohmann::ordered_json j;
    j["pair_id"] = p.pair_id;
    if (skip_reason) j["skipped"] = *skip_reason;
    j["chosen"] = nlohmann::ordered_json::array();
    j["rejected"] = nlohmann::ordered_json::array();
    for (const auto& r : p.chosen) j["chosen"].push_back(outcome(r));
    for (const auto& r : p.rejected) j["rejected"].push_back(outcome(r));
    return j;
  };
  nlohmann::ordered_json j;
  j["step"] = log.step;
  j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : log.batch.pairs) j["pairs"].push_back(pair_json(p, nullptr));
  for (const auto& s : log.skipped) j["pairs"].push_back(pair_json(s.rollouts, &s.reason));
  j["keys"] = nlohmann::ordered_json::array();
  for (const auto& k : log.keys) {
    nlohmann::ordered_json kj;
    kj["prompt"] = k.key.prompt;
    kj["response"] = k.key.response;
    kj["format_ok_prob"] = k.format_ok_prob;
    kj["bin_probs"] = k.bin_probs;
    j["keys"].push_back(std::move(kj));
  }
  return j;
}

/// gen-data: dataset.jsonl + utilities.jsonl.
inline int cmd_gen_data(const RunConfig& cfg, const fs::path& out_dir, std::ostream& msg) {
  const SyntheticTask task = make_synthetic_dataset(cfg.n_pairs, cfg.seed, cfg.utility_noise);
  auto ds = detail::open_out(out_dir / "dataset.jsonl");
  write_dataset(ds, task.pairs);
  auto ut = detail::open_out(out_dir / "utilities.jsonl");
  write_utilities(ut, task.utility);
  msg << "pairs: " << task.pairs.size() << '\n';
  return 0;
}

/// filter: filtered.jsonl + filter_stats.json.
inline int cmd_filter(const RunConfig& cfg, const fs::path& out_dir, std::ostream& msg) {
  const auto pairs = detail::read_pairs(cfg.dataset);
  const auto [kept, stats] = filter_dataset(pairs, cfg.filter);
  auto out = detail::open_out(out_dir / "filtered.jsonl");
  write_dataset(out, kept);
  nlohmann::ordered_json j;
  j["input"] = stats.input;
  j["kept"] = stats.kept;
  j["dropped_low_strength"] = stats.low_strength;
  j["dropped_over_length"] = stats.over_length;
  detail::open_out(out_dir / "filter_stats.json") << j.dump() << '\n';
  msg << "kept " << stats.kept << " of " << stats.input << " (low strength " << stats.low_strength
      << ", over length " << stats.over_length << ")\n";
  return 0;
}

/// train: initial_checkpoint.jsonl, checkpoint.jsonl, diagnostics.jsonl,
/// rollouts.jsonl (when log_rollouts) and cost.json.
inline int cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& msg) {
  const auto pairs = detail::read_pairs(cfg.dataset);
  if (pairs.empty()) throw std::runtime_error("dataset '" + cfg.dataset + "' has no pairs");
  TrainState state(initial_policy(cfg, pairs));
  {
    auto out = detail::open_out(out_dir / "initial_checkpoint.jsonl");
    write_checkpoint(out, state.policy());
  }
  auto diag = detail::open_out(out_dir / "diagnostics.jsonl");
  std::optional<std::ofstream> rollouts;
  if (cfg.log_rollouts) rollouts = detail::open_out(out_dir / "rollouts.jsonl");

  std::vector<PreferencePair> batch;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    batch.clear();
    for (std::size_t i : select_batch(pairs.size(), cfg.batch_size, s, cfg.seed)) batch.push_back(pairs[i]);
    const StepLog log = irpm_train_step(state, batch, cfg.reward, cfg.grpo, cfg.seed);
    diag << diagnostics_json(log.diagnostics).dump() << '\n';
    if (rollouts) *rollouts << step_log_json(log).dump() << '\n';
  }
  {
    auto out = detail::open_out(out_dir / "checkpoint.jsonl");
    write_checkpoint(out, state.policy());
  }
  const std::size_t per_step = 2 * cfg.grpo.group_size * std::min(cfg.batch_size, pairs.size());
  nlohmann::ordered_json cost;
  cost["steps"] = state.step();
  cost["group_size"] = cfg.grpo.group_size;
  cost["pairs_per_step"] = std::min(cfg.batch_size, pairs.size());
  cost["scorer_calls_per_step"] = per_step;
  cost["scorer_calls"] = state.scorer_calls();
  detail::open_out(out_dir / "cost.json") << cost.dump() << '\n';
  msg << "steps: " << state.step() << ", scorer calls: " << state.scorer_calls() << '\n';
  return 0;
}

/// eval: eval_summary.jsonl (one record per vote count) and
/// eval_detail_n<votes>.jsonl.
inline int cmd_eval(const RunConfig& cfg, const fs::path& out_dir, std::ostream& msg) {
  const auto pairs = detail::read_pairs(cfg.dataset);
  std::optional<ToyScorerPolicy> policy;
  UtilityTable utility;
  if (cfg.scorer == "policy" || cfg.scorer == "expected") {
    auto in = detail::open_in(cfg.checkpoint, "checkpoint");
    policy = read_checkpoint(in);
  } else if (cfg.scorer == "oracle") {
    auto in = detail::open_in(cfg.utilities, "utilities");
    utility = load_utilities(in);
  }
  auto summary = detail::open_out(out_dir / "eval_summary.jsonl");
  for (std::size_t n : cfg.n_votes) {
    const EvalProtocol protocol{n, 0.5, cfg.seed};
    EvalReport rep;
    if (cfg.scorer == "policy") rep = evaluate_pairs(PolicyScorer{&*policy}, pairs, protocol);
    else if (cfg.scorer == "expected") rep = evaluate_pairs(ExpectedScoreScorer{&*policy}, pairs, protocol);
    else if (cfg.scorer == "oracle") rep = evaluate_pairs(UtilityScorer{&utility}, pairs, protocol);
    else rep = evaluate_pairs(ConstantScorer{cfg.constant_score}, pairs, protocol);
    auto j = summary_json(rep);
    j["scorer"] = cfg.scorer;
    summary << j.dump() << '\n';
    auto detail_out = detail::open_out(out_dir / ("eval_detail_n" + std::to_string(n) + ".jsonl"));
    write_eval_detail(detail_out, rep);
    msg << "voting@" << n << ": accuracy " << rep.accuracy << ", tie rate " << rep.tie_rate << ", pairs "
        << rep.n_pairs << '\n';
  }
  return 0;
}

// -- reward stream ------------------------------------------------------------

namespace detail {

inline std::vector<RolloutOutcome> parse_outcomes(const nlohmann::json& arr, const char* name) {
  if (!arr.is_array()) throw std::invalid_argument(std::string(name) + " must be an array");
  std::vector<RolloutOutcome> out;
  for (const auto& item : arr) {
    RolloutOutcome o;
    if (item.is_null()) {
      o.format_ok = false;
    } else if (item.is_number()) {
      o.score = item.get<double>();
      o.format_ok = true;
    } else if (item.is_object()) {
      if (auto it = item.find("score"); it != item.end() && !it->is_null()) o.score = it->get<double>();
      o.format_ok = item.value("format_ok", o.score.has_value());
      if (!o.valid()) throw std::invalid_argument("outcome has format_ok but no score");
    } else {
      throw std::invalid_argument(std::string("bad entry in ") + name);
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace detail

/// Evaluates one batch-interface record against the defaults in `base`.
inline nlohmann::ordered_json reward_record(const nlohmann::json& rec, const RewardConfig& base) {
  if (!rec.is_object()) throw std::invalid_argument("record is not an object");
  RewardConfig cfg = base;
  if (auto it = rec.find("variant"); it != rec.end()) cfg.variant = parse_variant(it->get<std::string>());
  if (auto it = rec.find("delta"); it != rec.end()) cfg.margin_delta = it->get<double>();
  if (auto it = rec.find("adaptive_margin"); it != rec.end()) cfg.adaptive_margin = it->get<bool>();
  if (auto it = rec.find("ci_alpha"); it != rec.end()) cfg.ci_alpha = it->get<double>();
  if (auto it = rec.find("format_penalty"); it != rec.end()) cfg.format_penalty = it->get<double>();
  if (auto it = rec.find("temperature"); it != rec.end()) cfg.temperature = it->get<double>();
  std::optional<int> strength;
  if (auto it = rec.find("strength"); it != rec.end() && !it->is_null()) {
    const int s = it->get<int>();
    if (s < 0 || s > 3) throw std::invalid_argument("strength outside {0,1,2,3}");
    strength = s;
  }
  if (!rec.contains("chosen_outcomes") || !rec.contains("rejected_outcomes"))
    throw std::invalid_argument("record needs chosen_outcomes and rejected_outcomes");
  const auto oc = detail::parse_outcomes(rec.at("chosen_outcomes"), "chosen_outcomes");
  const auto orj = detail::parse_outcomes(rec.at("rejected_outcomes"), "rejected_outcomes");
  const IntergroupRewards r = total_rewards(oc, orj, cfg, strength);
  nlohmann::ordered_json out;
  out["chosen_rewards"] = r.chosen;
  out["rejected_rewards"] = r.rejected;
  out["estimate"] = r.estimate;
  return out;
}

struct StreamCounts {
  std::size_t ok = 0;
  std::size_t failed = 0;
};

/// reward: one output line per non-blank input line; failures become
/// {"line": n, "error": ...} records.
inline StreamCounts cmd_reward(const RunConfig& cfg, std::istream& in, std::ostream& out) {
  StreamCounts counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out << reward_record(nlohmann::json::parse(line), cfg.reward).dump() << '\n';
      ++counts.ok;
    } catch (const std::exception& e) {
      nlohmann::ordered_json err;
      err["line"] = line_no;
      err["error"] = e.what();
      out << err.dump() << '\n';
      ++counts.failed;
    }
    out.flush();
  }
  return counts;
}

// -- report ---------------------------------------------------------------------

namespace detail {

inline std::vector<nlohmann::json> read_records(const fs::path& p) {
  auto in = open_in(p, "report input");
  std::vector<nlohmann::json> recs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      recs.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(p.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (recs.empty()) throw std::runtime_error(p.string() + ": no records");
  return recs;
}

inline std::string run_label(const fs::path& p) {
  const auto parent = p.parent_path().filename().string();
  return parent.empty() ? p.stem().string() : parent;
}

}  // namespace detail

inline const std::vector<std::string>& curve_columns() {
  static const std::vector<std::string> cols = {"mean_reward", "kl", "entropy", "score_variance", "scorer_calls"};
  return cols;
}

/// report: training curves keyed by step (side by side when several runs
/// are given) and an evaluation comparison table, as CSV.
inline int cmd_report(const std::vector<fs::path>& inputs, std::ostream& out) {
  if (inputs.empty()) throw std::runtime_error("report needs at least one input file");
  struct Run {
    std::string label;
    std::vector<nlohmann::json> recs;
  };
  std::vector<Run> curves, evals;
  std::set<std::string> used;
  for (const auto& p : inputs) {
    Run run{detail::run_label(p), detail::read_records(p)};
    for (int k = 2; !used.insert(run.label).second; ++k) run.label = detail::run_label(p) + "_" + std::to_string(k);
    const auto& first = run.recs.front();
    if (first.contains("mean_reward") && first.contains("step")) curves.push_back(std::move(run));
    else if (first.contains("accuracy") && first.contains("n_votes")) evals.push_back(std::move(run));
    else throw std::runtime_error(p.string() + ": neither a diagnostics nor an eval summary file");
  }

  auto num = [](const nlohmann::json& rec, const std::string& key, const std::string& label) -> std::string {
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_number()) throw std::runtime_error(label + ": record lacks numeric '" + key + "'");
    if (it->is_number_integer() || it->is_number_unsigned()) return std::to_string(it->get<std::uint64_t>());
    return detail::fmt(it->get<double>());
  };

  if (!curves.empty()) {
    out << "step";
    for (const auto& run : curves)
      for (const auto& c : curve_columns()) out << ',' << (curves.size() == 1 ? c : run.label + "." + c);
    out << '\n';
    std::map<std::uint64_t, std::vector<std::optional<std::size_t>>> rows;
    for (std::size_t r = 0; r < curves.size(); ++r)
      for (std::size_t i = 0; i < curves[r].recs.size(); ++i) {
        const auto step = curves[r].recs[i].at("step").get<std::uint64_t>();
        auto& slot = rows[step];
        slot.resize(curves.size());
        slot[r] = i;
      }
    for (const auto& [step, idx] : rows) {
      out << step;
      for (std::size_t r = 0; r < curves.size(); ++r)
        for (const auto& c : curve_columns()) {
          out << ',';
          if (r < idx.size() && idx[r]) out << num(curves[r].recs[*idx[r]], c, curves[r].label);
        }
      out << '\n';
    }
  }
  if (!evals.empty()) {
    if (!curves.empty()) out << '\n';
    out << "run,scorer,n_votes,n_pairs,accuracy,tie_rate,scorer_calls\n";
    for (const auto& run : evals)
      for (const auto& rec : run.recs)
        out << run.label << ',' << rec.value("scorer", "") << ',' << num(rec, "n_votes", run.label) << ','
            << num(rec, "n_pairs", run.label) << ',' << num(rec, "accuracy", run.label) << ','
            << num(rec, "tie_rate", run.label) << ',' << num(rec, "scorer_calls", run.label) << '\n';
  }
  return 0;
}

}  // namespace irpm::cli
