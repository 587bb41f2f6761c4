// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Reference values come from the brute-force helpers in
// oracles.hpp, never from the library path under test.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "batch_fixtures.hpp"
#include "irpm/commands.hpp"
#include "irpm/irpm.hpp"
#include "oracles.hpp"

using namespace irpm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> uniform_scores(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(0.0, 10.0);
  return v;
}

struct RandomPair {
  std::vector<double> c, r;
};

std::vector<RandomPair> random_pairs(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<RandomPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gc = 1 + rng.below(8), gr = 1 + rng.below(8);
    out.push_back({uniform_scores(rng, gc), uniform_scores(rng, gr)});
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Outcome decomposition_identity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& p : random_pairs(101, 1000)) {
    const ScoreGroup c(p.c), r(p.r);
    const double est = mc_bt_estimate(c, r);
    const auto rw = preference_rewards(c, r);
    worst = std::max({worst, std::abs(mean_of(rw.chosen) - est), std::abs(mean_of(rw.rejected) - est)});
  }
  const double t = seconds_since(t0);
  return {worst < 1e-12 && t < 1.0, fmt("max deviation %.3g, %.3f s", worst, t)};
}

Outcome complement_symmetry() {
  double worst = 0.0;
  for (const auto& p : random_pairs(101, 1000)) {
    const ScoreGroup c(p.c), r(p.r);
    worst = std::max(worst, std::abs(mc_bt_estimate(c, r) + mc_bt_estimate(r, c) - 1.0));
  }
  return {worst < 1e-12, fmt("max |p(A,B) + p(B,A) - 1| = %.3g", worst)};
}

Outcome auc_equivalence() {
  std::size_t mismatches = 0;
  auto pairs = random_pairs(303, 1000);
  // Quantise half of them so ties actually occur.
  for (std::size_t i = 0; i < pairs.size(); i += 2)
    for (auto* v : {&pairs[i].c, &pairs[i].r})
      for (double& x : *v) x = std::round(x);
  for (const auto& p : pairs) {
    const auto a = auc_rewards(ScoreGroup(p.c), ScoreGroup(p.r));
    const double scaled = a.estimate * static_cast<double>(p.c.size() * p.r.size());
    mismatches += std::llround(scaled) != static_cast<long long>(oracle::mann_whitney(p.c, p.r)) ||
                  std::abs(scaled - std::round(scaled)) > 1e-9;
  }
  return {mismatches == 0, fmt("%zu mismatches over 1000 pairs", mismatches)};
}

Outcome monte_carlo_consistency() {
  const auto t0 = Clock::now();
  const std::size_t g = 1024;
  const ScoreBinGrid grid(0.5);
  std::vector<double> values;
  for (std::size_t i = 0; i < grid.size(); ++i) values.push_back(grid.value(i));
  std::size_t inside = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng = Rng::stream(404, {trial});
    auto pmf = [&] {
      std::vector<double> w(values.size());
      double total = 0.0;
      for (double& x : w) total += (x = std::exp(1.5 * rng.normal()));
      for (double& x : w) x /= total;
      return w;
    };
    const auto pc = pmf(), pr = pmf();
    std::vector<double> c(g), r(g);
    for (double& x : c) x = values[rng.categorical(pc)];
    for (double& x : r) x = values[rng.categorical(pr)];
    const double est = mc_bt_estimate(ScoreGroup(c), ScoreGroup(r));
    const auto exact = oracle::u_statistic_moments(values, pc, pr, g, g);
    inside += std::abs(est - exact.mean) <= 3.0 * std::sqrt(exact.variance);
  }
  const double t = seconds_since(t0);
  return {inside >= 95 && t < 10.0, fmt("%zu/100 trials within 3 SE, %.2f s", inside, t)};
}

Outcome confidence_intervals() {
  double worst = 0.0;
  Rng rng(505);
  for (std::size_t df = 1; df <= 31; ++df) {
    const auto scores = uniform_scores(rng, df + 1);
    const auto ci = confidence_interval(ScoreGroup(scores), 0.05);
    const double n = static_cast<double>(scores.size());
    const double mu = mean_of(scores);
    double ss = 0.0;
    for (double x : scores) ss += (x - mu) * (x - mu);
    const double half = oracle::t_quantile(0.975, static_cast<double>(df)) * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    worst = std::max({worst, std::abs(ci.lower - (mu - half)), std::abs(ci.upper - (mu + half))});
  }
  const auto ex = confidence_interval({6.0, 8.0}, 0.05);
  const double q = oracle::t_quantile(0.975, 1.0);
  const double ex_err = std::max(std::abs(ex.lower - (7.0 - q)), std::abs(ex.upper - (7.0 + q)));
  return {worst < 1e-6 && ex_err < 1e-6,
          fmt("df 1..31 max error %.3g; {6,8} -> [%.6f, %.6f], error %.3g", worst, ex.lower, ex.upper, ex_err)};
}

Outcome advantage_normalisation() {
  Rng rng(606);
  const GRPOConfig cfg;
  double worst_mean = 0.0, worst_std = 0.0;
  std::size_t tested = 0;
  while (tested < 1000) {
    const std::size_t n = 2 + rng.below(15);
    std::vector<double> rw(n);
    const double scale = std::pow(10.0, rng.uniform(-3.0, 2.0));
    for (double& x : rw) x = scale * rng.normal();
    const double m = mean_of(rw);
    double var = 0.0;
    for (double x : rw) var += (x - m) * (x - m);
    if (var / static_cast<double>(n) <= 1e-8) continue;
    ++tested;
    const auto adv = normalize_advantages(rw, cfg);
    const double am = mean_of(adv);
    double av = 0.0;
    for (double a : adv) av += (a - am) * (a - am);
    worst_mean = std::max(worst_mean, std::abs(am));
    worst_std = std::max(worst_std, std::abs(std::sqrt(av / static_cast<double>(n)) - 1.0));
  }
  bool constants_zero = true;
  for (double v : {-1.0, 0.0, 0.37, 1.0})
    for (std::size_t n : {1u, 4u, 9u})
      for (double a : normalize_advantages(std::vector<double>(n, v), cfg)) constants_zero &= a == 0.0;
  return {worst_mean < 1e-9 && worst_std < 1e-9 && constants_zero,
          fmt("max |mean| %.3g, max |std-1| %.3g, constant vectors %s", worst_mean, worst_std,
              constants_zero ? "all zero" : "NONZERO")};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  GRPOConfig cfg;
  cfg.kl_beta = 0.04;
  double worst = 0.0;
  std::size_t clipped = 0, tokens = 0;
  for (auto v : {RewardVariant::Preference, RewardVariant::AUC, RewardVariant::Mean, RewardVariant::Median,
                 RewardVariant::Interval}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto prob = fixture::random_problem(7000 + seed, v, 3, 4, 0.15);
      const auto analytic = objective_gradient(prob.current, prob.batch, cfg);
      const auto numeric = fixture::finite_difference(
          prob.current, [&](const ToyScorerPolicy& p) { return objective_value(p, prob.batch, cfg); }, 1e-5);
      worst = std::max(worst, fixture::max_relative_error(analytic, numeric));
      for (const auto& pr : prob.batch.pairs)
        for (const auto* side : {&pr.chosen, &pr.rejected})
          for (const auto& r : *side) {
            const auto cur = token_log_probs(prob.current, r.key, r.outcome);
            ++tokens;
            clipped += !surrogate_unclipped(std::exp(cur.format - r.old_logp.format), r.advantage, cfg.clip_epsilon);
          }
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-5 && t < 30.0,
          fmt("5 variants x 20 batches, max rel error %.3g, %zu/%zu clipped format tokens, %.2f s", worst, clipped,
              tokens, t)};
}

Outcome convergence() {
  const auto t0 = Clock::now();
  double worst_acc = 1.0;
  bool violation_down = true;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.reward.variant = RewardVariant::Mean;
    cfg.grpo.group_size = 4;
    const auto task = make_synthetic_dataset(200, seed, cfg.utility_noise);
    TrainState st(cli::initial_policy(cfg, task.pairs));
    auto mean_violation = [&](const ToyScorerPolicy& p) {
      double v = 0.0;
      for (const auto& [key, row] : p.rows()) v += 1.0 - p.format_ok_prob(key);
      return v / static_cast<double>(p.rows().size());
    };
    const double v0 = mean_violation(st.policy());
    std::vector<PreferencePair> batch;
    for (std::size_t s = 0; s < 500; ++s) {
      batch.clear();
      for (auto i : select_batch(task.pairs.size(), cfg.batch_size, s, seed)) batch.push_back(task.pairs[i]);
      irpm_train_step(st, batch, cfg.reward, cfg.grpo, seed);
    }
    const auto rep = evaluate_pairs(ExpectedScoreScorer{&st.policy()}, task.pairs, EvalProtocol{1, 0.5, seed});
    const double v1 = mean_violation(st.policy());
    worst_acc = std::min(worst_acc, rep.accuracy);
    violation_down &= v1 < v0;
    per_seed += fmt(" s%llu=%.4f/%.3f", static_cast<unsigned long long>(seed), rep.accuracy, v1);
  }
  const double t = seconds_since(t0);
  return {worst_acc >= 0.95 && violation_down && t < 60.0,
          fmt("accuracy/violation per seed:%s (init 0.2), %.2f s", per_seed.c_str(), t)};
}

Outcome cost_accounting() {
  const auto task = make_synthetic_dataset(40, 9, 0.5);
  RunConfig cfg;
  TrainState st(cli::initial_policy(cfg, task.pairs));
  bool exact = true;
  for (std::size_t g : {1u, 4u, 8u})
    for (std::size_t b : {1u, 7u, 16u, 40u}) {
      GRPOConfig gc;
      gc.group_size = g;
      const std::size_t before = st.scorer_calls();
      irpm_train_step(st, std::span(task.pairs).first(b), cfg.reward, gc, 9);
      exact &= st.scorer_calls() - before == 2 * g * b;
    }
  const auto budgets = compare_call_budgets(8, 8);
  return {exact && budgets.rrm_style == 32 && budgets.pointwise == 8,
          fmt("per-step calls %s; n=8: rrm_style %zu, pointwise %zu, round_robin %zu", exact ? "exact" : "WRONG",
              budgets.rrm_style, budgets.pointwise, budgets.round_robin)};
}

Outcome voting_protocol() {
  const auto task = make_synthetic_dataset(200, 10, 0.5);
  const auto flat = evaluate_pairs(ConstantScorer{6.0}, task.pairs, EvalProtocol{});
  bool ok = flat.accuracy == 0.5 && flat.tie_rate == 1.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.init_logit_noise = 1.0;
    const auto policy = cli::initial_policy(cfg, task.pairs);
    const auto one = evaluate_pairs(PolicyScorer{&policy}, task.pairs, EvalProtocol{1, 0.5, seed});
    const auto eight = evaluate_pairs(PolicyScorer{&policy}, task.pairs, EvalProtocol{8, 0.5, seed});
    ok &= eight.tie_rate <= one.tie_rate;
    per_seed += fmt(" %.3f>=%.3f", one.tie_rate, eight.tie_rate);
  }
  return {ok, fmt("constant: accuracy %.2f tie_rate %.2f; tie_rate @1 vs @8:%s", flat.accuracy, flat.tie_rate,
                  per_seed.c_str())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("irpm-acceptance-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig pipeline_config(const fs::path& data_dir) {
  RunConfig cfg;
  cfg.seed = 17;
  cfg.n_pairs = 60;
  cfg.steps = 25;
  cfg.batch_size = 12;
  cfg.n_votes = {1, 2, 8};
  std::ostringstream msg;
  cli::cmd_gen_data(cfg, data_dir, msg);
  cfg.dataset = (data_dir / "dataset.jsonl").string();
  return cfg;
}

Outcome determinism() {
  const auto data = scratch("determinism-data");
  RunConfig cfg = pipeline_config(data);
  std::ostringstream msg;
  std::vector<fs::path> runs;
  for (const char* name : {"a", "b"}) {
    const auto dir = scratch(std::string("determinism-") + name);
    cli::cmd_train(cfg, dir, msg);
    RunConfig ev = cfg;
    ev.checkpoint = (dir / "checkpoint.jsonl").string();
    cli::cmd_eval(ev, dir / "eval", msg);
    runs.push_back(dir);
  }
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::recursive_directory_iterator(runs[0])) {
    if (!entry.is_regular_file()) continue;
    ++files;
    differ += slurp(entry.path()) != slurp(runs[1] / fs::relative(entry.path(), runs[0]));
  }
  return {files >= 9 && differ == 0, fmt("%zu files compared, %zu differ", files, differ)};
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line) && !line.empty();) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

/// Entropy of the joint (format flag, score bin) table of one key.
double joint_entropy(double format_ok, const std::vector<double>& bins) {
  double h = 0.0;
  for (double f : {format_ok, 1.0 - format_ok})
    for (double b : bins) {
      const double p = f * b;
      if (p > 0.0) h -= p * std::log(p);
    }
  return h;
}

Outcome diagnostics_integrity() {
  const auto data = scratch("integrity-data");
  RunConfig cfg = pipeline_config(data);
  cfg.grpo.group_size = 5;
  const auto dir = scratch("integrity-run");
  std::ostringstream msg, csv;
  cli::cmd_train(cfg, dir, msg);
  cli::cmd_report({dir / "diagnostics.jsonl"}, csv);
  const auto rows = read_csv(csv.str());
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows.at(0).size(); ++i) col[rows[0][i]] = i;

  std::ifstream rollouts(dir / "rollouts.jsonl");
  double worst_var = 0.0, worst_h = 0.0;
  std::size_t steps = 0;
  for (std::string line; std::getline(rollouts, line);) {
    const auto j = nlohmann::json::parse(line);
    std::vector<double> scores;
    for (const auto& p : j.at("pairs"))
      for (const char* side : {"chosen", "rejected"})
        for (const auto& r : p.at(side))
          if (!r.at("score").is_null()) scores.push_back(r.at("score").get<double>());
    double h = 0.0;
    for (const auto& k : j.at("keys"))
      h += joint_entropy(k.at("format_ok_prob").get<double>(), k.at("bin_probs").get<std::vector<double>>());
    h /= static_cast<double>(j.at("keys").size());

    const auto step = j.at("step").get<std::size_t>();
    const auto& row = rows.at(step);
    if (std::stoull(row.at(0)) != step) return {false, "report row order does not match steps"};
    worst_var = std::max(worst_var, std::abs(std::stod(row.at(col.at("score_variance"))) -
                                             oracle::one_pass_variance(scores)));
    worst_h = std::max(worst_h, std::abs(std::stod(row.at(col.at("entropy"))) - h));
    ++steps;
  }
  const bool ok = steps == cfg.steps && rows.size() == steps + 1 && worst_var < 1e-9 && worst_h < 1e-9;
  return {ok, fmt("%zu steps, max variance error %.3g, max entropy error %.3g", steps, worst_var, worst_h)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"decomposition identity", decomposition_identity},
      {"complement symmetry", complement_symmetry},
      {"AUC equals Mann-Whitney count", auc_equivalence},
      {"Monte-Carlo consistency", monte_carlo_consistency},
      {"confidence intervals", confidence_intervals},
      {"advantage normalisation", advantage_normalisation},
      {"gradient correctness", gradient_correctness},
      {"end-to-end convergence", convergence},
      {"cost accounting", cost_accounting},
      {"voting and tie protocol", voting_protocol},
      {"determinism", determinism},
      {"diagnostics integrity", diagnostics_integrity},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] criterion %zu: %s (%s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(fs::temp_directory_path() / ("irpm-acceptance-" + std::to_string(::getpid())));
  return failures == 0 ? 0 : 1;
}
