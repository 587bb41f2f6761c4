#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "irpm/evaluation.hpp"
#include "irpm/grpo.hpp"
#include "irpm/preference_data.hpp"
#include "irpm/reward_engine.hpp"

namespace irpm {

/// Settings for every CLI command. Each field has a default, so an empty
/// config file runs end to end.
struct RunConfig {
  std::uint64_t seed = 0;

  // data
  std::size_t n_pairs = 200;
  double utility_noise = 0.5;
  FilterPolicy filter;
  std::string dataset;
  std::string utilities;

  // reward / optimisation
  RewardConfig reward;
  GRPOConfig grpo;

  // training loop and toy policy
  std::size_t steps = 500;
  std::size_t batch_size = 16;
  double bin_step = 0.5;
  double policy_temperature = 1.0;
  double init_format_violation = 0.2;
  double init_logit_noise = 0.0;
  bool log_rollouts = true;

  // evaluation
  std::string checkpoint;
  std::string scorer = "policy";  // policy | expected | oracle | constant
  double constant_score = 5.0;
  std::vector<std::size_t> n_votes{1};
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& v) {
  std::size_t used = 0;
  const double x = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("not a number");
  return x;
}

inline std::uint64_t to_u64(const std::string& v) {
  if (v.empty() || v[0] == '-') throw std::invalid_argument("not a nonnegative integer");
  std::size_t used = 0;
  const auto x = std::stoull(v, &used);
  if (used != v.size()) throw std::invalid_argument("not an integer");
  return x;
}

inline bool to_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw std::invalid_argument("not a boolean");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> setters = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      {"n_pairs", [](RunConfig& c, const std::string& v) { c.n_pairs = to_u64(v); }},
      {"utility_noise", [](RunConfig& c, const std::string& v) { c.utility_noise = to_double(v); }},
      {"min_strength", [](RunConfig& c, const std::string& v) { c.filter.min_strength = static_cast<int>(to_u64(v)); }},
      {"max_prompt_length", [](RunConfig& c, const std::string& v) { c.filter.max_prompt_length = to_u64(v); }},
      {"dataset", [](RunConfig& c, const std::string& v) { c.dataset = v; }},
      {"utilities", [](RunConfig& c, const std::string& v) { c.utilities = v; }},
      {"variant", [](RunConfig& c, const std::string& v) { c.reward.variant = parse_variant(v); }},
      {"margin_delta", [](RunConfig& c, const std::string& v) { c.reward.margin_delta = to_double(v); }},
      {"adaptive_margin", [](RunConfig& c, const std::string& v) { c.reward.adaptive_margin = to_bool(v); }},
      {"ci_alpha", [](RunConfig& c, const std::string& v) { c.reward.ci_alpha = to_double(v); }},
      {"format_penalty", [](RunConfig& c, const std::string& v) { c.reward.format_penalty = to_double(v); }},
      {"sigma_temperature", [](RunConfig& c, const std::string& v) { c.reward.temperature = to_double(v); }},
      {"clip_epsilon", [](RunConfig& c, const std::string& v) { c.grpo.clip_epsilon = to_double(v); }},
      {"kl_beta", [](RunConfig& c, const std::string& v) { c.grpo.kl_beta = to_double(v); }},
      {"learning_rate", [](RunConfig& c, const std::string& v) { c.grpo.learning_rate = to_double(v); }},
      {"group_size", [](RunConfig& c, const std::string& v) { c.grpo.group_size = to_u64(v); }},
      {"std_epsilon", [](RunConfig& c, const std::string& v) { c.grpo.std_epsilon = to_double(v); }},
      {"max_grad_norm", [](RunConfig& c, const std::string& v) { c.grpo.max_grad_norm = to_double(v); }},
      {"steps", [](RunConfig& c, const std::string& v) { c.steps = to_u64(v); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.batch_size = to_u64(v); }},
      {"bin_step", [](RunConfig& c, const std::string& v) { c.bin_step = to_double(v); }},
      {"policy_temperature", [](RunConfig& c, const std::string& v) { c.policy_temperature = to_double(v); }},
      {"init_format_violation", [](RunConfig& c, const std::string& v) { c.init_format_violation = to_double(v); }},
      {"init_logit_noise", [](RunConfig& c, const std::string& v) { c.init_logit_noise = to_double(v); }},
      {"log_rollouts", [](RunConfig& c, const std::string& v) { c.log_rollouts = to_bool(v); }},
      {"checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
      {"scorer", [](RunConfig& c, const std::string& v) {
         if (v != "policy" && v != "expected" && v != "oracle" && v != "constant")
           throw std::invalid_argument("expected policy, expected, oracle or constant");
         c.scorer = v;
       }},
      {"constant_score", [](RunConfig& c, const std::string& v) { c.constant_score = to_double(v); }},
      {"n_votes", [](RunConfig& c, const std::string& v) {
         c.n_votes.clear();
         std::stringstream ss(v);
         for (std::string item; std::getline(ss, item, ',');) {
           const auto n = to_u64(trim(item));
           if (n == 0) throw std::invalid_argument("vote counts must be positive");
           c.n_votes.push_back(n);
         }
         if (c.n_votes.empty()) throw std::invalid_argument("empty vote list");
       }},
  };
  return setters;
}

}  // namespace detail

/// Parses `key = value` lines. '#' starts a comment. Unknown and repeated
/// keys are errors.
inline RunConfig parse_config(std::istream& in, RunConfig cfg = {}) {
  const auto& setters = detail::config_setters();
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
    }
  }
  try {
    cfg.filter.validate();
    cfg.reward.validate();
    cfg.grpo.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

}  // namespace irpm
