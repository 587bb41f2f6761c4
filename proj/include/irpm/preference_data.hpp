#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irpm/rng.hpp"

namespace irpm {

/// A (prompt, response) pair; the unit the scorer is queried on.
struct ResponseKey {
  std::string prompt;
  std::string response;

  auto operator<=>(const ResponseKey&) const = default;
  bool operator==(const ResponseKey&) const = default;
};

struct PreferencePair {
  std::string pair_id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::optional<int> strength;  // 0..3 when annotated

  ResponseKey chosen_key() const { return {prompt, chosen}; }
  ResponseKey rejected_key() const { return {prompt, rejected}; }

  bool operator==(const PreferencePair&) const = default;
};

using UtilityTable = std::map<ResponseKey, double>;

struct SyntheticTask {
  std::vector<PreferencePair> pairs;
  UtilityTable utility;
  std::uint64_t seed = 0;
};

struct FilterPolicy {
  int min_strength = 2;
  std::size_t max_prompt_length = 3072;  // whitespace-delimited tokens

  void validate() const {
    if (min_strength < 0 || min_strength > 3)
      throw std::invalid_argument("min_strength must lie in {0,1,2,3}");
    if (max_prompt_length == 0) throw std::invalid_argument("max_prompt_length must be positive");
  }
};

struct FilterStats {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t low_strength = 0;
  std::size_t over_length = 0;

  std::size_t dropped() const { return low_strength + over_length; }
};

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

/// Raised by load_dataset; carries every offending line, not just the first.
class DatasetError : public std::runtime_error {
 public:
  explicit DatasetError(std::vector<LineError> errors)
      : std::runtime_error(render(errors)), errors_(std::move(errors)) {}

  const std::vector<LineError>& errors() const noexcept { return errors_; }

 private:
  static std::string render(const std::vector<LineError>& errors) {
    std::ostringstream os;
    os << errors.size() << " invalid record(s)";
    for (const auto& e : errors) os << "\n  line " << e.line << ": " << e.message;
    return os.str();
  }

  std::vector<LineError> errors_;
};

inline std::size_t count_tokens(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string tok; in >> tok;) ++n;
  return n;
}

namespace detail {

inline PreferencePair parse_pair_record(const nlohmann::json& rec, std::size_t line_no) {
  if (!rec.is_object()) throw std::invalid_argument("record is not an object");
  PreferencePair p;
  auto text_field = [&](const char* name) -> std::string {
    auto it = rec.find(name);
    if (it == rec.end() || it->is_null()) throw std::invalid_argument(std::string("missing field '") + name + "'");
    if (!it->is_string()) throw std::invalid_argument(std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
  };
  p.prompt = text_field("prompt");
  p.chosen = text_field("chosen");
  p.rejected = text_field("rejected");
  if (auto it = rec.find("pair_id"); it != rec.end() && !it->is_null()) {
    p.pair_id = it->is_string() ? it->get<std::string>() : it->dump();
  } else {
    p.pair_id = "line-" + std::to_string(line_no);
  }
  if (auto it = rec.find("strength"); it != rec.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw std::invalid_argument("strength must be an integer");
    const auto s = it->get<long long>();
    if (s < 0 || s > 3) throw std::invalid_argument("strength " + std::to_string(s) + " outside {0,1,2,3}");
    p.strength = static_cast<int>(s);
  }
  if (p.chosen == p.rejected) throw std::invalid_argument("chosen and rejected are identical");
  return p;
}

}  // namespace detail

/// Reads line-delimited JSON preference records. Blank lines are ignored.
/// Throws DatasetError listing every malformed line.
inline std::vector<PreferencePair> load_dataset(std::istream& in) {
  if (!in) throw std::runtime_error("dataset stream is not readable");
  std::vector<PreferencePair> pairs;
  std::vector<LineError> errors;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      pairs.push_back(detail::parse_pair_record(nlohmann::json::parse(line), line_no));
    } catch (const nlohmann::json::exception& e) {
      errors.push_back({line_no, std::string("malformed JSON: ") + e.what()});
    } catch (const std::invalid_argument& e) {
      errors.push_back({line_no, e.what()});
    }
  }
  if (in.bad()) throw std::runtime_error("I/O error while reading dataset");
  if (!errors.empty()) throw DatasetError(std::move(errors));
  return pairs;
}

inline nlohmann::ordered_json to_json(const PreferencePair& p) {
  nlohmann::ordered_json rec;
  rec["pair_id"] = p.pair_id;
  rec["prompt"] = p.prompt;
  rec["chosen"] = p.chosen;
  rec["rejected"] = p.rejected;
  if (p.strength) rec["strength"] = *p.strength;
  return rec;
}

inline void write_dataset(std::ostream& out, const std::vector<PreferencePair>& pairs) {
  for (const auto& p : pairs) out << to_json(p).dump() << '\n';
}

inline void write_utilities(std::ostream& out, const UtilityTable& table) {
  for (const auto& [key, u] : table) {
    nlohmann::ordered_json rec;
    rec["prompt"] = key.prompt;
    rec["response"] = key.response;
    rec["utility"] = u;
    out << rec.dump() << '\n';
  }
}

inline UtilityTable load_utilities(std::istream& in) {
  if (!in) throw std::runtime_error("utility stream is not readable");
  UtilityTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      table[{rec.at("prompt").get<std::string>(), rec.at("response").get<std::string>()}] =
          rec.at("utility").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("utility table line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

/// Drops low-strength and over-length pairs. A pair failing both rules is
/// counted under low_strength only, so the drop counts partition the input.
inline std::pair<std::vector<PreferencePair>, FilterStats> filter_dataset(const std::vector<PreferencePair>& pairs,
                                                                          const FilterPolicy& policy) {
  policy.validate();
  FilterStats stats;
  stats.input = pairs.size();
  std::vector<PreferencePair> kept;
  kept.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.strength && *p.strength < policy.min_strength) {
      ++stats.low_strength;
    } else if (count_tokens(p.prompt) > policy.max_prompt_length) {
      ++stats.over_length;
    } else {
      kept.push_back(p);
    }
  }
  stats.kept = kept.size();
  return {std::move(kept), stats};
}

/// Deterministic gap between chosen and rejected utility for pair k when no
/// noise is applied: cycles through 1.0, 1.5, 2.0, 2.5, 3.0.
inline double scheduled_gap(std::size_t k) { return 1.0 + 0.5 * static_cast<double>(k % 5); }

/// Synthetic preference task with hidden utilities on the [0,10] scale.
///
/// Each pair gets its own prompt and two responses. The utility gap follows
/// scheduled_gap() perturbed by Gaussian noise of scale utility_noise (gaps
/// stay >= 0.05). Pairs whose gap is at or above the median gap are labelled
/// strength 3, the rest strength 2.
inline SyntheticTask make_synthetic_dataset(std::size_t n_pairs, std::uint64_t seed, double utility_noise) {
  if (n_pairs == 0) throw std::invalid_argument("n_pairs must be at least 1");
  if (!(utility_noise >= 0.0)) throw std::invalid_argument("utility_noise must be nonnegative");
  constexpr double kMinGap = 0.05;

  SyntheticTask task;
  task.seed = seed;
  Rng rng(seed);
  std::vector<double> gaps(n_pairs);
  std::vector<double> low(n_pairs);
  std::vector<bool> first_is_chosen(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    double gap = scheduled_gap(k);
    if (utility_noise > 0.0) gap = std::clamp(std::abs(gap + utility_noise * rng.normal()), kMinGap, 10.0);
    gaps[k] = gap;
    low[k] = rng.uniform(0.0, 10.0 - gap);
    first_is_chosen[k] = rng.bernoulli(0.5);
  }
  std::vector<double> sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  const double median_gap = sorted[(n_pairs - 1) / 2];

  task.pairs.reserve(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const std::string id = std::to_string(k);
    PreferencePair p;
    p.pair_id = "syn-" + id;
    p.prompt = "task " + id + ": judge which candidate answer is more helpful";
    const std::string a = "candidate " + id + "-a";
    const std::string b = "candidate " + id + "-b";
    p.chosen = first_is_chosen[k] ? a : b;
    p.rejected = first_is_chosen[k] ? b : a;
    p.strength = gaps[k] >= median_gap ? 3 : 2;
    task.utility[p.rejected_key()] = low[k];
    task.utility[p.chosen_key()] = low[k] + gaps[k];
    task.pairs.push_back(std::move(p));
  }
  return task;
}

}  // namespace irpm
