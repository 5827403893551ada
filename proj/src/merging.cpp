#include "metawaf/merging.h"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace metawaf {

bool CandidateRegex::accepts(std::string_view value) const {
  if (value.empty()) return false;
  return std::all_of(value.begin(), value.end(),
                     [&](char c) { return char_class.find(c) != std::string::npos; });
}

bool candidate_less(const CandidateRegex& a, const CandidateRegex& b) {
  return std::tuple(a.class_size(), a.id) < std::tuple(b.class_size(), b.id);
}

std::vector<CandidateRegex> default_candidates() {
  const std::string digits = "0123456789";
  const std::string lower = "abcdefghijklmnopqrstuvwxyz";
  return {
      {"decimal", digits, "[0-9]"},
      {"hex", digits + "abcdef", "[0-9a-f]"},
      {"lower", lower, "[a-z]"},
      {"alnum", digits + lower, "[0-9a-z]"},
      {"alnum_ext", digits + lower + "._-", "[0-9a-z._-]"},
  };
}

std::string KeyRule::regex() const {
  std::ostringstream out;
  out << char_class.pattern << '{' << length.n;
  if (length.kind == LengthConstraint::Kind::kAtLeast) out << ',';
  out << '}';
  return out.str();
}

KeyValueTable collect_key_values(std::span<const ParsedRequest> corpus) {
  KeyValueTable table;
  for (const auto& request : corpus) {
    for (const auto& [key, value] : request.pairs) ++table[key][value];
  }
  return table;
}

std::string placeholder_for(std::string_view key, const CandidateRegex& char_class) {
  if (char_class.id == "decimal") return std::string(kNumPlaceholder);
  if (char_class.id == "hex") return std::string(kHexPlaceholder);
  std::string name;
  for (char c : key) name.push_back(is_token_char(c) ? c : '_');
  return "_" + name + "_";
}

std::optional<KeyRule> generate_regex(std::string_view key,
                                      const std::map<std::string, std::size_t>& values,
                                      std::span<const CandidateRegex> candidates,
                                      double match_proportion) {
  std::size_t total = 0;
  for (const auto& [value, count] : values) total += count;
  if (total == 0) return std::nullopt;

  std::vector<CandidateRegex> ordered(candidates.begin(), candidates.end());
  std::sort(ordered.begin(), ordered.end(), candidate_less);

  for (const auto& candidate : ordered) {
    std::size_t matched = 0;
    std::size_t min_len = std::string::npos;
    std::size_t max_len = 0;
    for (const auto& [value, count] : values) {
      if (!candidate.accepts(value)) continue;
      matched += count;
      min_len = std::min(min_len, value.size());
      max_len = std::max(max_len, value.size());
    }
    if (matched == 0) continue;
    if (static_cast<double>(matched) < match_proportion * static_cast<double>(total)) continue;

    KeyRule rule;
    rule.key = std::string(key);
    rule.char_class = candidate;
    rule.length = min_len == max_len
                      ? LengthConstraint{LengthConstraint::Kind::kExact, min_len}
                      : LengthConstraint{LengthConstraint::Kind::kAtLeast, min_len};
    rule.placeholder = placeholder_for(key, candidate);
    return rule;
  }
  return std::nullopt;
}

std::vector<std::string> merge_tokens(const MergingStrategy& strategy, const ParsedRequest& parsed) {
  std::vector<std::string> out;
  for (const auto& segment : parsed.path_segments) {
    for (auto& t : split_raw_fragment(segment)) out.push_back(std::move(t));
  }
  for (const auto& [key, value] : parsed.pairs) {
    for (auto& t : split_raw_fragment(key)) out.push_back(std::move(t));
    auto rule = strategy.rules.find(key);
    if (rule != strategy.rules.end() && rule->second.matches(value)) {
      out.push_back(rule->second.placeholder);
      continue;
    }
    for (auto& t : split_raw_fragment(value)) out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::string> restrict_to_token_set(const MergingStrategy& strategy,
                                               std::vector<std::string> tokens) {
  for (auto& t : tokens) {
    if (!strategy.token_set.contains(t)) t = std::string(kOtherToken);
  }
  return tokens;
}

TokenSequence apply_strategy(const MergingStrategy& strategy, const ParsedRequest& parsed) {
  return {strategy.domain_id, restrict_to_token_set(strategy, merge_tokens(strategy, parsed))};
}

MergingStrategy build_strategy(std::span<const ParsedRequest> corpus, const StrategyConfig& config,
                               std::string domain_id) {
  MergingStrategy strategy;
  strategy.domain_id = std::move(domain_id);
  strategy.distinct_value_threshold = config.distinct_value_threshold;
  strategy.match_proportion = config.match_proportion;
  strategy.low_frequency_threshold = config.low_frequency_threshold;
  strategy.candidates = config.candidates;
  std::sort(strategy.candidates.begin(), strategy.candidates.end(), candidate_less);

  const KeyValueTable table = collect_key_values(corpus);
  for (const auto& [key, values] : table) {
    if (values.size() < config.distinct_value_threshold) continue;
    if (auto rule = generate_regex(key, values, strategy.candidates, config.match_proportion)) {
      strategy.rules.emplace(key, std::move(*rule));
    }
  }

  std::map<std::string, std::size_t> frequency;
  for (const auto& request : corpus) {
    for (auto& t : merge_tokens(strategy, request)) ++frequency[std::move(t)];
  }
  for (const auto& [token, count] : frequency) {
    if (count >= config.low_frequency_threshold) strategy.token_set.insert(token);
  }
  for (const auto& [key, rule] : strategy.rules) strategy.token_set.insert(rule.placeholder);
  strategy.token_set.insert(std::string(kOtherToken));
  return strategy;
}

namespace {

using nlohmann::json;

json rule_to_json(const KeyRule& rule) {
  return {
      {"key", rule.key},
      {"class", rule.char_class.id},
      {"regex", rule.regex()},
      {"length_kind", rule.length.kind == LengthConstraint::Kind::kExact ? "exact" : "at_least"},
      {"length", rule.length.n},
      {"placeholder", rule.placeholder},
  };
}

}  // namespace

std::string strategy_to_json(const MergingStrategy& strategy) {
  json candidates = json::array();
  for (const auto& c : strategy.candidates) {
    candidates.push_back({{"id", c.id}, {"chars", c.char_class}, {"pattern", c.pattern}});
  }
  json rules = json::array();
  for (const auto& [key, rule] : strategy.rules) rules.push_back(rule_to_json(rule));
  json doc = {
      {"format", "metawaf-strategy/1"},
      {"domain", strategy.domain_id},
      {"distinct_value_threshold", strategy.distinct_value_threshold},
      {"match_proportion", strategy.match_proportion},
      {"low_frequency_threshold", strategy.low_frequency_threshold},
      {"candidates", candidates},
      {"rules", rules},
      {"token_set", std::vector<std::string>(strategy.token_set.begin(), strategy.token_set.end())},
  };
  return doc.dump(2) + "\n";
}

MergingStrategy strategy_from_json(std::string_view text) {
  const json doc = json::parse(text);
  if (doc.value("format", "") != "metawaf-strategy/1") {
    throw std::runtime_error("strategy file: unsupported format");
  }
  MergingStrategy strategy;
  strategy.domain_id = doc.at("domain").get<std::string>();
  strategy.distinct_value_threshold = doc.at("distinct_value_threshold").get<std::size_t>();
  strategy.match_proportion = doc.at("match_proportion").get<double>();
  strategy.low_frequency_threshold = doc.at("low_frequency_threshold").get<std::size_t>();
  for (const auto& c : doc.at("candidates")) {
    strategy.candidates.push_back({c.at("id").get<std::string>(), c.at("chars").get<std::string>(),
                                   c.at("pattern").get<std::string>()});
  }
  for (const auto& r : doc.at("rules")) {
    KeyRule rule;
    rule.key = r.at("key").get<std::string>();
    const auto class_id = r.at("class").get<std::string>();
    auto it = std::find_if(strategy.candidates.begin(), strategy.candidates.end(),
                           [&](const CandidateRegex& c) { return c.id == class_id; });
    if (it == strategy.candidates.end()) {
      throw std::runtime_error("strategy file: rule for '" + rule.key + "' names unknown class " +
                               class_id);
    }
    rule.char_class = *it;
    rule.length.kind = r.at("length_kind").get<std::string>() == "exact"
                           ? LengthConstraint::Kind::kExact
                           : LengthConstraint::Kind::kAtLeast;
    rule.length.n = r.at("length").get<std::size_t>();
    rule.placeholder = r.at("placeholder").get<std::string>();
    strategy.rules.emplace(rule.key, std::move(rule));
  }
  for (const auto& t : doc.at("token_set")) strategy.token_set.insert(t.get<std::string>());
  return strategy;
}

void save_strategy(const MergingStrategy& strategy, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write strategy file " + path.string());
  out << strategy_to_json(strategy);
}

MergingStrategy load_strategy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read strategy file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return strategy_from_json(buffer.str());
}

}  // namespace metawaf
