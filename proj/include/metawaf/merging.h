#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metawaf/request_codec.h"

namespace metawaf {

inline constexpr std::string_view kOtherToken = "_other_";
inline constexpr std::string_view kNumPlaceholder = "_num_";
inline constexpr std::string_view kHexPlaceholder = "_hexnum_";

/// key -> (value -> occurrence count)
using KeyValueTable = std::map<std::string, std::map<std::string, std::size_t>>;

/// A `[class]+` pattern from the fixed candidate ladder. Candidates are
/// ordered by class_size, ties broken by id.
struct CandidateRegex {
  std::string id;
  std::string char_class;  // every character the class accepts
  std::string pattern;     // display form, e.g. "[0-9a-z]"

  std::size_t class_size() const { return char_class.size(); }
  bool accepts(std::string_view value) const;
  bool operator==(const CandidateRegex&) const = default;
};

bool candidate_less(const CandidateRegex& a, const CandidateRegex& b);

/// decimal, hex, lower, alnum, alnum_ext: [0-9] [0-9a-f] [a-z] [0-9a-z] [0-9a-z._-]
std::vector<CandidateRegex> default_candidates();

struct LengthConstraint {
  enum class Kind { kExact, kAtLeast };
  Kind kind = Kind::kExact;
  std::size_t n = 0;

  bool accepts(std::size_t length) const {
    return kind == Kind::kExact ? length == n : length >= n;
  }
  bool operator==(const LengthConstraint&) const = default;
};

struct KeyRule {
  std::string key;
  CandidateRegex char_class;
  LengthConstraint length;
  std::string placeholder;

  bool matches(std::string_view value) const {
    return !value.empty() && length.accepts(value.size()) && char_class.accepts(value);
  }
  /// Regex rendering, e.g. "[0-9a-z]{8}" or "[0-9a-z]{11,}".
  std::string regex() const;
  bool operator==(const KeyRule&) const = default;
};

struct StrategyConfig {
  std::size_t distinct_value_threshold = 64;
  double match_proportion = 0.99;
  std::size_t low_frequency_threshold = 5;
  std::vector<CandidateRegex> candidates = default_candidates();
};

/// Per-domain preprocessing: induced key rules plus the domain token set.
struct MergingStrategy {
  std::string domain_id;
  std::map<std::string, KeyRule> rules;
  std::set<std::string> token_set;
  std::size_t distinct_value_threshold = 64;
  double match_proportion = 0.99;
  std::size_t low_frequency_threshold = 5;
  std::vector<CandidateRegex> candidates;

  bool operator==(const MergingStrategy&) const = default;
};

KeyValueTable collect_key_values(std::span<const ParsedRequest> corpus);

/// Placeholder for a rule on `key` with the given class: `_num_` for decimal,
/// `_hexnum_` for hexadecimal, `_{key}_` otherwise (non-token characters in
/// the key become '_').
std::string placeholder_for(std::string_view key, const CandidateRegex& char_class);

/// Picks the smallest candidate accepted by at least `match_proportion` of
/// the value occurrences. Returns nullopt when no candidate qualifies.
std::optional<KeyRule> generate_regex(std::string_view key,
                                      const std::map<std::string, std::size_t>& values,
                                      std::span<const CandidateRegex> candidates,
                                      double match_proportion);

MergingStrategy build_strategy(std::span<const ParsedRequest> corpus, const StrategyConfig& config,
                               std::string domain_id = {});

/// Rule merging only; no `_other_` substitution.
std::vector<std::string> merge_tokens(const MergingStrategy& strategy, const ParsedRequest& parsed);

/// Rule merging, then every token outside token_set becomes `_other_`.
TokenSequence apply_strategy(const MergingStrategy& strategy, const ParsedRequest& parsed);

/// Maps tokens outside the token set to `_other_`.
std::vector<std::string> restrict_to_token_set(const MergingStrategy& strategy,
                                               std::vector<std::string> tokens);

std::string strategy_to_json(const MergingStrategy& strategy);
MergingStrategy strategy_from_json(std::string_view text);
void save_strategy(const MergingStrategy& strategy, const std::filesystem::path& path);
MergingStrategy load_strategy(const std::filesystem::path& path);

}  // namespace metawaf
