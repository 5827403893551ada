#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metawaf/request_codec.h"

namespace metawaf {

inline constexpr std::string_view kBosToken = "_bos_";
inline constexpr std::string_view kEosToken = "_eos_";

/// Sorted token list of one domain (its token set plus the sequence
/// boundary markers) with id lookup.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::set<std::string>& token_set);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(std::string_view token) const;
  /// -1 when absent.
  int find(std::string_view token) const;
  /// Throws std::out_of_range naming the token when absent.
  int id(std::string_view token) const;

  int bos() const { return id(kBosToken); }
  int eos() const { return id(kEosToken); }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  /// `_bos_ tokens... _eos_`, as used for skip-gram contexts.
  std::vector<std::string> wrap(std::span<const std::string> tokens) const;

  /// FNV-1a over the token list; used to refuse mismatched checkpoints.
  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace metawaf
