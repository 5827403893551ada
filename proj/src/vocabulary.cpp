#include "metawaf/vocabulary.h"

#include <algorithm>
#include <stdexcept>

#include "metawaf/hashing.h"

namespace metawaf {

Vocabulary::Vocabulary(const std::set<std::string>& token_set) {
  std::vector<std::string> tokens(token_set.begin(), token_set.end());
  tokens.emplace_back(kBosToken);
  tokens.emplace_back(kEosToken);
  *this = from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_.emplace(v.tokens_[i], static_cast<int>(i));
  return v;
}

bool Vocabulary::contains(std::string_view token) const { return find(token) >= 0; }

int Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

int Vocabulary::id(std::string_view token) const {
  int i = find(token);
  if (i < 0) throw std::out_of_range("token not in vocabulary: '" + std::string(token) + "'");
  return i;
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::wrap(std::span<const std::string> tokens) const {
  std::vector<std::string> out;
  out.reserve(tokens.size() + 2);
  out.emplace_back(kBosToken);
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.emplace_back(kEosToken);
  return out;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::span<const std::string> all(tokens_);
  return sequence_hash(all);
}

}  // namespace metawaf
