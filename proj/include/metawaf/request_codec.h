#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace metawaf {

/// One HTTP request as it appears in an access log. `url` is the path plus
/// optional query string; scheme and host, if present, are stripped by
/// parse_request. `body` is only interpreted when it is form-urlencoded.
struct RawRequest {
  std::string domain_id;
  std::string method;
  std::string url;
  std::string body;
  std::string content_type;  // empty means "assume form-urlencoded if body looks like pairs"
};

struct KeyValue {
  std::string key;
  std::string value;

  bool operator==(const KeyValue&) const = default;
};

/// Decoded, lowercased request structure. Strings are percent-decoded
/// exactly once; escapes that fail to decode are kept verbatim and reported
/// in `warnings`.
struct ParsedRequest {
  std::vector<std::string> path_segments;
  std::vector<KeyValue> pairs;
  std::vector<std::string> warnings;
};

struct TokenSequence {
  std::string domain_id;
  std::vector<std::string> tokens;

  bool operator==(const TokenSequence&) const = default;
};

/// Where a token came from. Value tokens remember the pair index so the
/// merging stage can look up the owning key.
enum class TokenRole { kPath, kKey, kValue };

struct TaggedToken {
  std::string text;
  TokenRole role = TokenRole::kPath;
  int pair_index = -1;
};

/// Percent-decodes `in` once. `+` is decoded to a space when `plus_as_space`
/// is set (query strings and form bodies). Returns false if any escape was
/// malformed; those escapes are copied through unchanged.
bool percent_decode(std::string_view in, std::string& out, bool plus_as_space);

std::string to_lower_ascii(std::string_view s);

/// Characters that are kept inside tokens: [a-z0-9_]. Everything else
/// (after lowercasing) separates tokens.
bool is_token_char(char c);

/// True for the reserved placeholder namespace `_..._`.
bool is_placeholder_form(std::string_view token);

/// Marker appended to raw tokens that collide with the placeholder namespace.
inline constexpr std::string_view kEscapeSuffix = "lit";

/// Lowercases and splits on every non-token character, dropping empty
/// fragments. Does not escape placeholder-shaped fragments.
std::vector<std::string> split_fragment(std::string_view text);

/// split_fragment followed by escaping of placeholder-shaped fragments.
std::vector<std::string> split_raw_fragment(std::string_view text);

ParsedRequest parse_request(const RawRequest& raw);

/// Path tokens, then for every pair its key tokens followed by its value
/// tokens. Punctuation is dropped.
TokenSequence tokenize(const ParsedRequest& parsed, std::string domain_id = {});

/// Same order as tokenize, but keeps the role of each token.
std::vector<TaggedToken> tokenize_tagged(const ParsedRequest& parsed);

}  // namespace metawaf
