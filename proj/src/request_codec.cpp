#include "metawaf/request_codec.h"

#include <cctype>
#include <stdexcept>

namespace metawaf {
namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view strip_scheme_and_host(std::string_view url) {
  auto scheme = url.find("://");
  if (scheme != std::string_view::npos && url.find('/') > scheme) {
    url.remove_prefix(scheme + 3);
    auto slash = url.find('/');
    if (slash == std::string_view::npos) return {};
    url.remove_prefix(slash);
  }
  return url;
}

bool body_is_form(const RawRequest& raw) {
  if (raw.body.empty()) return false;
  if (raw.content_type.empty()) return true;
  return to_lower_ascii(raw.content_type).find("application/x-www-form-urlencoded") !=
         std::string::npos;
}

void parse_pairs(std::string_view text, ParsedRequest& out) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto amp = text.find('&', pos);
    if (amp == std::string_view::npos) amp = text.size();
    std::string_view piece = text.substr(pos, amp - pos);
    pos = amp + 1;
    if (piece.empty()) {
      if (amp == text.size()) break;
      continue;
    }
    std::string_view raw_key = piece;
    std::string_view raw_value;
    if (auto eq = piece.find('='); eq != std::string_view::npos) {
      raw_key = piece.substr(0, eq);
      raw_value = piece.substr(eq + 1);
    }
    std::string key;
    std::string value;
    if (!percent_decode(raw_key, key, true)) {
      out.warnings.push_back("malformed percent-escape in key: " + std::string(raw_key));
    }
    if (!percent_decode(raw_value, value, true)) {
      out.warnings.push_back("malformed percent-escape in value: " + std::string(raw_value));
    }
    out.pairs.push_back({to_lower_ascii(key), to_lower_ascii(value)});
    if (amp == text.size()) break;
  }
}

}  // namespace

bool percent_decode(std::string_view in, std::string& out, bool plus_as_space) {
  out.clear();
  out.reserve(in.size());
  bool ok = true;
  for (std::size_t i = 0; i < in.size(); ++i) {
    char c = in[i];
    if (c == '%') {
      if (i + 2 < in.size()) {
        int hi = hex_value(in[i + 1]);
        int lo = hex_value(in[i + 2]);
        if (hi >= 0 && lo >= 0) {
          out.push_back(static_cast<char>(hi * 16 + lo));
          i += 2;
          continue;
        }
      }
      ok = false;
      out.push_back(c);
    } else if (c == '+' && plus_as_space) {
      out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  return ok;
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool is_token_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

bool is_placeholder_form(std::string_view token) {
  return token.size() >= 2 && token.front() == '_' && token.back() == '_';
}

std::vector<std::string> split_fragment(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char raw : text) {
    char c = (raw >= 'A' && raw <= 'Z') ? static_cast<char>(raw - 'A' + 'a') : raw;
    if (is_token_char(c)) {
      current.push_back(c);
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<std::string> split_raw_fragment(std::string_view text) {
  auto out = split_fragment(text);
  for (auto& token : out) {
    if (is_placeholder_form(token)) token += kEscapeSuffix;
  }
  return out;
}

ParsedRequest parse_request(const RawRequest& raw) {
  if (raw.url.empty()) throw std::invalid_argument("parse_request: empty url");
  ParsedRequest out;

  std::string_view url = strip_scheme_and_host(raw.url);
  if (auto hash = url.find('#'); hash != std::string_view::npos) url = url.substr(0, hash);

  std::string_view path = url;
  std::string_view query;
  if (auto q = url.find('?'); q != std::string_view::npos) {
    path = url.substr(0, q);
    query = url.substr(q + 1);
  }

  std::string decoded_path;
  if (!percent_decode(path, decoded_path, false)) {
    out.warnings.push_back("malformed percent-escape in path: " + std::string(path));
  }
  std::string segment;
  for (char c : decoded_path) {
    if (c == '/' || is_space(c)) {
      if (!segment.empty()) out.path_segments.push_back(to_lower_ascii(segment));
      segment.clear();
    } else {
      segment.push_back(c);
    }
  }
  if (!segment.empty()) out.path_segments.push_back(to_lower_ascii(segment));

  parse_pairs(query, out);
  if (body_is_form(raw)) parse_pairs(raw.body, out);
  return out;
}

std::vector<TaggedToken> tokenize_tagged(const ParsedRequest& parsed) {
  std::vector<TaggedToken> out;
  for (const auto& segment : parsed.path_segments) {
    for (auto& t : split_raw_fragment(segment)) out.push_back({std::move(t), TokenRole::kPath, -1});
  }
  for (std::size_t i = 0; i < parsed.pairs.size(); ++i) {
    const int index = static_cast<int>(i);
    for (auto& t : split_raw_fragment(parsed.pairs[i].key)) {
      out.push_back({std::move(t), TokenRole::kKey, index});
    }
    for (auto& t : split_raw_fragment(parsed.pairs[i].value)) {
      out.push_back({std::move(t), TokenRole::kValue, index});
    }
  }
  return out;
}

TokenSequence tokenize(const ParsedRequest& parsed, std::string domain_id) {
  TokenSequence seq{std::move(domain_id), {}};
  for (auto& t : tokenize_tagged(parsed)) seq.tokens.push_back(std::move(t.text));
  return seq;
}

}  // namespace metawaf
