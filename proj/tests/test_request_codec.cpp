#include <doctest.h>

#include "metawaf/request_codec.h"

using namespace metawaf;

namespace {

ParsedRequest parse_url(const std::string& url, const std::string& body = {}) {
  return parse_request(RawRequest{"d", "GET", url, body, {}});
}

}  // namespace

TEST_CASE("parse splits path and query in source order") {
  auto p = parse_url("/send?xxxx_code=8&bids=176&yyyyyy_code=186");
  CHECK(p.path_segments == std::vector<std::string>{"send"});
  CHECK(p.pairs == std::vector<KeyValue>{{"xxxx_code", "8"}, {"bids", "176"}, {"yyyyyy_code", "186"}});
  CHECK(p.warnings.empty());
}

TEST_CASE("parse percent-decodes and lowercases") {
  CHECK(parse_url("/a?q=%7B").pairs == std::vector<KeyValue>{{"q", "{"}});
  auto p = parse_url("/A/B?K=V");
  CHECK(p.path_segments == std::vector<std::string>{"a", "b"});
  CHECK(p.pairs == std::vector<KeyValue>{{"k", "v"}});
  // Decoding happens before lowercasing: %4A is 'J'.
  CHECK(parse_url("/x?k=%4A").pairs[0].value == "j");
}

TEST_CASE("percent-decoding happens exactly once") {
  CHECK(parse_url("/a?q=%2520").pairs[0].value == "%20");
  std::string out;
  CHECK(percent_decode("%2520", out, false));
  CHECK(out == "%20");
}

TEST_CASE("malformed escapes pass through with a warning") {
  auto p = parse_url("/a?q=%G1&r=%4");
  CHECK(p.pairs[0].value == "%g1");
  CHECK(p.pairs[1].value == "%4");
  CHECK(p.warnings.size() == 2);
}

TEST_CASE("query pair edge cases") {
  auto p = parse_url("/a?flag&k=a=b&&x=");
  CHECK(p.pairs == std::vector<KeyValue>{{"flag", ""}, {"k", "a=b"}, {"x", ""}});
  // Duplicate keys keep every occurrence.
  CHECK(parse_url("/a?k=1&k=2").pairs.size() == 2);
  CHECK(parse_url("/a?k=a+b").pairs[0].value == "a b");
}

TEST_CASE("form body pairs follow query pairs") {
  auto p = parse_url("/login?next=home", "user=Bob&pw=x");
  CHECK(p.pairs == std::vector<KeyValue>{{"next", "home"}, {"user", "bob"}, {"pw", "x"}});
  RawRequest json_body{"d", "POST", "/api", "{\"a\":1}", "application/json"};
  CHECK(parse_request(json_body).pairs.empty());
}

TEST_CASE("scheme and host are stripped") {
  auto p = parse_url("http://example.com/Shop/Item?id=3");
  CHECK(p.path_segments == std::vector<std::string>{"shop", "item"});
  CHECK_THROWS(parse_url(""));
}

TEST_CASE("segments carry no slash or whitespace") {
  auto p = parse_url("/a%20b//c%2Fd");
  for (const auto& s : p.path_segments) {
    CHECK(s.find('/') == std::string::npos);
    CHECK(s.find(' ') == std::string::npos);
  }
  CHECK(p.path_segments == std::vector<std::string>{"a", "b", "c", "d"});
}

TEST_CASE("tokenize interleaves keys and values") {
  ParsedRequest p{{"send"}, {{"xxxx_code", "8"}, {"bids", "176"}}, {}};
  CHECK(tokenize(p).tokens == std::vector<std::string>{"send", "xxxx_code", "8", "bids", "176"});

  ParsedRequest q{{}, {{"a.b", "c-d"}}, {}};
  CHECK(tokenize(q).tokens == std::vector<std::string>{"a", "b", "c", "d"});

  ParsedRequest r{{"watch_record_new", "callback"}, {{"k", "v"}}, {}};
  auto t = tokenize(r).tokens;
  CHECK(t[0] == "watch_record_new");
  CHECK(t[1] == "callback");
}

TEST_CASE("tokenization is idempotent") {
  auto seq = tokenize(parse_url("/Path/To.html?Q=Hello%20World!&id=12-ab"));
  for (const auto& token : seq.tokens) {
    CHECK(split_fragment(token) == std::vector<std::string>{token});
    for (char c : token) CHECK(is_token_char(c));
  }
}

TEST_CASE("tokens keep source order") {
  auto tagged = tokenize_tagged(parse_url("/p1/p2?k1=v1&k2=v2"));
  std::vector<std::string> texts;
  for (const auto& t : tagged) texts.push_back(t.text);
  CHECK(texts == std::vector<std::string>{"p1", "p2", "k1", "v1", "k2", "v2"});
  CHECK(tagged[0].role == TokenRole::kPath);
  CHECK(tagged[2].role == TokenRole::kKey);
  CHECK(tagged[3].role == TokenRole::kValue);
  CHECK(tagged[5].pair_index == 1);
}

TEST_CASE("raw tokens never collide with placeholders") {
  auto seq = tokenize(parse_url("/a?k=_num_"));
  CHECK(seq.tokens.back() == "_num_lit");
  CHECK(is_placeholder_form("_other_"));
  CHECK_FALSE(is_placeholder_form("_num_lit"));
}
