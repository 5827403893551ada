#include <doctest.h>

#include <cmath>
#include <set>

#include "metawaf/merging.h"
#include "metawaf/synthetic.h"

using namespace metawaf;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.auxiliary_train_requests = 2000;
  s.target_train_requests = 500;
  s.target_test_requests = 1000;
  return s;
}

std::size_t attacks(const std::vector<RequestRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.is_attack.value() ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("corpus shape and labels") {
  auto spec = small_spec();
  auto domains = generate_synthetic(spec);
  REQUIRE(domains.size() == 4);
  for (std::size_t i = 0; i + 1 < domains.size(); ++i) {
    CHECK_FALSE(domains[i].is_target);
    CHECK(domains[i].train.size() == 2000);
    CHECK(domains[i].test.empty());
    CHECK(attacks(domains[i].train) == 0);
  }
  const auto& target = domains.back();
  CHECK(target.is_target);
  CHECK(target.train.size() == 500);
  CHECK(target.test.size() == 1000);
  CHECK(attacks(target.train) == 0);
  for (const auto& d : domains) {
    CHECK(d.domain_id == domains[&d - &domains[0]].train.front().request.domain_id);
    for (const auto& r : d.train) CHECK(r.request.url.front() == '/');
  }
}

TEST_CASE("no attacks means all benign labels") {
  auto spec = small_spec();
  spec.attack_rate = 0;
  spec.poison_ratio = 0;
  auto domains = generate_synthetic(spec);
  CHECK(attacks(domains.back().test) == 0);
}

TEST_CASE("attack rate matches its binomial expectation") {
  auto spec = small_spec();
  spec.auxiliary_train_requests = 10;
  spec.attack_rate = 0.01;
  spec.target_test_requests = 10000;
  auto n = static_cast<double>(attacks(generate_synthetic(spec).back().test));
  // 100 expected, standard deviation ~9.95; allow four of them.
  CHECK(std::abs(n - 100.0) <= 40.0);
}

TEST_CASE("poison ratio places attack records in the target training split") {
  auto spec = small_spec();
  spec.poison_ratio = 0.01;
  auto domains = generate_synthetic(spec);
  CHECK(attacks(domains.back().train) == 5);
  for (std::size_t i = 0; i + 1 < domains.size(); ++i) CHECK(attacks(domains[i].train) == 0);
}

TEST_CASE("identical grammars with full overlap give equal token sets") {
  auto spec = small_spec();
  spec.overlap_fraction = 1.0;
  spec.shared_grammar = true;
  // Large enough that no grammar token sits near the frequency cut-offs.
  spec.auxiliary_train_requests = 20000;
  spec.target_train_requests = 20000;
  std::set<std::string> first;
  for (const auto& d : generate_synthetic(spec)) {
    std::vector<ParsedRequest> parsed;
    for (const auto& r : d.train) parsed.push_back(parse_request(r.request));
    auto s = build_strategy(parsed, StrategyConfig{}, d.domain_id);
    if (first.empty()) first = s.token_set;
    CHECK(s.token_set == first);
  }
}

TEST_CASE("overlap fraction controls shared tokens") {
  auto token_overlap = [](double fraction) {
    auto spec = small_spec();
    spec.overlap_fraction = fraction;
    std::vector<std::set<std::string>> sets;
    for (const auto& d : generate_synthetic(spec)) {
      std::vector<ParsedRequest> parsed;
      for (const auto& r : d.train) parsed.push_back(parse_request(r.request));
      sets.push_back(build_strategy(parsed, StrategyConfig{}, d.domain_id).token_set);
    }
    std::size_t shared = 0;
    for (const auto& t : sets[0]) shared += sets[1].contains(t) ? 1 : 0;
    return shared;
  };
  CHECK(token_overlap(0.9) > token_overlap(0.1));
}

TEST_CASE("generation is seeded and test records never leak") {
  auto spec = small_spec();
  auto a = generate_synthetic(spec);
  auto b = generate_synthetic(spec);
  CHECK(a.back().test == b.back().test);
  CHECK(a[0].train == b[0].train);
  spec.seed = 2;
  CHECK_FALSE(generate_synthetic(spec)[0].train == a[0].train);
  CHECK(audit_no_label_leakage(a));

  auto leaky = a;
  leaky.back().test.push_back(leaky.back().train.front());
  CHECK_FALSE(audit_no_label_leakage(leaky));
}

TEST_CASE("invalid specs are rejected") {
  auto spec = small_spec();
  spec.attack_rate = 1.5;
  CHECK_THROWS(generate_synthetic(spec));
  spec = small_spec();
  spec.overlap_fraction = -0.1;
  CHECK_THROWS(generate_synthetic(spec));
}
