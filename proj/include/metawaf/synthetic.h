#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metawaf/records.h"
#include "metawaf/rng.h"

namespace metawaf {

/// Knobs for the synthetic multi-domain benchmark. Domains 0..M-2 are
/// auxiliary, domain M-1 is the target.
struct SyntheticSpec {
  std::size_t domain_count = 4;
  /// Probability that a grammar token (path word, key, enum value, search
  /// word) is drawn from the pool shared by all domains.
  double overlap_fraction = 0.5;
  /// Every domain uses the grammar of domain 0 (ids still differ).
  bool shared_grammar = false;
  std::size_t endpoints_per_domain = 24;
  std::size_t auxiliary_train_requests = 50000;
  std::size_t target_train_requests = 500;
  std::size_t target_test_requests = 4000;
  /// Fraction of target test requests that are attacks.
  double attack_rate = 0.05;
  /// Fraction of target training requests replaced by attack records.
  double poison_ratio = 0.0;
  std::uint64_t seed = 1;
};

struct SyntheticDomain {
  std::string domain_id;
  bool is_target = false;
  std::vector<RequestRecord> train;
  std::vector<RequestRecord> test;  // empty for auxiliary domains
};

std::string synthetic_domain_id(std::size_t index, std::size_t domain_count);

/// Draws every corpus of the benchmark. Labels are set on all records.
/// Target test records never repeat a (method, url, body) of any training
/// split.
std::vector<SyntheticDomain> generate_synthetic(const SyntheticSpec& spec);

/// Grammar-driven request source for one domain; exposed for tests.
class DomainGrammar {
 public:
  DomainGrammar(std::size_t domain_index, const SyntheticSpec& spec);

  const std::string& domain_id() const { return domain_id_; }
  RequestRecord benign(Rng& rng) const;
  /// A benign request with one value (or a path segment) replaced by an
  /// injection payload.
  RequestRecord attack(Rng& rng) const;

  struct Param;
  struct Endpoint;

 private:
  std::string domain_id_;
  std::vector<Endpoint> endpoints_;
  std::vector<double> endpoint_weights_;
};

struct DomainGrammar::Param {
  enum class Kind { kEnum, kSmallInt, kNumber, kTimestamp, kHexId, kAlnumId, kText };
  std::string key;
  Kind kind = Kind::kEnum;
  std::vector<std::string> options;  // enum choices or text vocabulary
  std::size_t id_length = 8;
  double presence = 1.0;
};

struct DomainGrammar::Endpoint {
  std::vector<std::string> path;
  std::vector<Param> params;
  bool post = false;
};

/// True if no test record of any domain shares a (domain, method, url,
/// body) hash with a training record of any domain.
bool audit_no_label_leakage(const std::vector<SyntheticDomain>& domains);

}  // namespace metawaf
