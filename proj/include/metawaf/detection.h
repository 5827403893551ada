#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "metawaf/merging.h"
#include "metawaf/request_codec.h"
#include "metawaf/seq2seq.h"

namespace metawaf {

enum class Verdict { kBenign, kAttack };

std::string_view verdict_name(Verdict v);

struct DetectionResult {
  std::uint64_t sequence_hash = 0;
  double score = 0;  // mean negative log-likelihood, nats per position
  double threshold = 0;
  Verdict verdict = Verdict::kBenign;
  bool cache_hit = false;

  bool operator==(const DetectionResult&) const = default;
};

/// Everything needed to score requests of one domain.
struct Detector {
  MergingStrategy strategy;
  std::shared_ptr<const Seq2Seq> model;
  ModelParams params;
  double threshold = 0;
};

/// The merged token sequence a detector scores for `raw`.
TokenSequence merged_sequence(const Detector& detector, const RawRequest& raw);

/// Mean NLL of merged sequences, batched for throughput.
std::vector<double> score_sequences(const Seq2Seq& model, const ModelParams& params,
                                    std::span<const std::vector<int>> sequences, std::size_t batch_size = 256);

/// parse -> tokenize -> merge -> reconstruct; verdict is attack iff
/// score > threshold.
DetectionResult score(const Detector& detector, const RawRequest& raw);

/// Empirical q-quantile with linear interpolation between order statistics
/// (position q * (n - 1)).
double calibrate_threshold(std::vector<double> benign_scores, double q);

/// Least-recently-used map from sequence hash to a stored result. All
/// operations lock one mutex; concurrent misses on the same hash may both
/// compute and the last insert wins.
class ScoreCache {
 public:
  explicit ScoreCache(std::size_t capacity = std::size_t{1} << 20);

  std::optional<DetectionResult> lookup(std::uint64_t hash);
  void insert(const DetectionResult& result);
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  std::string_view eviction_policy() const { return "lru"; }

 private:
  using Entry = std::pair<std::uint64_t, DetectionResult>;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<Entry> order_;  // front = most recent
  std::unordered_map<std::uint64_t, std::list<Entry>::iterator> index_;
};

struct StreamStats {
  std::size_t requests = 0;
  std::size_t model_calls = 0;
  std::size_t cache_hits = 0;
};

/// Scores requests in order, consulting the cache by merged-sequence hash.
/// A null cache disables caching.
std::vector<DetectionResult> detect_stream(const Detector& detector, ScoreCache* cache,
                                           std::span<const RawRequest> requests, StreamStats* stats = nullptr);

struct MetricsReport {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  /// Set when there were no predicted positives (precision reported as 0).
  bool precision_undefined = false;
  /// Set when there were no actual positives (recall reported as 0).
  bool recall_undefined = false;

  bool operator==(const MetricsReport&) const = default;
};

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);

/// `labels[i]` is true for attacks. Throws std::invalid_argument on a length
/// mismatch.
MetricsReport evaluate(std::span<const DetectionResult> results, std::span<const bool> labels);

}  // namespace metawaf
