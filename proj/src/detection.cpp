#include "metawaf/detection.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metawaf/hashing.h"

namespace metawaf {

std::string_view verdict_name(Verdict v) { return v == Verdict::kAttack ? "attack" : "benign"; }

TokenSequence merged_sequence(const Detector& detector, const RawRequest& raw) {
  TokenSequence seq = apply_strategy(detector.strategy, parse_request(raw));
  seq.domain_id = raw.domain_id;
  return seq;
}

std::vector<double> score_sequences(const Seq2Seq& model, const ModelParams& params,
                                    std::span<const std::vector<int>> sequences, std::size_t batch_size) {
  std::vector<double> scores;
  scores.reserve(sequences.size());
  for (std::size_t begin = 0; begin < sequences.size(); begin += batch_size) {
    const auto chunk = sequences.subspan(begin, std::min(batch_size, sequences.size() - begin));
    const BatchOutput out = model.run(params, chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      scores.push_back(out.sequence_nll[i] / static_cast<double>(out.positions[i]));
    }
  }
  return scores;
}

namespace {

DetectionResult result_for(const Detector& detector, std::uint64_t hash, double s) {
  return {hash, s, detector.threshold, s > detector.threshold ? Verdict::kAttack : Verdict::kBenign, false};
}

}  // namespace

DetectionResult score(const Detector& detector, const RawRequest& raw) {
  const TokenSequence seq = merged_sequence(detector, raw);
  const std::vector<std::vector<int>> ids{detector.model->geometry().vocab.encode(seq.tokens)};
  const double s = score_sequences(*detector.model, detector.params, ids).front();
  return result_for(detector, sequence_hash(seq.tokens), s);
}

double calibrate_threshold(std::vector<double> benign_scores, double q) {
  if (benign_scores.empty()) throw std::invalid_argument("calibrate_threshold: no scores");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("calibrate_threshold: q must be in (0, 1)");
  std::sort(benign_scores.begin(), benign_scores.end());
  const double pos = q * static_cast<double>(benign_scores.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, benign_scores.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return benign_scores[lo] + frac * (benign_scores[hi] - benign_scores[lo]);
}

ScoreCache::ScoreCache(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("cache capacity must be positive");
}

std::optional<DetectionResult> ScoreCache::lookup(std::uint64_t hash) {
  std::lock_guard lock(mutex_);
  auto it = index_.find(hash);
  if (it == index_.end()) return std::nullopt;
  order_.splice(order_.begin(), order_, it->second);
  return it->second->second;
}

void ScoreCache::insert(const DetectionResult& result) {
  std::lock_guard lock(mutex_);
  if (auto it = index_.find(result.sequence_hash); it != index_.end()) {
    it->second->second = result;
    order_.splice(order_.begin(), order_, it->second);
    return;
  }
  order_.emplace_front(result.sequence_hash, result);
  index_.emplace(result.sequence_hash, order_.begin());
  if (order_.size() > capacity_) {
    index_.erase(order_.back().first);
    order_.pop_back();
  }
}

std::size_t ScoreCache::size() const {
  std::lock_guard lock(mutex_);
  return order_.size();
}

std::vector<DetectionResult> detect_stream(const Detector& detector, ScoreCache* cache,
                                           std::span<const RawRequest> requests, StreamStats* stats) {
  std::vector<DetectionResult> results;
  results.reserve(requests.size());
  StreamStats local;
  for (const auto& raw : requests) {
    ++local.requests;
    const TokenSequence seq = merged_sequence(detector, raw);
    const std::uint64_t hash = sequence_hash(seq.tokens);
    if (cache) {
      if (auto hit = cache->lookup(hash)) {
        hit->cache_hit = true;
        results.push_back(*hit);
        ++local.cache_hits;
        continue;
      }
    }
    const std::vector<std::vector<int>> ids{detector.model->geometry().vocab.encode(seq.tokens)};
    const double s = score_sequences(*detector.model, detector.params, ids).front();
    ++local.model_calls;
    DetectionResult r = result_for(detector, hash, s);
    if (cache) cache->insert(r);
    results.push_back(r);
  }
  if (stats) *stats = local;
  return results;
}

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  MetricsReport m{tp, fp, fn, tn};
  if (tp + fp == 0) {
    m.precision_undefined = true;
  } else {
    m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn == 0) {
    m.recall_undefined = true;
  } else {
    m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

MetricsReport evaluate(std::span<const DetectionResult> results, std::span<const bool> labels) {
  if (results.size() != labels.size()) throw std::invalid_argument("evaluate: results and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const bool predicted = results[i].verdict == Verdict::kAttack;
    if (predicted && labels[i]) ++tp;
    else if (predicted) ++fp;
    else if (labels[i]) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

}  // namespace metawaf
