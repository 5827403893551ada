#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metawaf/tensor.h"
#include "metawaf/vocabulary.h"

namespace metawaf {

/// Preliminary token vectors of one domain, one row per vocabulary entry.
struct EmbeddingMatrix {
  std::string domain_id;
  std::vector<std::string> vocab;
  Matrix vectors;  // |vocab| x d_pre
  bool normalized = false;
  /// Rows that were all-zero when normalized and were replaced by e1.
  std::vector<int> degenerate_rows;

  int dim() const { return static_cast<int>(vectors.cols()); }
  int row_of(const std::string& token) const;
};

struct SkipGramConfig {
  int dim = 64;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  double min_learning_rate = 1e-4;
  double negative_power = 0.75;
  /// Train on at most this many sequences (0 = all), taken in corpus order.
  std::size_t max_sequences = 0;
  std::uint64_t seed = 1;
};

/// Input and context tables of a skip-gram negative-sampling model.
struct SkipGramModel {
  Vocabulary vocab;
  RowMatrix input;    // the embedding
  RowMatrix context;  // output vectors
};

SkipGramModel init_skipgram(const Vocabulary& vocab, const SkipGramConfig& config);

/// Runs SGNS epochs over `sequences` (already encoded against model.vocab),
/// updating `model` in place. Deterministic for a given seed.
void fit_skipgram(SkipGramModel& model, std::span<const std::vector<int>> sequences,
                  const SkipGramConfig& config);

/// Mean negative-sampling loss over every (center, context) pair with a fixed
/// set of negatives drawn from `eval_seed`.
double skipgram_loss(const SkipGramModel& model, std::span<const std::vector<int>> sequences,
                     const SkipGramConfig& config, std::uint64_t eval_seed);

/// Trains preliminary embeddings. Every token of every sequence must be in
/// `vocab`. Throws std::invalid_argument("empty training corpus") when there
/// is nothing to train on.
EmbeddingMatrix train_skipgram(std::span<const std::vector<std::string>> sequences,
                               const Vocabulary& vocab, const SkipGramConfig& config,
                               std::string domain_id = {});

/// Scales each row to unit L2 norm. Zero rows become e1 and are listed in
/// degenerate_rows.
EmbeddingMatrix normalize_rows(EmbeddingMatrix m);

}  // namespace metawaf
