#include "metawaf/skipgram.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metawaf/rng.h"

namespace metawaf {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

/// Cumulative unigram^power distribution for negative draws.
class NegativeTable {
 public:
  NegativeTable(std::span<const std::vector<int>> sequences, std::size_t vocab_size, double power) {
    std::vector<double> counts(vocab_size, 0.0);
    for (const auto& seq : sequences) {
      for (int id : seq) counts[static_cast<std::size_t>(id)] += 1.0;
    }
    cumulative_.resize(vocab_size);
    double acc = 0;
    for (std::size_t i = 0; i < vocab_size; ++i) {
      acc += counts[i] > 0 ? std::pow(counts[i], power) : 0.0;
      cumulative_[i] = acc;
    }
    total_ = acc;
  }

  bool empty() const { return total_ <= 0; }

  int draw(Rng& rng) const {
    const double u = rng.uniform() * total_;
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return static_cast<int>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
  double total_ = 0;
};

std::span<const std::vector<int>> limit(std::span<const std::vector<int>> sequences, std::size_t max) {
  if (max == 0 || sequences.size() <= max) return sequences;
  return sequences.first(max);
}

}  // namespace

int EmbeddingMatrix::row_of(const std::string& token) const {
  auto it = std::lower_bound(vocab.begin(), vocab.end(), token);
  if (it == vocab.end() || *it != token) return -1;
  return static_cast<int>(it - vocab.begin());
}

SkipGramModel init_skipgram(const Vocabulary& vocab, const SkipGramConfig& config) {
  if (config.dim < 2) throw std::invalid_argument("skip-gram dimension must be >= 2");
  SkipGramModel model{vocab, RowMatrix(vocab.size(), config.dim), RowMatrix::Zero(vocab.size(), config.dim)};
  Rng rng(config.seed);
  const double scale = 0.5 / config.dim;
  for (Eigen::Index r = 0; r < model.input.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.input.cols(); ++c) model.input(r, c) = rng.uniform(-scale, scale);
  }
  return model;
}

void fit_skipgram(SkipGramModel& model, std::span<const std::vector<int>> all_sequences,
                  const SkipGramConfig& config) {
  const auto sequences = limit(all_sequences, config.max_sequences);
  const NegativeTable negatives(sequences, model.vocab.size(), config.negative_power);
  if (negatives.empty()) return;

  std::size_t total_tokens = 0;
  for (const auto& s : sequences) total_tokens += s.size();
  const double total_work = static_cast<double>(total_tokens) * std::max(config.epochs, 1);

  Rng rng(config.seed ^ 0x5c0ffee5ULL);
  const Eigen::Index dim = model.input.cols();
  Eigen::VectorXd grad_center(dim);
  double processed = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& seq : sequences) {
      const int n = static_cast<int>(seq.size());
      for (int pos = 0; pos < n; ++pos, processed += 1) {
        const double lr = std::max(config.min_learning_rate,
                                   config.learning_rate * (1.0 - processed / total_work));
        const int center = seq[static_cast<std::size_t>(pos)];
        auto center_row = model.input.row(center);
        const int lo = std::max(0, pos - config.window);
        const int hi = std::min(n - 1, pos + config.window);
        for (int ctx = lo; ctx <= hi; ++ctx) {
          if (ctx == pos) continue;
          grad_center.setZero();
          for (int k = 0; k <= config.negatives; ++k) {
            int target;
            double label;
            if (k == 0) {
              target = seq[static_cast<std::size_t>(ctx)];
              label = 1.0;
            } else {
              target = negatives.draw(rng);
              if (target == seq[static_cast<std::size_t>(ctx)]) continue;
              label = 0.0;
            }
            auto target_row = model.context.row(target);
            const double g = lr * (label - sigmoid(center_row.dot(target_row)));
            grad_center += g * target_row.transpose();
            target_row += g * center_row;
          }
          center_row += grad_center.transpose();
        }
      }
    }
  }
}

double skipgram_loss(const SkipGramModel& model, std::span<const std::vector<int>> all_sequences,
                     const SkipGramConfig& config, std::uint64_t eval_seed) {
  const auto sequences = limit(all_sequences, config.max_sequences);
  const NegativeTable negatives(sequences, model.vocab.size(), config.negative_power);
  if (negatives.empty()) return 0.0;
  Rng rng(eval_seed);
  double loss = 0;
  std::size_t pairs = 0;
  for (const auto& seq : sequences) {
    const int n = static_cast<int>(seq.size());
    for (int pos = 0; pos < n; ++pos) {
      const auto center_row = model.input.row(seq[static_cast<std::size_t>(pos)]);
      for (int ctx = std::max(0, pos - config.window); ctx <= std::min(n - 1, pos + config.window); ++ctx) {
        if (ctx == pos) continue;
        loss -= log_sigmoid(center_row.dot(model.context.row(seq[static_cast<std::size_t>(ctx)])));
        for (int k = 0; k < config.negatives; ++k) {
          loss -= log_sigmoid(-center_row.dot(model.context.row(negatives.draw(rng))));
        }
        ++pairs;
      }
    }
  }
  return pairs == 0 ? 0.0 : loss / static_cast<double>(pairs);
}

EmbeddingMatrix train_skipgram(std::span<const std::vector<std::string>> sequences,
                               const Vocabulary& vocab, const SkipGramConfig& config,
                               std::string domain_id) {
  std::vector<std::vector<int>> encoded;
  encoded.reserve(sequences.size());
  for (const auto& s : sequences) {
    if (!s.empty()) encoded.push_back(vocab.encode(s));
  }
  if (encoded.empty()) throw std::invalid_argument("empty training corpus");

  SkipGramModel model = init_skipgram(vocab, config);
  fit_skipgram(model, encoded, config);

  EmbeddingMatrix out;
  out.domain_id = std::move(domain_id);
  out.vocab = vocab.tokens();
  out.vectors = model.input;
  return out;
}

EmbeddingMatrix normalize_rows(EmbeddingMatrix m) {
  m.degenerate_rows.clear();
  for (Eigen::Index r = 0; r < m.vectors.rows(); ++r) {
    const double norm = m.vectors.row(r).norm();
    if (norm == 0.0 || !std::isfinite(norm)) {
      m.vectors.row(r).setZero();
      if (m.vectors.cols() > 0) m.vectors(r, 0) = 1.0;
      m.degenerate_rows.push_back(static_cast<int>(r));
    } else {
      m.vectors.row(r) /= norm;
    }
  }
  m.normalized = true;
  return m;
}

}  // namespace metawaf
