#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "metawaf/alignment.h"
#include "metawaf/rng.h"
#include "metawaf/seq2seq.h"

namespace metawaf::testing {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

/// Orthogonal factor of a random square matrix (may be a reflection).
inline Matrix random_orthogonal(Rng& rng, int d) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, d, d));
  return qr.householderQ() * Matrix::Identity(d, d);
}

inline std::vector<std::string> numbered_tokens(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04d", prefix.c_str(), i);
    out.emplace_back(buf);
  }
  return out;
}

/// Row-normalized random embedding over sorted numbered tokens.
inline EmbeddingMatrix random_embedding(Rng& rng, const std::string& domain, int n, int d) {
  EmbeddingMatrix m;
  m.domain_id = domain;
  m.vocab = numbered_tokens("t", n);
  m.vectors = random_matrix(rng, n, d);
  return normalize_rows(m);
}

/// Small model of one domain for gradient and meta-loop checks: `vocab`
/// tokens (two of them the sequence markers), base vocabulary of `base`
/// rows, d_pre `p`, and d = h = `dim`.
struct ToyModel {
  DomainGeometry geometry;
  Seq2SeqConfig config;
  ModelParams params;

  Seq2Seq model() const { return Seq2Seq(geometry, config); }
};

inline ToyModel toy_model(std::uint64_t seed, int vocab = 20, int base = 7, int p = 4, int dim = 8) {
  Rng rng(seed);
  auto tokens = numbered_tokens("t", vocab - 2);
  tokens.emplace_back("_bos_");
  tokens.emplace_back("_eos_");
  ToyModel toy{DomainGeometry{"toy", Vocabulary::from_tokens(tokens), random_matrix(rng, vocab, p),
                              random_matrix(rng, base, p)},
               Seq2SeqConfig{dim, dim, 128, 1e-12},
               {}};
  RepresentationParams rep{Matrix::Identity(p, p) + 0.1 * random_matrix(rng, p, p), random_matrix(rng, base, dim),
                           0.3 * random_matrix(rng, vocab, dim)};
  toy.params = init_model(rep, vocab, toy.config, rng);
  toy.params.gen_b = random_matrix(rng, vocab, 1);
  return toy;
}

/// Random corpus of token ids that avoids the marker ids.
inline std::vector<std::vector<int>> toy_corpus(std::uint64_t seed, const Vocabulary& vocab, std::size_t count,
                                                std::size_t max_len) {
  Rng rng(seed);
  std::vector<int> ids;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (static_cast<int>(i) != vocab.bos() && static_cast<int>(i) != vocab.eos()) ids.push_back(static_cast<int>(i));
  }
  std::vector<std::vector<int>> corpus(count);
  for (auto& seq : corpus) {
    const std::size_t n = 1 + rng.below(max_len);
    for (std::size_t j = 0; j < n; ++j) seq.push_back(ids[rng.below(ids.size())]);
  }
  return corpus;
}

}  // namespace metawaf::testing
