#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metawaf/alignment.h"
#include "metawaf/rng.h"
#include "metawaf/tensor.h"

namespace metawaf {

/// Every learnable tensor of a detector for one domain: the multi-domain
/// representation (A, E, E^v), LSTM encoder and decoder, and the affine
/// generator over the domain vocabulary. Biases are single-column matrices.
///
/// Gate rows of the LSTM weights are stacked as [input, forget, cell, output].
struct ModelParams {
  Matrix A;
  Matrix E;
  Matrix Ev;
  Matrix enc_wx;
  Matrix enc_wh;
  Matrix enc_b;
  Matrix dec_wx;
  Matrix dec_wh;
  Matrix dec_b;
  Matrix gen_w;
  Matrix gen_b;

  static constexpr std::size_t kTensorCount = 11;
  using Member = Matrix ModelParams::*;
  static constexpr std::array<std::pair<std::string_view, Member>, kTensorCount> kTensors{{
      {"A", &ModelParams::A},
      {"E", &ModelParams::E},
      {"Ev", &ModelParams::Ev},
      {"enc_wx", &ModelParams::enc_wx},
      {"enc_wh", &ModelParams::enc_wh},
      {"enc_b", &ModelParams::enc_b},
      {"dec_wx", &ModelParams::dec_wx},
      {"dec_wh", &ModelParams::dec_wh},
      {"dec_b", &ModelParams::dec_b},
      {"gen_w", &ModelParams::gen_w},
      {"gen_b", &ModelParams::gen_b},
  }};

  template <typename F>
  void for_each(F&& f) {
    for (const auto& [name, member] : kTensors) f(name, this->*member);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& [name, member] : kTensors) f(name, this->*member);
  }

  int embed_dim() const { return static_cast<int>(E.cols()); }
  int hidden_dim() const { return static_cast<int>(enc_wh.cols()); }
  int vocab_size() const { return static_cast<int>(gen_w.rows()); }

  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
  bool congruent_with(const ModelParams& other) const;
  bool bitwise_equal(const ModelParams& other) const;
  RepresentationParams representation() const { return {A, E, Ev}; }
};

/// Gradient carrier: same tensors, same shapes.
using GradientSet = ModelParams;

struct Seq2SeqConfig {
  int embed_dim = 64;
  int hidden_dim = 64;
  std::size_t max_len = 128;
  double log_floor = 1e-12;
};

/// Fresh encoder/decoder weights, U(-1/sqrt(h), 1/sqrt(h)) with forget-gate
/// bias 1.
void init_recurrent(ModelParams& params, int embed_dim, int hidden_dim, Rng& rng);

/// Fresh generator for `vocab_size` outputs, U(-1/sqrt(h), 1/sqrt(h)),
/// zero bias.
void init_generator(ModelParams& params, int vocab_size, int hidden_dim, Rng& rng);

/// Complete randomly initialized model for one domain around the given
/// representation tables.
ModelParams init_model(const RepresentationParams& rep, int vocab_size, const Seq2SeqConfig& config,
                       Rng& rng);

struct BatchOutput {
  std::vector<double> sequence_nll;     // summed over positions
  std::vector<std::size_t> positions;   // |seq| + 1 per sequence after truncation
  double total_nll = 0;
  std::size_t total_positions = 0;
  /// Only filled when requested: per sequence, (|seq|+1) x |Q^v|.
  std::vector<Matrix> distributions;
  std::vector<std::string> warnings;

  double mean_nll() const {
    return total_positions == 0 ? 0.0 : total_nll / static_cast<double>(total_positions);
  }
};

/// Teacher-forced encoder-decoder over token-id sequences of one domain.
///
/// The encoder reads the sequence; its final state seeds the decoder, which
/// is fed `_bos_ x_1 ... x_n` and predicts `x_1 ... x_n _eos_`.
class Seq2Seq {
 public:
  Seq2Seq(const DomainGeometry& geometry, Seq2SeqConfig config);

  /// Loss only (and distributions when `keep_distributions`).
  BatchOutput run(const ModelParams& params, std::span<const std::vector<int>> batch,
                  bool keep_distributions = false) const;

  /// Loss plus exact gradients of the summed loss, accumulated into `grad`
  /// (which must be congruent with `params`; it is overwritten).
  BatchOutput run_with_gradient(const ModelParams& params, std::span<const std::vector<int>> batch,
                                GradientSet& grad) const;

  const DomainGeometry& geometry() const { return geometry_; }
  const Seq2SeqConfig& config() const { return config_; }

 private:
  BatchOutput evaluate(const ModelParams& params, std::span<const std::vector<int>> batch,
                       bool keep_distributions, GradientSet* grad) const;

  DomainGeometry geometry_;
  Seq2SeqConfig config_;
};

/// Per-position distributions for one sequence (|seq| + 1 rows).
std::vector<Vector> forward(const Seq2Seq& model, const ModelParams& params, const std::vector<int>& seq,
                            std::vector<std::string>* warnings = nullptr);

struct LossReport {
  double sum = 0;
  double mean_per_token = 0;
  std::size_t positions = 0;
  std::vector<std::string> warnings;
};

/// Negative log-likelihood summed over sequences and positions. Throws on an
/// empty batch.
LossReport reconstruction_loss(const Seq2Seq& model, const ModelParams& params,
                               std::span<const std::vector<int>> batch);

/// Gradient of reconstruction_loss's sum with respect to every tensor.
/// Throws std::invalid_argument on an empty batch and std::runtime_error
/// naming the tensor when a gradient is not finite.
GradientSet backward(const Seq2Seq& model, const ModelParams& params,
                     std::span<const std::vector<int>> batch, LossReport* loss = nullptr);

}  // namespace metawaf
