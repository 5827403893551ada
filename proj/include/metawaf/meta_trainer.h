#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metawaf/rng.h"
#include "metawaf/seq2seq.h"

namespace metawaf {

/// Per-tensor boolean mask congruent with ModelParams.
struct ParamMask {
  std::array<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>, ModelParams::kTensorCount> tensors;

  /// false for every element of Ev, gen_w and gen_b; true elsewhere.
  static ParamMask outer_loop(const ModelParams& shape);
  static ParamMask all(const ModelParams& shape, bool value);
  bool congruent_with(const ModelParams& params) const;
};

struct MetaConfig {
  double inner_lr = 0.001;
  double outer_lr = 0.001;
  int inner_steps = 4;
  std::size_t token_batch = 4096;
  std::size_t max_meta_iters = 5000;
  /// Stop when the relative improvement between consecutive windows of the
  /// moving-average meta-loss falls below this.
  double tolerance = 1e-3;
  std::size_t loss_window = 50;
  /// Global L2 clip applied to each gradient before a step; 0 disables.
  double max_grad_norm = 0;
  std::uint64_t seed = 7;
};

/// A batch is a list of sequence indices into one domain's corpus.
using BatchIndices = std::vector<std::size_t>;

/// Greedily fills batches of whole sequences up to `token_budget` tokens.
std::vector<BatchIndices> token_batches(std::span<const std::vector<int>> corpus,
                                        std::span<const std::size_t> order, std::size_t token_budget);

class BatchSampler {
 public:
  virtual ~BatchSampler() = default;
  virtual BatchIndices next(std::size_t domain, std::span<const std::vector<int>> corpus) = 0;
};

/// Walks a shuffled permutation of each domain's corpus, reshuffling when
/// exhausted, so consecutive draws within a pass are disjoint.
class ShuffledTokenSampler : public BatchSampler {
 public:
  ShuffledTokenSampler(std::size_t token_budget, std::uint64_t seed) : budget_(token_budget), rng_(seed) {}
  BatchIndices next(std::size_t domain, std::span<const std::vector<int>> corpus) override;

 private:
  struct Cursor {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
  };
  std::size_t budget_;
  Rng rng_;
  std::map<std::size_t, Cursor> cursors_;
};

std::vector<std::vector<int>> gather(std::span<const std::vector<int>> corpus, const BatchIndices& indices);

/// theta' = theta - lr * grad on every tensor.
void sgd_step(ModelParams& params, const GradientSet& grad, double lr);

/// Scales `grad` in place so its global L2 norm is at most `max_norm`.
double clip_gradient(GradientSet& grad, double max_norm);

using GradientFn = std::function<GradientSet(const ModelParams&)>;

/// `steps` plain SGD steps theta <- theta - lr * grad_fn(theta).
ModelParams inner_update(const ModelParams& params, int steps, double lr, const GradientFn& grad_fn);

/// `inner_steps` plain SGD steps, each on a freshly sampled batch; every
/// tensor (Ev and generator included) is updated.
ModelParams inner_update(const ModelParams& params, const Seq2Seq& model, std::span<const std::vector<int>> corpus,
                         std::size_t domain, BatchSampler& sampler, const MetaConfig& config,
                         std::vector<BatchIndices>* used_batches = nullptr);

/// First-order meta-gradient: the loss gradient at the adapted parameters.
GradientSet meta_gradient(const ModelParams& adapted, const Seq2Seq& model,
                          std::span<const std::vector<int>> outer_batch, LossReport* loss = nullptr);

/// theta[i] -= lr * g[i] where mask[i]; untouched elsewhere. Throws
/// std::invalid_argument on a shape mismatch.
void masked_update(ModelParams& params, const GradientSet& grad, const ParamMask& mask, double lr);

/// Domain-specific tensors of one auxiliary domain.
struct DomainBank {
  Matrix Ev;
  Matrix gen_w;
  Matrix gen_b;
};

struct DomainCorpus {
  std::string domain_id;
  std::shared_ptr<const Seq2Seq> model;
  std::vector<std::vector<int>> sequences;
};

/// Meta-trained initialization: shared tensors plus per-domain banks.
struct UniversalModel {
  std::string base_domain;
  ModelParams shared;  // Ev / gen_w / gen_b left empty
  std::map<std::string, DomainBank> banks;
  std::vector<double> meta_loss;  // outer-batch mean loss per iteration
  std::size_t iterations = 0;
  bool converged = false;

  ModelParams assemble(const std::string& domain_id) const;
};

/// Everything a test needs to audit one meta-iteration.
struct MetaIterationTrace {
  std::size_t iteration = 0;
  std::size_t domain = 0;
  const ModelParams* snapshot = nullptr;   // theta_temp
  const ModelParams* adapted = nullptr;    // U(theta)
  const ModelParams* restored = nullptr;   // theta after restore, before the outer step
  const GradientSet* meta_grad = nullptr;
  const ModelParams* updated = nullptr;    // theta after the masked outer step
  const std::vector<BatchIndices>* inner_batches = nullptr;
  const BatchIndices* outer_batch = nullptr;
  double outer_loss = 0;
};

using MetaObserver = std::function<void(const MetaIterationTrace&)>;

struct MetaInit {
  Matrix A;
  Matrix E;
  std::string base_domain;
};

/// Trains the universal initial model over the auxiliary corpora. Each
/// iteration samples one domain, adapts a copy with inner SGD steps, takes
/// the gradient at the adapted parameters on an independent batch, restores
/// the snapshot, and applies the masked outer step.
UniversalModel train_universal(std::span<const DomainCorpus> domains, const MetaInit& init,
                               const Seq2SeqConfig& seq_config, const MetaConfig& config,
                               BatchSampler* sampler = nullptr, const MetaObserver& observer = {});

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Multiplies the learning rate every `decay_steps` steps, or after every
  /// pass over the corpus when decay_steps is 0.
  double decay = 0.95;
  std::size_t decay_steps = 0;
  std::size_t steps = 300;
  std::size_t token_batch = 4096;
  double max_grad_norm = 0;
  std::uint64_t seed = 11;
};

class Adam {
 public:
  Adam(const ModelParams& shape, const AdamConfig& config);
  void step(ModelParams& params, const GradientSet& grad, double lr);

 private:
  AdamConfig config_;
  ModelParams m_;
  ModelParams v_;
  std::size_t t_ = 0;
};

struct TrainingTrace {
  std::vector<double> batch_loss;  // mean per token
  std::size_t steps = 0;
};

/// Minimizes the reconstruction loss of all tensors with Adam for
/// `config.steps` steps, passing over a shuffled corpus repeatedly.
TrainingTrace train_adam(ModelParams& params, const Seq2Seq& model, std::span<const std::vector<int>> corpus,
                         const AdamConfig& config);

/// Target model: A, E and the recurrent weights copied from the universal
/// model, Ev zeroed, generator freshly drawn; then trained jointly.
ModelParams adapt_target(const UniversalModel& universal, const Seq2Seq& target_model,
                         std::span<const std::vector<int>> target_corpus, const Seq2SeqConfig& seq_config,
                         const AdamConfig& config, TrainingTrace* trace = nullptr);

/// The same target as adapt_target but starting from a random initialization.
ModelParams train_from_scratch(const MetaInit& init, const Seq2Seq& target_model,
                               std::span<const std::vector<int>> target_corpus, const Seq2SeqConfig& seq_config,
                               const AdamConfig& config, TrainingTrace* trace = nullptr);

}  // namespace metawaf
