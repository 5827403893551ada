#include "metawaf/meta_trainer.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace metawaf {
namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

double window_mean(const std::vector<double>& xs, std::size_t end, std::size_t window) {
  const std::size_t begin = end - window;
  return std::accumulate(xs.begin() + static_cast<std::ptrdiff_t>(begin),
                         xs.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
         static_cast<double>(window);
}

void maybe_clip(GradientSet& grad, double max_norm) {
  if (max_norm > 0) clip_gradient(grad, max_norm);
}

}  // namespace

ParamMask ParamMask::all(const ModelParams& shape, bool value) {
  ParamMask mask;
  std::size_t i = 0;
  shape.for_each([&](std::string_view, const Matrix& m) {
    mask.tensors[i++] = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m.rows(), m.cols(), value);
  });
  return mask;
}

ParamMask ParamMask::outer_loop(const ModelParams& shape) {
  ParamMask mask = all(shape, true);
  std::size_t i = 0;
  shape.for_each([&](std::string_view name, const Matrix&) {
    if (name == "Ev" || name == "gen_w" || name == "gen_b") mask.tensors[i].setConstant(false);
    ++i;
  });
  return mask;
}

bool ParamMask::congruent_with(const ModelParams& params) const {
  std::size_t i = 0;
  bool ok = true;
  params.for_each([&](std::string_view, const Matrix& m) {
    ok = ok && tensors[i].rows() == m.rows() && tensors[i].cols() == m.cols();
    ++i;
  });
  return ok;
}

std::vector<BatchIndices> token_batches(std::span<const std::vector<int>> corpus,
                                        std::span<const std::size_t> order, std::size_t token_budget) {
  std::vector<BatchIndices> batches;
  BatchIndices current;
  std::size_t tokens = 0;
  for (std::size_t idx : order) {
    const std::size_t len = corpus[idx].size();
    if (!current.empty() && tokens + len > token_budget) {
      batches.push_back(std::move(current));
      current.clear();
      tokens = 0;
    }
    current.push_back(idx);
    tokens += len;
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

BatchIndices ShuffledTokenSampler::next(std::size_t domain, std::span<const std::vector<int>> corpus) {
  if (corpus.empty()) throw std::invalid_argument("cannot sample a batch from an empty corpus");
  Cursor& cursor = cursors_[domain];
  BatchIndices batch;
  std::size_t tokens = 0;
  while (true) {
    if (cursor.pos >= cursor.order.size()) {
      // A pass ends at a batch boundary so batches never straddle two permutations.
      if (!batch.empty()) break;
      cursor.order.resize(corpus.size());
      std::iota(cursor.order.begin(), cursor.order.end(), std::size_t{0});
      shuffle(cursor.order, rng_);
      cursor.pos = 0;
    }
    const std::size_t idx = cursor.order[cursor.pos];
    const std::size_t len = corpus[idx].size();
    if (!batch.empty() && tokens + len > budget_) break;
    batch.push_back(idx);
    tokens += len;
    ++cursor.pos;
  }
  return batch;
}

std::vector<std::vector<int>> gather(std::span<const std::vector<int>> corpus, const BatchIndices& indices) {
  std::vector<std::vector<int>> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(corpus[i]);
  return out;
}

void sgd_step(ModelParams& params, const GradientSet& grad, double lr) {
  if (!params.congruent_with(grad)) throw std::invalid_argument("sgd_step: gradient shape mismatch");
  for (const auto& [name, member] : ModelParams::kTensors) (params.*member) -= lr * (grad.*member);
}

double clip_gradient(GradientSet& grad, double max_norm) {
  double sq = 0;
  grad.for_each([&](std::string_view, const Matrix& m) { sq += m.squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double scale = max_norm / norm;
    grad.for_each([&](std::string_view, Matrix& m) { m *= scale; });
  }
  return norm;
}

ModelParams inner_update(const ModelParams& params, int steps, double lr, const GradientFn& grad_fn) {
  ModelParams theta = params;
  for (int j = 0; j < steps; ++j) sgd_step(theta, grad_fn(theta), lr);
  return theta;
}

ModelParams inner_update(const ModelParams& params, const Seq2Seq& model, std::span<const std::vector<int>> corpus,
                         std::size_t domain, BatchSampler& sampler, const MetaConfig& config,
                         std::vector<BatchIndices>* used_batches) {
  return inner_update(params, config.inner_steps, config.inner_lr, [&](const ModelParams& theta) {
    BatchIndices indices = sampler.next(domain, corpus);
    const auto batch = gather(corpus, indices);
    if (used_batches) used_batches->push_back(std::move(indices));
    GradientSet g = backward(model, theta, batch);
    maybe_clip(g, config.max_grad_norm);
    return g;
  });
}

GradientSet meta_gradient(const ModelParams& adapted, const Seq2Seq& model,
                          std::span<const std::vector<int>> outer_batch, LossReport* loss) {
  return backward(model, adapted, outer_batch, loss);
}

void masked_update(ModelParams& params, const GradientSet& grad, const ParamMask& mask, double lr) {
  if (!params.congruent_with(grad) || !mask.congruent_with(params)) {
    throw std::invalid_argument("masked_update: shape mismatch");
  }
  std::size_t i = 0;
  for (const auto& [name, member] : ModelParams::kTensors) {
    Matrix& theta = params.*member;
    const Matrix& g = grad.*member;
    const auto& k = mask.tensors[i++];
    for (Eigen::Index e = 0; e < theta.size(); ++e) {
      if (k.data()[e]) theta.data()[e] -= lr * g.data()[e];
    }
  }
}

ModelParams UniversalModel::assemble(const std::string& domain_id) const {
  auto it = banks.find(domain_id);
  if (it == banks.end()) throw std::out_of_range("no parameter bank for domain " + domain_id);
  ModelParams p = shared;
  p.Ev = it->second.Ev;
  p.gen_w = it->second.gen_w;
  p.gen_b = it->second.gen_b;
  return p;
}

UniversalModel train_universal(std::span<const DomainCorpus> domains, const MetaInit& init,
                               const Seq2SeqConfig& seq_config, const MetaConfig& config,
                               BatchSampler* sampler, const MetaObserver& observer) {
  if (domains.empty()) throw std::invalid_argument("train_universal: no auxiliary domains");
  for (const auto& d : domains) {
    if (d.sequences.empty()) throw std::invalid_argument("auxiliary domain has an empty corpus: " + d.domain_id);
  }
  if (config.inner_lr <= 0 || config.outer_lr <= 0) throw std::invalid_argument("learning rates must be positive");
  if (config.inner_steps < 1) throw std::invalid_argument("inner step count must be >= 1");

  Rng rng(config.seed);
  UniversalModel um;
  um.base_domain = init.base_domain;
  um.shared.A = init.A;
  um.shared.E = init.E;
  init_recurrent(um.shared, seq_config.embed_dim, seq_config.hidden_dim, rng);
  for (const auto& d : domains) {
    DomainBank bank;
    const int vocab = static_cast<int>(d.model->geometry().vocab.size());
    bank.Ev = Matrix::Zero(vocab, seq_config.embed_dim);
    ModelParams tmp;
    init_generator(tmp, vocab, seq_config.hidden_dim, rng);
    bank.gen_w = std::move(tmp.gen_w);
    bank.gen_b = std::move(tmp.gen_b);
    um.banks.emplace(d.domain_id, std::move(bank));
  }

  ShuffledTokenSampler default_sampler(config.token_batch, config.seed ^ 0xba7c4ULL);
  BatchSampler& batches = sampler ? *sampler : default_sampler;
  Rng domain_rng = rng.fork(17);

  for (std::size_t iter = 0; iter < config.max_meta_iters; ++iter) {
    const std::size_t k = domain_rng.below(domains.size());
    const DomainCorpus& domain = domains[k];

    ModelParams theta = um.assemble(domain.domain_id);
    const ModelParams snapshot = theta;

    std::vector<BatchIndices> inner_batches;
    ModelParams adapted = inner_update(theta, *domain.model, domain.sequences, k, batches, config, &inner_batches);

    const BatchIndices outer_indices = batches.next(k, domain.sequences);
    LossReport outer_loss;
    GradientSet g_meta = meta_gradient(adapted, *domain.model, gather(domain.sequences, outer_indices), &outer_loss);
    maybe_clip(g_meta, config.max_grad_norm);

    theta = snapshot;
    const ParamMask mask = ParamMask::outer_loop(theta);
    ModelParams restored;
    if (observer) restored = theta;
    masked_update(theta, g_meta, mask, config.outer_lr);

    um.meta_loss.push_back(outer_loss.mean_per_token);
    um.iterations = iter + 1;
    if (observer) {
      observer({iter, k, &snapshot, &adapted, &restored, &g_meta, &theta, &inner_batches, &outer_indices,
                outer_loss.mean_per_token});
    }

    um.shared.A = std::move(theta.A);
    um.shared.E = std::move(theta.E);
    um.shared.enc_wx = std::move(theta.enc_wx);
    um.shared.enc_wh = std::move(theta.enc_wh);
    um.shared.enc_b = std::move(theta.enc_b);
    um.shared.dec_wx = std::move(theta.dec_wx);
    um.shared.dec_wh = std::move(theta.dec_wh);
    um.shared.dec_b = std::move(theta.dec_b);
    // The outer step leaves Ev and the generator alone (mask); the bank keeps
    // what the inner loop learned so the next visit to domain k continues
    // from it.
    DomainBank& bank = um.banks.at(domain.domain_id);
    bank.Ev = std::move(adapted.Ev);
    bank.gen_w = std::move(adapted.gen_w);
    bank.gen_b = std::move(adapted.gen_b);

    const std::size_t w = config.loss_window;
    const std::size_t n = um.meta_loss.size();
    if (w > 0 && n >= 2 * w && n % w == 0) {
      const double previous = window_mean(um.meta_loss, n - w, w);
      const double current = window_mean(um.meta_loss, n, w);
      if (previous > 0 && (previous - current) / previous < config.tolerance) {
        um.converged = true;
        break;
      }
    }
  }
  return um;
}

Adam::Adam(const ModelParams& shape, const AdamConfig& config)
    : config_(config), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

void Adam::step(ModelParams& params, const GradientSet& grad, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, member] : ModelParams::kTensors) {
    Matrix& m = m_.*member;
    Matrix& v = v_.*member;
    const Matrix& g = grad.*member;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    (params.*member).array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.epsilon);
  }
}

TrainingTrace train_adam(ModelParams& params, const Seq2Seq& model, std::span<const std::vector<int>> corpus,
                         const AdamConfig& config) {
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  TrainingTrace trace;
  Adam adam(params, config);
  Rng rng(config.seed);
  std::vector<std::size_t> order(corpus.size());
  double lr = config.lr;
  while (trace.steps < config.steps) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    for (const auto& indices : token_batches(corpus, order, config.token_batch)) {
      if (trace.steps >= config.steps) break;
      LossReport loss;
      GradientSet g = backward(model, params, gather(corpus, indices), &loss);
      maybe_clip(g, config.max_grad_norm);
      adam.step(params, g, lr);
      trace.batch_loss.push_back(loss.mean_per_token);
      ++trace.steps;
      if (config.decay_steps > 0 && trace.steps % config.decay_steps == 0) lr *= config.decay;
    }
    if (config.decay_steps == 0) lr *= config.decay;
  }
  return trace;
}

ModelParams adapt_target(const UniversalModel& universal, const Seq2Seq& target_model,
                         std::span<const std::vector<int>> target_corpus, const Seq2SeqConfig& seq_config,
                         const AdamConfig& config, TrainingTrace* trace) {
  const auto& geometry = target_model.geometry();
  if (universal.shared.E.rows() != geometry.base.rows()) {
    throw std::invalid_argument("target alignment was built against a different base vocabulary");
  }
  const int vocab = static_cast<int>(geometry.vocab.size());
  for (const auto& seq : target_corpus) {
    for (int id : seq) {
      if (id < 0 || id >= vocab) throw std::invalid_argument("target corpus does not match the target vocabulary");
    }
  }
  ModelParams params = universal.shared;
  params.Ev = Matrix::Zero(vocab, seq_config.embed_dim);
  Rng rng(config.seed ^ 0x9e4e7a70ULL);
  init_generator(params, vocab, seq_config.hidden_dim, rng);
  TrainingTrace t = train_adam(params, target_model, target_corpus, config);
  if (trace) *trace = std::move(t);
  return params;
}

ModelParams train_from_scratch(const MetaInit& init, const Seq2Seq& target_model,
                               std::span<const std::vector<int>> target_corpus, const Seq2SeqConfig& seq_config,
                               const AdamConfig& config, TrainingTrace* trace) {
  const int vocab = static_cast<int>(target_model.geometry().vocab.size());
  Rng rng(config.seed ^ 0x5c7a7c4ULL);
  ModelParams params =
      init_model({init.A, init.E, Matrix::Zero(vocab, seq_config.embed_dim)}, vocab, seq_config, rng);
  TrainingTrace t = train_adam(params, target_model, target_corpus, config);
  if (trace) *trace = std::move(t);
  return params;
}

}  // namespace metawaf
