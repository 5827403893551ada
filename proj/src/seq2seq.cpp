#include "metawaf/seq2seq.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace metawaf {
namespace {

using RowVec = Eigen::RowVectorXd;

void fill_uniform(Matrix& m, double scale, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-scale, scale);
  }
}

Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

struct LstmStepCache {
  Eigen::Index active = 0;
  Matrix x;
  Matrix h_prev;
  Matrix c_prev;
  Matrix i, f, g, o;
  Matrix tanh_c;
};

struct LstmRef {
  const Matrix& wx;
  const Matrix& wh;
  const Matrix& b;
};

struct LstmGrad {
  Matrix& wx;
  Matrix& wh;
  Matrix& b;
};

/// One LSTM step over the first `n` columns of the batch; the batch is sorted
/// by length so finished sequences form a suffix that keeps its state.
void lstm_step(const LstmRef& w, const Matrix& x, Matrix& h, Matrix& c, Eigen::Index n, LstmStepCache* cache) {
  const Eigen::Index hd = h.rows();
  Matrix z = w.wx * x;
  z.noalias() += w.wh * h.leftCols(n);
  z.colwise() += w.b.col(0);
  Matrix i = sigmoid(z.topRows(hd));
  Matrix f = sigmoid(z.middleRows(hd, hd));
  Matrix g = z.middleRows(2 * hd, hd).array().tanh().matrix();
  Matrix o = sigmoid(z.bottomRows(hd));
  Matrix c_new = (f.array() * c.leftCols(n).array() + i.array() * g.array()).matrix();
  Matrix tanh_c = c_new.array().tanh().matrix();

  if (cache) {
    cache->active = n;
    cache->x = x;
    cache->h_prev = h.leftCols(n);
    cache->c_prev = c.leftCols(n);
  }
  h.leftCols(n) = (o.array() * tanh_c.array()).matrix();
  c.leftCols(n) = c_new;
  if (cache) {
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->tanh_c = std::move(tanh_c);
  }
}

/// Backward through one step. On entry dh/dc hold gradients w.r.t. the
/// step's outputs; on exit they hold gradients w.r.t. its inputs (columns
/// past `active` pass through). Returns the gradient w.r.t. x (active
/// columns only).
Matrix lstm_step_backward(const LstmRef& w, const LstmStepCache& k, Matrix& dh, Matrix& dc, LstmGrad& grad) {
  const Eigen::Index hd = dh.rows();
  const Eigen::Index n = k.active;
  const Matrix dh_cand = dh.leftCols(n);
  const Matrix dc_cand =
      (dc.leftCols(n).array() + dh_cand.array() * k.o.array() * (1.0 - k.tanh_c.array().square())).matrix();

  Matrix dz(4 * hd, n);
  dz.topRows(hd) = (dc_cand.array() * k.g.array() * k.i.array() * (1.0 - k.i.array())).matrix();
  dz.middleRows(hd, hd) =
      (dc_cand.array() * k.c_prev.array() * k.f.array() * (1.0 - k.f.array())).matrix();
  dz.middleRows(2 * hd, hd) = (dc_cand.array() * k.i.array() * (1.0 - k.g.array().square())).matrix();
  dz.bottomRows(hd) =
      (dh_cand.array() * k.tanh_c.array() * k.o.array() * (1.0 - k.o.array())).matrix();

  grad.wx.noalias() += dz * k.x.transpose();
  grad.wh.noalias() += dz * k.h_prev.transpose();
  grad.b.col(0) += dz.rowwise().sum();

  dh.leftCols(n).noalias() = w.wh.transpose() * dz;
  dc.leftCols(n) = (dc_cand.array() * k.f.array()).matrix();
  return w.wx.transpose() * dz;
}

void check_finite(const GradientSet& grad) {
  grad.for_each([](std::string_view name, const Matrix& m) {
    if (!m.allFinite()) throw std::runtime_error("non-finite gradient in tensor " + std::string(name));
  });
}

}  // namespace

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  for (const auto& [name, member] : kTensors) {
    (z.*member) = Matrix::Zero((this->*member).rows(), (this->*member).cols());
  }
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ModelParams::congruent_with(const ModelParams& other) const {
  for (const auto& [name, member] : kTensors) {
    if ((this->*member).rows() != (other.*member).rows() || (this->*member).cols() != (other.*member).cols()) {
      return false;
    }
  }
  return true;
}

bool ModelParams::bitwise_equal(const ModelParams& other) const {
  if (!congruent_with(other)) return false;
  for (const auto& [name, member] : kTensors) {
    const Matrix& a = this->*member;
    const Matrix& b = other.*member;
    if (a.size() > 0 &&
        std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

void init_recurrent(ModelParams& params, int embed_dim, int hidden_dim, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (Matrix* wx : {&params.enc_wx, &params.dec_wx}) {
    *wx = Matrix(4 * hidden_dim, embed_dim);
    fill_uniform(*wx, scale, rng);
  }
  for (Matrix* wh : {&params.enc_wh, &params.dec_wh}) {
    *wh = Matrix(4 * hidden_dim, hidden_dim);
    fill_uniform(*wh, scale, rng);
  }
  for (Matrix* b : {&params.enc_b, &params.dec_b}) {
    *b = Matrix::Zero(4 * hidden_dim, 1);
    b->block(hidden_dim, 0, hidden_dim, 1).setOnes();
  }
}

void init_generator(ModelParams& params, int vocab_size, int hidden_dim, Rng& rng) {
  params.gen_w = Matrix(vocab_size, hidden_dim);
  fill_uniform(params.gen_w, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
  params.gen_b = Matrix::Zero(vocab_size, 1);
}

ModelParams init_model(const RepresentationParams& rep, int vocab_size, const Seq2SeqConfig& config,
                       Rng& rng) {
  if (rep.E.cols() != config.embed_dim || rep.Ev.cols() != config.embed_dim) {
    throw std::invalid_argument("representation width differs from the configured embedding size");
  }
  if (rep.Ev.rows() != vocab_size) throw std::invalid_argument("domain-specific table does not match vocabulary");
  ModelParams params;
  params.A = rep.A;
  params.E = rep.E;
  params.Ev = rep.Ev;
  init_recurrent(params, config.embed_dim, config.hidden_dim, rng);
  init_generator(params, vocab_size, config.hidden_dim, rng);
  return params;
}

Seq2Seq::Seq2Seq(const DomainGeometry& geometry, Seq2SeqConfig config)
    : geometry_(geometry), config_(config) {}

BatchOutput Seq2Seq::run(const ModelParams& params, std::span<const std::vector<int>> batch,
                         bool keep_distributions) const {
  return evaluate(params, batch, keep_distributions, nullptr);
}

BatchOutput Seq2Seq::run_with_gradient(const ModelParams& params, std::span<const std::vector<int>> batch,
                                       GradientSet& grad) const {
  grad = params.zeros_like();
  return evaluate(params, batch, false, &grad);
}

BatchOutput Seq2Seq::evaluate(const ModelParams& params, std::span<const std::vector<int>> batch,
                              bool keep_distributions, GradientSet* grad) const {
  const int vocab = static_cast<int>(geometry_.aligned.rows());
  if (params.vocab_size() != vocab || params.Ev.rows() != vocab) {
    throw std::invalid_argument("model parameters do not match the domain vocabulary");
  }
  if (params.E.rows() != geometry_.base.rows()) {
    throw std::invalid_argument("universal table does not match the base vocabulary");
  }
  const int bos = geometry_.vocab.bos();
  const int eos = geometry_.vocab.eos();

  BatchOutput out;
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  std::vector<std::vector<int>> seqs(batch.begin(), batch.end());
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    if (seqs[s].size() > config_.max_len) {
      out.warnings.push_back("sequence " + std::to_string(s) + " truncated from " +
                             std::to_string(seqs[s].size()) + " to " + std::to_string(config_.max_len) +
                             " tokens");
      seqs[s].resize(config_.max_len);
    }
    for (int id : seqs[s]) {
      if (id < 0 || id >= vocab) throw std::out_of_range("token id outside domain vocabulary");
    }
  }
  out.sequence_nll.assign(seqs.size(), 0.0);
  out.positions.resize(seqs.size());
  for (std::size_t s = 0; s < seqs.size(); ++s) out.positions[s] = seqs[s].size() + 1;
  if (keep_distributions) {
    out.distributions.resize(seqs.size());
    for (std::size_t s = 0; s < seqs.size(); ++s) out.distributions[s].resize(seqs[s].size() + 1, vocab);
  }
  if (B == 0) return out;

  // Column b of every batch matrix is sequence order[b]; longest first, so
  // the sequences still running at any step are a prefix.
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return seqs[a].size() > seqs[b].size(); });
  auto seq_at = [&](Eigen::Index col) -> const std::vector<int>& { return seqs[order[static_cast<std::size_t>(col)]]; };
  const std::size_t max_len = seq_at(0).size();
  // Columns with more than `t` tokens.
  auto longer_than = [&](std::size_t t) {
    Eigen::Index n = 0;
    while (n < B && seq_at(n).size() > t) ++n;
    return n;
  };

  // Representation table, kept transposed for column gathers.
  const Matrix scores = similarity_matrix(geometry_, params.A);
  const Matrix weights = softmax_rows(scores);
  const Matrix table_t = (weights * params.E + params.Ev).transpose();  // d x |V|

  const Eigen::Index hd = params.hidden_dim();
  const Eigen::Index dim = params.embed_dim();
  const LstmRef enc{params.enc_wx, params.enc_wh, params.enc_b};
  const LstmRef dec{params.dec_wx, params.dec_wh, params.dec_b};

  auto gather = [&](Eigen::Index n, auto token_at) {
    Matrix x(dim, n);
    for (Eigen::Index b = 0; b < n; ++b) x.col(b) = table_t.col(token_at(b));
    return x;
  };

  // Encoder.
  const std::size_t enc_steps = max_len;
  std::vector<LstmStepCache> enc_cache(grad ? enc_steps : 0);
  Matrix h = Matrix::Zero(hd, B);
  Matrix c = Matrix::Zero(hd, B);
  for (std::size_t t = 0; t < enc_steps; ++t) {
    const Eigen::Index n = longer_than(t);
    Matrix x = gather(n, [&](Eigen::Index b) { return seq_at(b)[t]; });
    lstm_step(enc, x, h, c, n, grad ? &enc_cache[t] : nullptr);
  }

  // Decoder, teacher forced: input BOS x_1..x_n, target x_1..x_n EOS.
  const std::size_t dec_steps = max_len + 1;
  auto dec_input = [&](std::size_t t) {
    return [&, t](Eigen::Index b) { return t == 0 ? bos : seq_at(b)[t - 1]; };
  };
  std::vector<LstmStepCache> dec_cache(grad ? dec_steps : 0);
  std::vector<Matrix> dec_hidden(grad ? dec_steps : 0);
  std::vector<Matrix> dec_logit_grad(grad ? dec_steps : 0);
  bool clamped = false;
  for (std::size_t t = 0; t < dec_steps; ++t) {
    const Eigen::Index n = t == 0 ? B : longer_than(t - 1);
    Matrix x = gather(n, dec_input(t));
    lstm_step(dec, x, h, c, n, grad ? &dec_cache[t] : nullptr);

    Matrix logits = params.gen_w * h.leftCols(n);
    logits.colwise() += params.gen_b.col(0);
    for (Eigen::Index b = 0; b < n; ++b) {
      const double mx = logits.col(b).maxCoeff();
      logits.col(b) = (logits.col(b).array() - mx).exp().matrix();
      logits.col(b) /= logits.col(b).sum();
    }
    const Matrix& probs = logits;
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto& s = seq_at(b);
      const std::size_t orig = order[static_cast<std::size_t>(b)];
      const int target = t < s.size() ? s[t] : eos;
      double p = probs(target, b);
      if (p < config_.log_floor) {
        p = config_.log_floor;
        clamped = true;
      }
      out.sequence_nll[orig] -= std::log(p);
      if (keep_distributions) out.distributions[orig].row(static_cast<Eigen::Index>(t)) = probs.col(b).transpose();
    }
    if (grad) {
      dec_hidden[t] = h.leftCols(n);
      Matrix& dl = dec_logit_grad[t];
      dl = std::move(logits);
      for (Eigen::Index b = 0; b < n; ++b) {
        const auto& s = seq_at(b);
        dl(t < s.size() ? s[t] : eos, b) -= 1.0;
      }
    }
  }
  if (clamped) out.warnings.push_back("true-token probability below log floor; clamped");
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    out.total_nll += out.sequence_nll[s];
    out.total_positions += out.positions[s];
  }
  if (!grad) return out;

  // Backward.
  GradientSet& g = *grad;
  Matrix d_table_t = Matrix::Zero(dim, table_t.cols());
  Matrix dh = Matrix::Zero(hd, B);
  Matrix dc = Matrix::Zero(hd, B);
  LstmGrad dec_grad{g.dec_wx, g.dec_wh, g.dec_b};
  LstmGrad enc_grad{g.enc_wx, g.enc_wh, g.enc_b};

  auto scatter = [&](const Matrix& dx, auto token_at) {
    for (Eigen::Index b = 0; b < dx.cols(); ++b) d_table_t.col(token_at(b)) += dx.col(b);
  };

  for (std::size_t step = dec_steps; step-- > 0;) {
    const Matrix& dlogits = dec_logit_grad[step];
    const Eigen::Index n = dlogits.cols();
    g.gen_w.noalias() += dlogits * dec_hidden[step].transpose();
    g.gen_b.col(0) += dlogits.rowwise().sum();
    dh.leftCols(n).noalias() += params.gen_w.transpose() * dlogits;
    Matrix dx = lstm_step_backward(dec, dec_cache[step], dh, dc, dec_grad);
    scatter(dx, dec_input(step));
  }
  for (std::size_t step = enc_steps; step-- > 0;) {
    Matrix dx = lstm_step_backward(enc, enc_cache[step], dh, dc, enc_grad);
    scatter(dx, [&](Eigen::Index b) { return seq_at(b)[step]; });
  }

  // Through table = softmax(aligned A base^T) E + Ev.
  const Matrix d_table = d_table_t.transpose();  // |V| x d
  g.Ev = d_table;
  g.E.noalias() = weights.transpose() * d_table;
  const Matrix d_weights = d_table * params.E.transpose();
  const Eigen::VectorXd row_dot = (d_weights.array() * weights.array()).rowwise().sum();
  const Matrix d_scores = (weights.array() * (d_weights.colwise() - row_dot).array()).matrix();
  g.A.noalias() = geometry_.aligned.transpose() * d_scores * geometry_.base;

  check_finite(g);
  return out;
}

std::vector<Vector> forward(const Seq2Seq& model, const ModelParams& params, const std::vector<int>& seq,
                            std::vector<std::string>* warnings) {
  std::vector<std::vector<int>> batch{seq};
  BatchOutput out = model.run(params, batch, true);
  if (warnings) warnings->insert(warnings->end(), out.warnings.begin(), out.warnings.end());
  std::vector<Vector> rows;
  const Matrix& d = out.distributions.front();
  for (Eigen::Index r = 0; r < d.rows(); ++r) rows.push_back(d.row(r).transpose());
  return rows;
}

LossReport reconstruction_loss(const Seq2Seq& model, const ModelParams& params,
                               std::span<const std::vector<int>> batch) {
  if (batch.empty()) throw std::invalid_argument("reconstruction_loss: empty batch");
  BatchOutput out = model.run(params, batch);
  return {out.total_nll, out.mean_nll(), out.total_positions, std::move(out.warnings)};
}

GradientSet backward(const Seq2Seq& model, const ModelParams& params,
                     std::span<const std::vector<int>> batch, LossReport* loss) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  GradientSet grad;
  BatchOutput out = model.run_with_gradient(params, batch, grad);
  if (loss) *loss = {out.total_nll, out.mean_nll(), out.total_positions, std::move(out.warnings)};
  return grad;
}

}  // namespace metawaf
