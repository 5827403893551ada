#include <doctest.h>

#include <cmath>

#include "metawaf/meta_trainer.h"
#include "metawaf/seq2seq.h"
#include "test_util.h"

using namespace metawaf;
using namespace metawaf::testing;

namespace {

const std::vector<std::vector<int>> kBatch{{1, 2, 3, 4}, {5, 6}, {7, 8, 9, 1, 2, 0}, {3}};

double max_relative_error(ToyModel& toy, const std::vector<std::vector<int>>& batch, std::string_view only = {}) {
  const Seq2Seq model = toy.model();
  const GradientSet grad = backward(model, toy.params, batch);
  double worst = 0;
  for (const auto& [name, member] : ModelParams::kTensors) {
    if (!only.empty() && name != only) continue;
    Matrix& t = toy.params.*member;
    const Matrix& g = grad.*member;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      const double eps = 1e-4;
      t.data()[i] = saved + eps;
      const double up = reconstruction_loss(model, toy.params, batch).sum;
      t.data()[i] = saved - eps;
      const double down = reconstruction_loss(model, toy.params, batch).sum;
      t.data()[i] = saved;
      const double fd = (up - down) / (2 * eps);
      const double an = g.data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("zero generator gives uniform distributions") {
  auto toy = toy_model(1);
  toy.params.gen_w.setZero();
  toy.params.gen_b.setZero();
  const Seq2Seq model = toy.model();
  auto dists = forward(model, toy.params, {1, 2, 3, 4});
  CHECK(dists.size() == 5);
  for (const auto& p : dists) CHECK((p.array() - 1.0 / 20).abs().maxCoeff() <= 1e-15);
  std::vector<std::vector<int>> one{{1, 2, 3, 4}};
  CHECK(reconstruction_loss(model, toy.params, one).sum == doctest::Approx(5 * std::log(20.0)).epsilon(1e-12));
}

TEST_CASE("distributions are normalized") {
  auto toy = toy_model(2);
  const Seq2Seq model = toy.model();
  for (const auto& seq : kBatch) {
    auto dists = forward(model, toy.params, seq);
    CHECK(dists.size() == seq.size() + 1);
    for (const auto& p : dists) {
      CHECK(std::abs(p.sum() - 1.0) <= 1e-6);
      CHECK(p.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("loss is additive and reported as sum and mean") {
  auto toy = toy_model(3);
  const Seq2Seq model = toy.model();
  std::vector<std::vector<int>> one{{4, 5, 6}};
  std::vector<std::vector<int>> two{{4, 5, 6}, {4, 5, 6}};
  auto l1 = reconstruction_loss(model, toy.params, one);
  auto l2 = reconstruction_loss(model, toy.params, two);
  CHECK(l1.sum > 0);
  CHECK(l2.sum == doctest::Approx(2 * l1.sum).epsilon(1e-13));
  CHECK(l1.positions == 4);
  CHECK(l1.mean_per_token == doctest::Approx(l1.sum / 4));
}

TEST_CASE("gradients match central finite differences for every tensor") {
  auto toy = toy_model(3);
  for (const auto& [name, member] : ModelParams::kTensors) {
    CAPTURE(name);
    CHECK(max_relative_error(toy, kBatch, name) <= 1e-4);
  }
}

TEST_CASE("backward rejects empty batches and perturbing E changes the loss") {
  auto toy = toy_model(4);
  const Seq2Seq model = toy.model();
  std::vector<std::vector<int>> empty;
  CHECK_THROWS_AS(backward(model, toy.params, empty), std::invalid_argument);
  CHECK_THROWS_AS(reconstruction_loss(model, toy.params, empty), std::invalid_argument);

  toy.params.Ev.setZero();
  auto grad = backward(model, toy.params, kBatch);
  CHECK(grad.E.norm() > 0);
  const double before = reconstruction_loss(model, toy.params, kBatch).sum;
  toy.params.E.array() += 0.01;
  CHECK(reconstruction_loss(model, toy.params, kBatch).sum != before);
}

TEST_CASE("forward and backward are bitwise reproducible") {
  auto toy = toy_model(5);
  const Seq2Seq model = toy.model();
  LossReport a;
  LossReport b;
  auto g1 = backward(model, toy.params, kBatch, &a);
  auto g2 = backward(model, toy.params, kBatch, &b);
  CHECK(g1.bitwise_equal(g2));
  CHECK(a.sum == b.sum);
  CHECK(reconstruction_loss(model, toy.params, kBatch).sum == a.sum);
}

TEST_CASE("batch order does not matter beyond rounding") {
  auto toy = toy_model(6);
  const Seq2Seq model = toy.model();
  std::vector<std::vector<int>> reversed(kBatch.rbegin(), kBatch.rend());
  CHECK(reconstruction_loss(model, toy.params, reversed).sum ==
        doctest::Approx(reconstruction_loss(model, toy.params, kBatch).sum).epsilon(1e-12));
}

TEST_CASE("over-length sequences are truncated with a warning") {
  auto toy = toy_model(7);
  toy.config.max_len = 3;
  const Seq2Seq model = toy.model();
  std::vector<std::vector<int>> batch{{1, 2, 3, 4, 5}};
  auto loss = reconstruction_loss(model, toy.params, batch);
  CHECK(loss.positions == 4);
  REQUIRE(loss.warnings.size() == 1);
  CHECK(loss.warnings[0].find("truncated") != std::string::npos);
}

TEST_CASE("impossible tokens are clamped at the log floor") {
  auto toy = toy_model(8);
  toy.params.gen_w.setZero();
  toy.params.gen_b.setZero();
  toy.params.gen_b(3, 0) = -1e4;
  const Seq2Seq model = toy.model();
  std::vector<std::vector<int>> batch{{3}};
  auto loss = reconstruction_loss(model, toy.params, batch);
  CHECK(std::isfinite(loss.sum));
  CHECK(loss.sum >= -std::log(1e-12));
  CHECK_FALSE(loss.warnings.empty());
}

TEST_CASE("overfitting one sequence reproduces it") {
  auto toy = toy_model(9);
  const Seq2Seq model = toy.model();
  const std::vector<int> seq{2, 7, 7, 11, 4};
  std::vector<std::vector<int>> corpus{seq};
  AdamConfig config;
  config.lr = 0.01;
  config.steps = 500;
  config.decay = 1.0;
  train_adam(toy.params, model, corpus, config);
  auto dists = forward(model, toy.params, seq);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    Eigen::Index best;
    dists[t].maxCoeff(&best);
    CHECK(best == seq[t]);
  }
  Eigen::Index last;
  dists.back().maxCoeff(&last);
  CHECK(last == model.geometry().vocab.eos());
  CHECK(reconstruction_loss(model, toy.params, corpus).mean_per_token < 0.05);
}

TEST_CASE("a trained model beats the uniform rate on its corpus") {
  auto toy = toy_model(10);
  const Seq2Seq model = toy.model();
  auto corpus = toy_corpus(3, model.geometry().vocab, 40, 6);
  AdamConfig config;
  config.lr = 0.01;
  config.steps = 200;
  config.token_batch = 64;
  train_adam(toy.params, model, corpus, config);
  CHECK(reconstruction_loss(model, toy.params, corpus).mean_per_token < std::log(20.0));
}

TEST_CASE("parameter helpers") {
  auto toy = toy_model(11);
  auto z = toy.params.zeros_like();
  CHECK(z.congruent_with(toy.params));
  CHECK(z.parameter_count() == toy.params.parameter_count());
  CHECK(z.E.isZero(0));
  CHECK(toy.params.vocab_size() == 20);
  CHECK(toy.params.hidden_dim() == 8);
  CHECK(toy.params.bitwise_equal(toy.params));
  CHECK_FALSE(z.bitwise_equal(toy.params));
}
