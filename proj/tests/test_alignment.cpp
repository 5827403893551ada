#include <doctest.h>

#include <cmath>

#include "metawaf/alignment.h"
#include "test_util.h"

using namespace metawaf;
using namespace metawaf::testing;

namespace {

EmbeddingMatrix rotated(const EmbeddingMatrix& base, const Matrix& q, const std::string& domain) {
  EmbeddingMatrix out = base;
  out.domain_id = domain;
  out.vectors = base.vectors * q.transpose();  // Wv(x) = Q Wu(x)
  return out;
}

EmbeddingMatrix one_row(const std::string& domain, std::initializer_list<double> values) {
  EmbeddingMatrix m;
  m.domain_id = domain;
  m.vocab = {"x"};
  m.vectors = Matrix(1, static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) m.vectors(0, i++) = v;
  m.normalized = true;
  return m;
}

}  // namespace

TEST_CASE("base domain selection") {
  using Sets = std::vector<std::pair<std::string, std::set<std::string>>>;
  Sets sets{{"Q1", {"a", "b", "c"}}, {"Q2", {"a", "b"}}, {"Q3", {"b", "d"}}};
  auto choice = select_base_domain(sets);
  CHECK(choice.domain_id == "Q1");
  CHECK(choice.overlap_counts[0].second == 3);
  CHECK(choice.overlap_counts[1].second == 3);
  CHECK(choice.overlap_counts[2].second == 2);
  CHECK_FALSE(choice.warning);

  Sets same{{"b", {"x", "y"}}, {"a", {"x", "y"}}};
  CHECK(select_base_domain(same).domain_id == "a");

  Sets disjoint{{"p", {"x"}}, {"q", {"y"}}};
  auto d = select_base_domain(disjoint);
  CHECK(d.domain_id == "p");
  CHECK(d.warning == "no overlap");

  Sets single{{"p", {"x"}}};
  CHECK_THROWS(select_base_domain(single));
}

TEST_CASE("one-dimensional alignment flips sign") {
  auto t = fit_orthogonal_map(one_row("u", {1.0}), one_row("v", {-1.0}), {"x"});
  CHECK(t.map(0, 0) == doctest::Approx(-1.0));
  CHECK(t.residual <= 1e-12);
}

TEST_CASE("planted rotations are recovered") {
  Rng rng(17);
  for (int d : {2, 8, 64}) {
    auto base = random_embedding(rng, "u", d + 10, d);
    Matrix q = random_orthogonal(rng, d);
    auto other = rotated(base, q, "v");
    auto t = fit_orthogonal_map(base, other, overlapping_tokens(base, other));
    CHECK((t.map - q.transpose()).norm() <= 1e-8);
    CHECK(t.orthogonality_defect() <= 1e-8);
    CHECK(t.residual <= 1e-12);
  }
}

TEST_CASE("identical embeddings give the identity") {
  Rng rng(2);
  auto base = random_embedding(rng, "u", 12, 6);
  auto t = fit_orthogonal_map(base, base, overlapping_tokens(base, base));
  CHECK((t.map - Matrix::Identity(6, 6)).norm() <= 1e-10);
}

TEST_CASE("alignment needs overlap and normalized inputs") {
  Rng rng(3);
  auto base = random_embedding(rng, "u", 4, 3);
  CHECK_THROWS_WITH(fit_orthogonal_map(base, base, {}), "no overlapping tokens; domain cannot be aligned");
  auto raw = base;
  raw.normalized = false;
  CHECK_THROWS(fit_orthogonal_map(base, raw, base.vocab));
}

TEST_CASE("no sampled orthogonal matrix beats the fitted map") {
  Rng rng(5);
  for (int d : {2, 3}) {
    auto base = random_embedding(rng, "u", 6, d);
    auto noisy = base;
    noisy.domain_id = "v";
    noisy.vectors = base.vectors * random_orthogonal(rng, d).transpose() + 0.3 * random_matrix(rng, 6, d);
    noisy = normalize_rows(noisy);
    auto overlap = overlapping_tokens(base, noisy);
    auto t = fit_orthogonal_map(base, noisy, overlap);
    const double best = alignment_objective(base, noisy, overlap, t.map);
    double improvement = 0;
    for (int i = 0; i < 10000; ++i) {
      const double trial = alignment_objective(base, noisy, overlap, random_orthogonal(rng, d));
      improvement = std::max(improvement, best - trial);
    }
    CHECK(improvement <= 1e-6);
  }
}

TEST_CASE("optimum is invariant to a shared rotation") {
  Rng rng(8);
  auto base = random_embedding(rng, "u", 10, 5);
  auto other = base;
  other.domain_id = "v";
  other.vectors = base.vectors * random_orthogonal(rng, 5).transpose() + 0.2 * random_matrix(rng, 10, 5);
  other = normalize_rows(other);
  auto overlap = overlapping_tokens(base, other);
  const double before = alignment_objective(base, other, overlap, fit_orthogonal_map(base, other, overlap).map);
  Matrix r = random_orthogonal(rng, 5);
  auto base_r = rotated(base, r, "u");
  auto other_r = rotated(other, r, "v");
  const double after = alignment_objective(base_r, other_r, overlap, fit_orthogonal_map(base_r, other_r, overlap).map);
  CHECK(std::abs(before - after) <= 1e-9);
}

TEST_CASE("similarity is the bilinear form") {
  Matrix e1(1, 3);
  e1 << 1, 0, 0;
  Matrix e2(1, 3);
  e2 << 0, 1, 0;
  DomainGeometry g{"v", Vocabulary::from_tokens({"x"}), e1, Matrix(2, 3)};
  g.base << e1, e2;
  const Matrix I = Matrix::Identity(3, 3);
  CHECK(similarity(g, I, 0, 0) == 1.0);
  CHECK(similarity(g, I, 0, 1) == 0.0);
  CHECK(similarity(g, 2 * I, 0, 0) == 2.0);
  CHECK_THROWS(similarity(g, I, 1, 0));
  CHECK_THROWS(similarity(g, I, 0, 2));
  CHECK(similarity_matrix(g, I)(0, 1) == 0.0);
}

TEST_CASE("universal embedding weights base rows by softmax") {
  Matrix aligned(1, 2);
  aligned << 1, 0;
  Matrix base(2, 2);
  base << 0, 1, 0, -1;  // both orthogonal to the token: equal similarities
  DomainGeometry g{"v", Vocabulary::from_tokens({"x"}), aligned, base};
  Matrix E(2, 3);
  E << 1, 2, 3, 5, 6, 7;
  RepresentationParams rep{Matrix::Identity(2, 2), E, Matrix::Zero(1, 3)};
  Vector u = universal_embedding(g, rep, 0);
  CHECK((u - (E.row(0) + E.row(1)).transpose() / 2).norm() <= 1e-15);

  // A dominant similarity of 50 leaves weight 1 / (1 + e^-50) on row 0.
  g.base << 50, 0, 0, 0;
  u = universal_embedding(g, rep, 0);
  CHECK((u - E.row(0).transpose()).norm() <= 1e-6);

  rep.E.setZero();
  CHECK(universal_embedding(g, rep, 0).norm() == 0.0);
}

TEST_CASE("softmax weights are a convex combination") {
  Rng rng(4);
  Matrix s = 5 * random_matrix(rng, 6, 9);
  Matrix w = softmax_rows(s);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    CHECK(std::abs(w.row(r).sum() - 1.0) <= 1e-6);
    CHECK(w.row(r).minCoeff() > 0.0);
  }
  Matrix E = random_matrix(rng, 9, 4);
  Matrix u = w * E;
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
      CHECK(u(r, c) <= E.col(c).maxCoeff() + 1e-12);
      CHECK(u(r, c) >= E.col(c).minCoeff() - 1e-12);
    }
  }
}

TEST_CASE("multi-domain representation adds the domain-specific row") {
  Rng rng(6);
  DomainGeometry g{"v", Vocabulary::from_tokens({"x", "y"}), random_matrix(rng, 2, 3), random_matrix(rng, 4, 3)};
  RepresentationParams rep{Matrix::Identity(3, 3), random_matrix(rng, 4, 5), Matrix::Zero(2, 5)};
  CHECK(multi_domain_representation(g, rep, 1) == universal_embedding(g, rep, 1));

  Matrix aligned(1, 2);
  aligned << 1, 0;
  Matrix base(1, 2);
  base << 1, 0;
  DomainGeometry g1{"v", Vocabulary::from_tokens({"x"}), aligned, base};
  Matrix E(1, 3);
  E << 0, 1, 0;
  Matrix Ev(1, 3);
  Ev << 1, 0, 0;
  RepresentationParams one{Matrix::Identity(2, 2), E, Ev};
  CHECK(multi_domain_representation(g1, one, 0) == Vector::Map(std::vector<double>{1, 1, 0}.data(), 3));

  // d representation / d Ev(t) is the identity.
  rep.Ev = random_matrix(rng, 2, 5);
  const double eps = 1e-6;
  for (int c = 0; c < 5; ++c) {
    auto plus = rep;
    plus.Ev(1, c) += eps;
    auto minus = rep;
    minus.Ev(1, c) -= eps;
    Vector fd = (multi_domain_representation(g, plus, 1) - multi_domain_representation(g, minus, 1)) / (2 * eps);
    Vector unit = Vector::Unit(5, c);
    CHECK((fd - unit).norm() <= 1e-8);
  }
  CHECK((representation_table(g, rep).row(1).transpose() - multi_domain_representation(g, rep, 1)).norm() <= 1e-14);
}

TEST_CASE("universal representation starts at A = I and Ev = 0") {
  Rng rng(11);
  auto u = random_embedding(rng, "u", 20, 4);
  auto v = random_embedding(rng, "v", 15, 4);
  std::map<std::string, EmbeddingMatrix> all{{"u", u}, {"v", v}};
  auto rep = UniversalRepresentation::build("u", all, 6, rng);
  CHECK(rep.A == Matrix::Identity(4, 4));
  CHECK(rep.E.rows() == 20);
  CHECK(rep.E.cols() == 6);
  CHECK(rep.domain_specific.at("v").isZero(0));
  CHECK(rep.domain_specific.at("v").rows() == 15);
  CHECK(rep.transforms.at("u").map == Matrix::Identity(4, 4));
  CHECK(rep.geometries.at("u").aligned == u.vectors);
  CHECK(rep.transforms.at("v").orthogonality_defect() <= 1e-8);

  auto w = random_embedding(rng, "w", 9, 4);
  rep.add_domain(w, 6);
  CHECK(rep.domain_specific.at("w").isZero(0));
  CHECK_THROWS(UniversalRepresentation::build("missing", all, 6, rng));
}
