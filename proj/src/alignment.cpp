#include "metawaf/alignment.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/SVD>

namespace metawaf {

BaseDomainChoice select_base_domain(
    std::span<const std::pair<std::string, std::set<std::string>>> token_sets) {
  if (token_sets.size() < 2) throw std::invalid_argument("base-domain selection needs >= 2 domains");
  BaseDomainChoice choice;
  std::size_t best = 0;
  bool have_best = false;
  std::size_t grand_total = 0;
  for (std::size_t v = 0; v < token_sets.size(); ++v) {
    std::size_t total = 0;
    for (std::size_t w = 0; w < token_sets.size(); ++w) {
      if (w == v) continue;
      const auto& a = token_sets[v].second;
      const auto& b = token_sets[w].second;
      total += static_cast<std::size_t>(std::count_if(a.begin(), a.end(), [&](const std::string& t) {
        return b.contains(t);
      }));
    }
    grand_total += total;
    choice.overlap_counts.emplace_back(token_sets[v].first, total);
    const auto& id = token_sets[v].first;
    if (!have_best || total > best || (total == best && id < choice.domain_id)) {
      best = total;
      choice.domain_id = id;
      have_best = true;
    }
  }
  if (grand_total == 0) choice.warning = "no overlap";
  return choice;
}

double AlignmentTransform::orthogonality_defect() const {
  return (map.transpose() * map - Matrix::Identity(map.rows(), map.cols())).norm();
}

std::vector<std::string> overlapping_tokens(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  std::vector<std::string> sa(a.vocab), sb(b.vocab), out;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(out));
  return out;
}

namespace {

std::pair<int, int> rows_for(const EmbeddingMatrix& base, const EmbeddingMatrix& other,
                             const std::string& token) {
  const int ru = base.row_of(token);
  const int rv = other.row_of(token);
  if (ru < 0 || rv < 0) throw std::invalid_argument("overlap token missing from a vocabulary: " + token);
  return {ru, rv};
}

}  // namespace

double alignment_objective(const EmbeddingMatrix& base, const EmbeddingMatrix& other,
                           const std::vector<std::string>& overlap, const Matrix& map) {
  double total = 0;
  for (const auto& token : overlap) {
    const auto [ru, rv] = rows_for(base, other, token);
    total += (map * other.vectors.row(rv).transpose() - base.vectors.row(ru).transpose()).squaredNorm();
  }
  return total;
}

AlignmentTransform fit_orthogonal_map(const EmbeddingMatrix& base, const EmbeddingMatrix& other,
                                      const std::vector<std::string>& overlap) {
  if (overlap.empty()) throw std::invalid_argument("no overlapping tokens; domain cannot be aligned");
  if (base.dim() != other.dim()) throw std::invalid_argument("embedding dimensions differ");
  if (!base.normalized || !other.normalized) {
    throw std::invalid_argument("fit_orthogonal_map requires row-normalized embeddings");
  }
  const int d = base.dim();
  Matrix cross = Matrix::Zero(d, d);
  for (const auto& token : overlap) {
    const auto [ru, rv] = rows_for(base, other, token);
    cross.noalias() += base.vectors.row(ru).transpose() * other.vectors.row(rv);
  }
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);

  AlignmentTransform out;
  out.domain_id = other.domain_id;
  out.map = svd.matrixU() * svd.matrixV().transpose();
  out.overlap = overlap;
  out.residual = alignment_objective(base, other, overlap, out.map) / static_cast<double>(overlap.size());
  return out;
}

Matrix project_rows(const EmbeddingMatrix& other, const Matrix& map) {
  return other.vectors * map.transpose();
}

DomainGeometry make_geometry(const EmbeddingMatrix& base, const EmbeddingMatrix& other,
                             const Matrix& map) {
  return {other.domain_id, Vocabulary::from_tokens(other.vocab), project_rows(other, map), base.vectors};
}

UniversalRepresentation UniversalRepresentation::build(
    const std::string& base_domain, const std::map<std::string, EmbeddingMatrix>& normalized,
    int embed_dim, Rng& rng) {
  auto base_it = normalized.find(base_domain);
  if (base_it == normalized.end()) throw std::invalid_argument("base domain has no embedding: " + base_domain);

  UniversalRepresentation rep;
  rep.base_domain = base_domain;
  rep.base_embedding = base_it->second;
  const auto& base = rep.base_embedding;
  const int p = base.dim();
  rep.A = Matrix::Identity(p, p);
  rep.E.resize(base.vectors.rows(), embed_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  for (Eigen::Index r = 0; r < rep.E.rows(); ++r) {
    for (Eigen::Index c = 0; c < rep.E.cols(); ++c) rep.E(r, c) = rng.uniform(-scale, scale);
  }
  for (const auto& [id, emb] : normalized) rep.add_domain(emb, embed_dim);
  return rep;
}

void UniversalRepresentation::add_domain(const EmbeddingMatrix& normalized, int embed_dim) {
  AlignmentTransform transform;
  if (normalized.domain_id == base_domain) {
    const int p = base_embedding.dim();
    transform.domain_id = base_domain;
    transform.map = Matrix::Identity(p, p);
    transform.overlap = base_embedding.vocab;
    transform.residual = 0;
  } else {
    transform = fit_orthogonal_map(base_embedding, normalized, overlapping_tokens(base_embedding, normalized));
  }
  geometries[normalized.domain_id] = make_geometry(base_embedding, normalized, transform.map);
  domain_specific[normalized.domain_id] = Matrix::Zero(normalized.vectors.rows(), embed_dim);
  transforms[normalized.domain_id] = std::move(transform);
}

RepresentationParams UniversalRepresentation::params_for(const std::string& domain_id) const {
  return {A, E, domain_specific.at(domain_id)};
}

namespace {

void check_token(const DomainGeometry& g, int token_v) {
  if (token_v < 0 || token_v >= g.aligned.rows()) {
    throw std::out_of_range("token id outside domain vocabulary");
  }
}

}  // namespace

double similarity(const DomainGeometry& geometry, const Matrix& A, int token_v, int token_u) {
  check_token(geometry, token_v);
  if (token_u < 0 || token_u >= geometry.base.rows()) {
    throw std::out_of_range("token id outside base vocabulary");
  }
  return geometry.aligned.row(token_v).dot(A * geometry.base.row(token_u).transpose());
}

Matrix similarity_matrix(const DomainGeometry& geometry, const Matrix& A) {
  return (geometry.aligned * A) * geometry.base.transpose();
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    out.row(r) = (scores.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Vector universal_embedding(const DomainGeometry& geometry, const RepresentationParams& rep, int token_v) {
  check_token(geometry, token_v);
  const Matrix scores = (geometry.aligned.row(token_v) * rep.A) * geometry.base.transpose();
  return (softmax_rows(scores) * rep.E).transpose();
}

Vector multi_domain_representation(const DomainGeometry& geometry, const RepresentationParams& rep,
                                   int token_v) {
  return universal_embedding(geometry, rep, token_v) + rep.Ev.row(token_v).transpose();
}

Matrix representation_table(const DomainGeometry& geometry, const RepresentationParams& rep) {
  return softmax_rows(similarity_matrix(geometry, rep.A)) * rep.E + rep.Ev;
}

}  // namespace metawaf
