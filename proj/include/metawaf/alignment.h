#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metawaf/rng.h"
#include "metawaf/skipgram.h"
#include "metawaf/tensor.h"

namespace metawaf {

struct BaseDomainChoice {
  std::string domain_id;
  std::vector<std::pair<std::string, std::size_t>> overlap_counts;
  std::optional<std::string> warning;
};

/// Picks the domain whose token set overlaps most with all the others
/// (sum of pairwise intersections). Ties go to the smallest domain id.
BaseDomainChoice select_base_domain(
    std::span<const std::pair<std::string, std::set<std::string>>> token_sets);

/// Orthogonal map O taking domain-v vectors into the base space:
/// O * Wv(x) ~ Wu(x) for every overlapping token x.
struct AlignmentTransform {
  std::string domain_id;
  Matrix map;  // d_pre x d_pre
  std::vector<std::string> overlap;
  /// Mean of |O Wv(x) - Wu(x)|^2 over the overlap.
  double residual = 0;

  double orthogonality_defect() const;
};

/// Procrustes solution: with M = sum_x Wu(x) Wv(x)^T = U S V^T, O = U V^T.
/// Both matrices must be row-normalized. Throws std::invalid_argument when
/// the overlap is empty.
AlignmentTransform fit_orthogonal_map(const EmbeddingMatrix& base, const EmbeddingMatrix& other,
                                      const std::vector<std::string>& overlap);

/// Sorted intersection of the two vocabularies.
std::vector<std::string> overlapping_tokens(const EmbeddingMatrix& a, const EmbeddingMatrix& b);

/// sum_x |O Wv(x) - Wu(x)|^2 over the overlap.
double alignment_objective(const EmbeddingMatrix& base, const EmbeddingMatrix& other,
                           const std::vector<std::string>& overlap, const Matrix& map);

/// Wv with every row mapped by O (rows are vectors: Wv * O^T).
Matrix project_rows(const EmbeddingMatrix& other, const Matrix& map);

/// Per-domain frozen inputs of the similarity: the aligned preliminary
/// vectors of domain v and the base domain's preliminary vectors.
struct DomainGeometry {
  std::string domain_id;
  Vocabulary vocab;
  Matrix aligned;  // |Q^v| x d_pre, W^{v->u}
  Matrix base;     // |Q^u| x d_pre, W^u
};

/// Learnable similarity form and tables of the multi-domain representation.
struct RepresentationParams {
  Matrix A;   // d_pre x d_pre, starts at identity
  Matrix E;   // |Q^u| x d, universal table
  Matrix Ev;  // |Q^v| x d, domain-specific table, starts at zero
};

/// Base domain, alignment maps, and learnable tables shared by all domains.
struct UniversalRepresentation {
  std::string base_domain;
  EmbeddingMatrix base_embedding;
  std::map<std::string, AlignmentTransform> transforms;
  std::map<std::string, DomainGeometry> geometries;
  Matrix A;
  Matrix E;
  std::map<std::string, Matrix> domain_specific;

  /// A = I, E ~ U(-scale, scale), every E^v = 0.
  static UniversalRepresentation build(const std::string& base_domain,
                                       const std::map<std::string, EmbeddingMatrix>& normalized,
                                       int embed_dim, Rng& rng);

  /// Aligns a further domain (e.g. the target) against the same base.
  void add_domain(const EmbeddingMatrix& normalized, int embed_dim);

  RepresentationParams params_for(const std::string& domain_id) const;
};

DomainGeometry make_geometry(const EmbeddingMatrix& base, const EmbeddingMatrix& other,
                             const Matrix& map);

/// S(t_v, t_i) = <W^{v->u}(t_v), A W^u(t_i)>.
double similarity(const DomainGeometry& geometry, const Matrix& A, int token_v, int token_u);

/// Full |Q^v| x |Q^u| similarity matrix.
Matrix similarity_matrix(const DomainGeometry& geometry, const Matrix& A);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& scores);

/// U^v(t) = sum_i softmax_i(S(t, .)) E(t_i).
Vector universal_embedding(const DomainGeometry& geometry, const RepresentationParams& rep, int token_v);

/// U^v(t) + E^v(t).
Vector multi_domain_representation(const DomainGeometry& geometry, const RepresentationParams& rep,
                                   int token_v);

/// All rows of the multi-domain representation at once: softmax(S) E + E^v.
Matrix representation_table(const DomainGeometry& geometry, const RepresentationParams& rep);

}  // namespace metawaf
