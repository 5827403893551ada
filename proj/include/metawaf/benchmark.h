#pragma once

#include <string>
#include <vector>

#include "metawaf/pipeline.h"

namespace metawaf {

/// Everything of a benchmark run that depends only on the auxiliary domains:
/// preprocessing, embeddings, base-domain alignment and the universal model.
struct AuxiliaryContext {
  RunConfig config;
  std::vector<PreparedDomain> auxiliary;
  UniversalRepresentation representation;  // auxiliary domains only
  UniversalModel universal;
  double seconds = 0;
};

AuxiliaryContext build_auxiliary(const RunConfig& config, const std::vector<SyntheticDomain>& domains);

struct TargetOutcome {
  std::size_t train_requests = 0;
  MetricsReport adapted;
  MetricsReport scratch;
  /// Mean per-token NLL over the benign test requests.
  double adapted_heldout_loss = 0;
  double scratch_heldout_loss = 0;
  /// Area under the ROC curve of the raw scores (threshold-free).
  double adapted_auc = 0;
  double scratch_auc = 0;
  double adapted_threshold = 0;
  double scratch_threshold = 0;
  double seconds = 0;
};

/// Preprocesses and aligns the target, then trains the adapted model and
/// (when `with_scratch`) a randomly initialized one under the same step
/// budget, and evaluates both on the labeled test split.
TargetOutcome evaluate_target(const AuxiliaryContext& context, const SyntheticDomain& target, bool with_scratch);

nlohmann::json outcome_to_json(const TargetOutcome& o);

}  // namespace metawaf
