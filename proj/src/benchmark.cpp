#include "metawaf/benchmark.h"

#include <algorithm>
#include <chrono>

namespace metawaf {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double heldout_loss(const Seq2Seq& model, const ModelParams& params, const PreparedDomain& benign) {
  double nll = 0;
  std::size_t positions = 0;
  const std::span<const std::vector<int>> all(benign.encoded);
  for (std::size_t i = 0; i < all.size(); i += 256) {
    const BatchOutput out = model.run(params, all.subspan(i, std::min<std::size_t>(256, all.size() - i)));
    nll += out.total_nll;
    positions += out.total_positions;
  }
  return positions ? nll / static_cast<double>(positions) : 0.0;
}

double roc_auc(const std::vector<DetectionResult>& results, const std::vector<RequestRecord>& labeled) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < results.size(); ++i) (*labeled[i].is_attack ? pos : neg).push_back(results[i].score);
  if (pos.empty() || neg.empty()) return 0.0;
  std::sort(neg.begin(), neg.end());
  double wins = 0;
  for (double s : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), s);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace

AuxiliaryContext build_auxiliary(const RunConfig& config, const std::vector<SyntheticDomain>& domains) {
  const auto t0 = std::chrono::steady_clock::now();
  AuxiliaryContext ctx;
  ctx.config = config;
  std::map<std::string, EmbeddingMatrix> embeddings;
  for (const auto& d : domains) {
    if (d.is_target) continue;
    ctx.auxiliary.push_back(prepare_domain(d.domain_id, d.train, config.strategy));
    embeddings[d.domain_id] = embed_domain(ctx.auxiliary.back(), config.skipgram);
  }
  ctx.representation = align_domains(embeddings, {}, config.seq2seq.embed_dim, config.seed ^ 0xa11a5ULL);
  ctx.universal = meta_train(ctx.representation, ctx.auxiliary, config.seq2seq, config.meta);
  ctx.seconds = seconds_since(t0);
  return ctx;
}

TargetOutcome evaluate_target(const AuxiliaryContext& ctx, const SyntheticDomain& target, bool with_scratch) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig& c = ctx.config;
  TargetOutcome o;
  o.train_requests = target.train.size();

  const PreparedDomain prepared = prepare_domain(target.domain_id, target.train, c.strategy);
  UniversalRepresentation rep = ctx.representation;
  rep.add_domain(embed_domain(prepared, c.skipgram), c.seq2seq.embed_dim);
  const auto model = model_for(rep, target.domain_id, c.seq2seq);

  std::vector<RequestRecord> benign_test;
  for (const auto& r : target.test) {
    if (r.is_attack && !*r.is_attack) benign_test.push_back(r);
  }
  const PreparedDomain heldout = prepare_with_strategy(prepared.strategy, benign_test);

  {
    ModelParams params = adapt_target(ctx.universal, *model, prepared.encoded, c.seq2seq, c.adapt);
    const Detector det = make_detector(prepared.strategy, model, std::move(params), prepared.encoded, c.threshold_quantile);
    std::vector<DetectionResult> results;
    o.adapted = evaluate_records(det, target.test, &results);
    o.adapted_auc = roc_auc(results, target.test);
    o.adapted_threshold = det.threshold;
    if (!heldout.encoded.empty()) o.adapted_heldout_loss = heldout_loss(*model, det.params, heldout);
  }
  if (with_scratch) {
    const MetaInit init{rep.A, rep.E, rep.base_domain};
    ModelParams params = train_from_scratch(init, *model, prepared.encoded, c.seq2seq, c.adapt);
    const Detector det = make_detector(prepared.strategy, model, std::move(params), prepared.encoded, c.threshold_quantile);
    std::vector<DetectionResult> results;
    o.scratch = evaluate_records(det, target.test, &results);
    o.scratch_auc = roc_auc(results, target.test);
    o.scratch_threshold = det.threshold;
    if (!heldout.encoded.empty()) o.scratch_heldout_loss = heldout_loss(*model, det.params, heldout);
  }
  o.seconds = seconds_since(t0);
  return o;
}

nlohmann::json outcome_to_json(const TargetOutcome& o) {
  return {{"train_requests", o.train_requests},
          {"adapted", metrics_to_json(o.adapted)},
          {"scratch", metrics_to_json(o.scratch)},
          {"adapted_heldout_loss", o.adapted_heldout_loss},
          {"scratch_heldout_loss", o.scratch_heldout_loss},
          {"adapted_auc", o.adapted_auc},
          {"scratch_auc", o.scratch_auc},
          {"adapted_threshold", o.adapted_threshold},
          {"scratch_threshold", o.scratch_threshold},
          {"seconds", o.seconds}};
}

}  // namespace metawaf
