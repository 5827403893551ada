#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "metawaf/alignment.h"
#include "metawaf/detection.h"
#include "metawaf/merging.h"
#include "metawaf/meta_trainer.h"
#include "metawaf/records.h"
#include "metawaf/seq2seq.h"
#include "metawaf/skipgram.h"
#include "metawaf/synthetic.h"
#include "metawaf/tensor_io.h"

namespace metawaf {

inline constexpr const char* kArtifactRootEnv = "METAWAF_ARTIFACT_ROOT";

/// Complete configuration of a pipeline run.
struct RunConfig {
  std::string preset = "desk";
  std::filesystem::path artifact_root = "artifacts";
  /// Directory holding `<domain>.train.jsonl` and `<target>.test.jsonl`;
  /// empty means `<artifact_root>/data`.
  std::filesystem::path data_dir;
  std::vector<std::string> auxiliary_domains;
  std::string target_domain;

  StrategyConfig strategy;
  SkipGramConfig skipgram;
  Seq2SeqConfig seq2seq;
  MetaConfig meta;
  AdamConfig adapt;
  double threshold_quantile = 0.995;
  std::size_t cache_capacity = std::size_t{1} << 20;
  std::uint64_t seed = 1;
  /// Skip stages whose output artifact already exists.
  bool resume = false;

  SyntheticSpec synthetic;
};

/// Named immutable presets: "desk" (d = h = 64) and "paper-512" (d = h = 512,
/// token batch 4096).
RunConfig preset_config(const std::string& preset);
std::vector<std::string> preset_names();

nlohmann::json config_to_json(const RunConfig& config);
/// Starts from the preset named in `j` (default "desk") and applies every
/// field present in `j`.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
/// Sets the run seed and derives every stage seed from it.
void apply_seed(RunConfig& config, std::uint64_t seed);

/// Raised when a pipeline stage fails; names the stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// A domain's training corpus after preprocessing.
struct PreparedDomain {
  std::string domain_id;
  MergingStrategy strategy;
  Vocabulary vocab;
  std::vector<TokenSequence> sequences;
  std::vector<std::vector<int>> encoded;
};

PreparedDomain prepare_domain(const std::string& domain_id, const std::vector<RequestRecord>& train,
                              const StrategyConfig& config);
/// Re-merges `train` under an existing strategy.
PreparedDomain prepare_with_strategy(const MergingStrategy& strategy, const std::vector<RequestRecord>& train);

EmbeddingMatrix embed_domain(const PreparedDomain& domain, const SkipGramConfig& config);

/// Chooses the base among the auxiliary embeddings, aligns every auxiliary
/// domain and the target against it, and initializes A, E, E^v.
UniversalRepresentation align_domains(const std::map<std::string, EmbeddingMatrix>& auxiliary,
                                      const std::vector<EmbeddingMatrix>& others, int embed_dim,
                                      std::uint64_t seed, BaseDomainChoice* choice = nullptr);

std::shared_ptr<const Seq2Seq> model_for(const UniversalRepresentation& rep, const std::string& domain_id,
                                         const Seq2SeqConfig& config);

UniversalModel meta_train(const UniversalRepresentation& rep, const std::vector<PreparedDomain>& auxiliary,
                          const Seq2SeqConfig& seq_config, const MetaConfig& config);

/// Calibrates the threshold as the q-quantile of the training scores.
Detector make_detector(const MergingStrategy& strategy, std::shared_ptr<const Seq2Seq> model, ModelParams params,
                       std::span<const std::vector<int>> calibration, double q);

MetricsReport evaluate_records(const Detector& detector, const std::vector<RequestRecord>& labeled,
                               std::vector<DetectionResult>* results = nullptr);

// Checkpoints.
NamedTensors embedding_to_tensors(const EmbeddingMatrix& m);
EmbeddingMatrix embedding_from_tensors(const NamedTensors& t);
NamedTensors representation_to_tensors(const UniversalRepresentation& rep);
UniversalRepresentation representation_from_tensors(const NamedTensors& t);
NamedTensors universal_to_tensors(const UniversalModel& um, const MetaConfig& config);
UniversalModel universal_from_tensors(const NamedTensors& t);
NamedTensors detector_to_tensors(const Detector& detector, const std::string& preset, double q);
/// Throws when the checkpoint's vocabulary fingerprint differs from the one
/// derived from `strategy`.
Detector detector_from_tensors(const NamedTensors& t, const MergingStrategy& strategy, const Seq2SeqConfig& config);

/// Stage runners over the artifact root. Each reads its inputs from disk,
/// writes its outputs, and raises StageError on failure.
void stage_synth(const RunConfig& config);
void stage_preprocess(const RunConfig& config);
void stage_embed(const RunConfig& config);
void stage_align(const RunConfig& config);
void stage_meta_train(const RunConfig& config);
void stage_adapt(const RunConfig& config);
void stage_detect(const RunConfig& config);
MetricsReport stage_eval(const RunConfig& config);

/// preprocess -> embed -> align -> meta-train -> adapt -> detect -> eval.
MetricsReport run_pipeline(const RunConfig& config);

nlohmann::json metrics_to_json(const MetricsReport& m);
/// {hash, score, threshold, verdict, cache_hit}; the hash is 16 hex digits.
nlohmann::json detection_to_json(const DetectionResult& r);

struct ArtifactPaths {
  std::filesystem::path root;
  std::filesystem::path train_log(const std::filesystem::path& data_dir, const std::string& domain) const;
  std::filesystem::path test_log(const std::filesystem::path& data_dir, const std::string& domain) const;
  std::filesystem::path strategy(const std::string& domain) const;
  std::filesystem::path embedding(const std::string& domain) const;
  std::filesystem::path alignment() const;
  std::filesystem::path universal() const;
  std::filesystem::path target_model() const;
  std::filesystem::path detections() const;
  std::filesystem::path metrics() const;
};

}  // namespace metawaf
