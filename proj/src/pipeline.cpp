#include "metawaf/pipeline.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "metawaf/hashing.h"
#include "metawaf/tensor_io.h"

namespace metawaf {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config ---------------------------------------------------------------

std::vector<std::string> preset_names() { return {"desk", "paper-512"}; }

RunConfig preset_config(const std::string& preset) {
  RunConfig c;
  c.preset = preset;
  if (preset == "desk") {
    c.skipgram.dim = 64;
    c.skipgram.max_sequences = 10000;
    c.seq2seq.embed_dim = 64;
    c.seq2seq.hidden_dim = 64;
    c.seq2seq.max_len = 64;
    c.meta.token_batch = 1024;
    c.meta.max_meta_iters = 300;
    c.adapt.token_batch = 1024;
    c.adapt.steps = 600;
    c.adapt.decay_steps = 100;
  } else if (preset == "paper-512") {
    c.skipgram.dim = 64;
    c.seq2seq.embed_dim = 512;
    c.seq2seq.hidden_dim = 512;
    c.seq2seq.max_len = 128;
    c.meta.token_batch = 4096;
    c.meta.max_meta_iters = 5000;
    c.adapt.token_batch = 4096;
    c.adapt.steps = 3000;
    c.adapt.decay_steps = 500;
  } else {
    throw std::invalid_argument("unknown preset: " + preset);
  }
  return c;
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void take_path(const json& j, const char* key, fs::path& field) {
  if (j.contains(key)) field = j.at(key).get<std::string>();
}

void check_known(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw std::invalid_argument("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

}  // namespace

json config_to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["artifact_root"] = c.artifact_root.string();
  j["data_dir"] = c.data_dir.string();
  j["auxiliary_domains"] = c.auxiliary_domains;
  j["target_domain"] = c.target_domain;
  j["threshold_quantile"] = c.threshold_quantile;
  j["cache_capacity"] = c.cache_capacity;
  j["seed"] = c.seed;
  j["resume"] = c.resume;
  j["strategy"] = {{"distinct_value_threshold", c.strategy.distinct_value_threshold},
                   {"match_proportion", c.strategy.match_proportion},
                   {"low_frequency_threshold", c.strategy.low_frequency_threshold}};
  j["skipgram"] = {{"dim", c.skipgram.dim},
                   {"window", c.skipgram.window},
                   {"negatives", c.skipgram.negatives},
                   {"epochs", c.skipgram.epochs},
                   {"learning_rate", c.skipgram.learning_rate},
                   {"min_learning_rate", c.skipgram.min_learning_rate},
                   {"negative_power", c.skipgram.negative_power},
                   {"max_sequences", c.skipgram.max_sequences},
                   {"seed", c.skipgram.seed}};
  j["seq2seq"] = {{"embed_dim", c.seq2seq.embed_dim},
                  {"hidden_dim", c.seq2seq.hidden_dim},
                  {"max_len", c.seq2seq.max_len},
                  {"log_floor", c.seq2seq.log_floor}};
  j["meta"] = {{"inner_lr", c.meta.inner_lr},         {"outer_lr", c.meta.outer_lr},
               {"inner_steps", c.meta.inner_steps},   {"token_batch", c.meta.token_batch},
               {"max_meta_iters", c.meta.max_meta_iters}, {"tolerance", c.meta.tolerance},
               {"loss_window", c.meta.loss_window},   {"max_grad_norm", c.meta.max_grad_norm},
               {"seed", c.meta.seed}};
  j["adapt"] = {{"lr", c.adapt.lr},       {"beta1", c.adapt.beta1},
                {"beta2", c.adapt.beta2}, {"epsilon", c.adapt.epsilon},
                {"decay", c.adapt.decay}, {"decay_steps", c.adapt.decay_steps}, {"steps", c.adapt.steps},
                {"token_batch", c.adapt.token_batch}, {"max_grad_norm", c.adapt.max_grad_norm},
                {"seed", c.adapt.seed}};
  j["synthetic"] = {{"domain_count", c.synthetic.domain_count},
                    {"overlap_fraction", c.synthetic.overlap_fraction},
                    {"shared_grammar", c.synthetic.shared_grammar},
                    {"endpoints_per_domain", c.synthetic.endpoints_per_domain},
                    {"auxiliary_train_requests", c.synthetic.auxiliary_train_requests},
                    {"target_train_requests", c.synthetic.target_train_requests},
                    {"target_test_requests", c.synthetic.target_test_requests},
                    {"attack_rate", c.synthetic.attack_rate},
                    {"poison_ratio", c.synthetic.poison_ratio},
                    {"seed", c.synthetic.seed}};
  return j;
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.skipgram.seed = seed;
  c.meta.seed = seed * 7 + 7;
  c.adapt.seed = seed * 11 + 11;
  c.synthetic.seed = seed;
}

RunConfig config_from_json(const json& j) {
  check_known(j,
              {"preset", "artifact_root", "data_dir", "auxiliary_domains", "target_domain", "threshold_quantile",
               "cache_capacity", "seed", "resume", "strategy", "skipgram", "seq2seq", "meta", "adapt", "synthetic"},
              "");
  RunConfig c = preset_config(j.value("preset", std::string("desk")));
  take_path(j, "artifact_root", c.artifact_root);
  take_path(j, "data_dir", c.data_dir);
  take(j, "auxiliary_domains", c.auxiliary_domains);
  take(j, "target_domain", c.target_domain);
  take(j, "threshold_quantile", c.threshold_quantile);
  take(j, "cache_capacity", c.cache_capacity);
  take(j, "resume", c.resume);
  // One seed drives every stage unless a stage seed is given explicitly.
  if (j.contains("seed")) apply_seed(c, j.at("seed").get<std::uint64_t>());
  if (j.contains("strategy")) {
    const json& s = j.at("strategy");
    check_known(s, {"distinct_value_threshold", "match_proportion", "low_frequency_threshold"}, "strategy");
    take(s, "distinct_value_threshold", c.strategy.distinct_value_threshold);
    take(s, "match_proportion", c.strategy.match_proportion);
    take(s, "low_frequency_threshold", c.strategy.low_frequency_threshold);
  }
  if (j.contains("skipgram")) {
    const json& s = j.at("skipgram");
    check_known(s,
                {"dim", "window", "negatives", "epochs", "learning_rate", "min_learning_rate", "negative_power",
                 "max_sequences", "seed"},
                "skipgram");
    take(s, "dim", c.skipgram.dim);
    take(s, "window", c.skipgram.window);
    take(s, "negatives", c.skipgram.negatives);
    take(s, "epochs", c.skipgram.epochs);
    take(s, "learning_rate", c.skipgram.learning_rate);
    take(s, "min_learning_rate", c.skipgram.min_learning_rate);
    take(s, "negative_power", c.skipgram.negative_power);
    take(s, "max_sequences", c.skipgram.max_sequences);
    take(s, "seed", c.skipgram.seed);
  }
  if (j.contains("seq2seq")) {
    const json& s = j.at("seq2seq");
    check_known(s, {"embed_dim", "hidden_dim", "max_len", "log_floor"}, "seq2seq");
    take(s, "embed_dim", c.seq2seq.embed_dim);
    take(s, "hidden_dim", c.seq2seq.hidden_dim);
    take(s, "max_len", c.seq2seq.max_len);
    take(s, "log_floor", c.seq2seq.log_floor);
  }
  if (j.contains("meta")) {
    const json& s = j.at("meta");
    check_known(s,
                {"inner_lr", "outer_lr", "inner_steps", "token_batch", "max_meta_iters", "tolerance", "loss_window",
                 "max_grad_norm", "seed"},
                "meta");
    take(s, "inner_lr", c.meta.inner_lr);
    take(s, "outer_lr", c.meta.outer_lr);
    take(s, "inner_steps", c.meta.inner_steps);
    take(s, "token_batch", c.meta.token_batch);
    take(s, "max_meta_iters", c.meta.max_meta_iters);
    take(s, "tolerance", c.meta.tolerance);
    take(s, "loss_window", c.meta.loss_window);
    take(s, "max_grad_norm", c.meta.max_grad_norm);
    take(s, "seed", c.meta.seed);
  }
  if (j.contains("adapt")) {
    const json& s = j.at("adapt");
    check_known(s,
                {"lr", "beta1", "beta2", "epsilon", "decay", "decay_steps", "steps", "token_batch", "max_grad_norm", "seed"},
                "adapt");
    take(s, "lr", c.adapt.lr);
    take(s, "beta1", c.adapt.beta1);
    take(s, "beta2", c.adapt.beta2);
    take(s, "epsilon", c.adapt.epsilon);
    take(s, "decay", c.adapt.decay);
    take(s, "decay_steps", c.adapt.decay_steps);
    take(s, "steps", c.adapt.steps);
    take(s, "token_batch", c.adapt.token_batch);
    take(s, "max_grad_norm", c.adapt.max_grad_norm);
    take(s, "seed", c.adapt.seed);
  }
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    check_known(s,
                {"domain_count", "overlap_fraction", "shared_grammar", "endpoints_per_domain",
                 "auxiliary_train_requests", "target_train_requests", "target_test_requests", "attack_rate",
                 "poison_ratio", "seed"},
                "synthetic");
    take(s, "domain_count", c.synthetic.domain_count);
    take(s, "overlap_fraction", c.synthetic.overlap_fraction);
    take(s, "shared_grammar", c.synthetic.shared_grammar);
    take(s, "endpoints_per_domain", c.synthetic.endpoints_per_domain);
    take(s, "auxiliary_train_requests", c.synthetic.auxiliary_train_requests);
    take(s, "target_train_requests", c.synthetic.target_train_requests);
    take(s, "target_test_requests", c.synthetic.target_test_requests);
    take(s, "attack_rate", c.synthetic.attack_rate);
    take(s, "poison_ratio", c.synthetic.poison_ratio);
    take(s, "seed", c.synthetic.seed);
  }

  if (!(c.threshold_quantile > 0 && c.threshold_quantile < 1)) {
    throw std::invalid_argument("config: threshold_quantile must be in (0, 1)");
  }
  if (c.synthetic.overlap_fraction < 0 || c.synthetic.overlap_fraction > 1) {
    throw std::invalid_argument("config: synthetic.overlap_fraction must be in [0, 1]");
  }
  if (c.synthetic.attack_rate < 0 || c.synthetic.attack_rate > 1 || c.synthetic.poison_ratio < 0 ||
      c.synthetic.poison_ratio > 1) {
    throw std::invalid_argument("config: synthetic rates must be in [0, 1]");
  }
  if (c.seq2seq.embed_dim <= 0 || c.seq2seq.hidden_dim <= 0 || c.skipgram.dim <= 0) {
    throw std::invalid_argument("config: dimensions must be positive");
  }
  if (c.cache_capacity == 0) throw std::invalid_argument("config: cache_capacity must be positive");
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---- paths ----------------------------------------------------------------

fs::path ArtifactPaths::train_log(const fs::path& data_dir, const std::string& domain) const {
  return data_dir / (domain + ".train.jsonl");
}
fs::path ArtifactPaths::test_log(const fs::path& data_dir, const std::string& domain) const {
  return data_dir / (domain + ".test.jsonl");
}
fs::path ArtifactPaths::strategy(const std::string& domain) const { return root / "strategies" / (domain + ".json"); }
fs::path ArtifactPaths::embedding(const std::string& domain) const { return root / "embeddings" / (domain + ".bin"); }
fs::path ArtifactPaths::alignment() const { return root / "alignment.bin"; }
fs::path ArtifactPaths::universal() const { return root / "universal.bin"; }
fs::path ArtifactPaths::target_model() const { return root / "target_model.bin"; }
fs::path ArtifactPaths::detections() const { return root / "detections.jsonl"; }
fs::path ArtifactPaths::metrics() const { return root / "metrics.json"; }

// ---- in-memory stages ----------------------------------------------------

PreparedDomain prepare_with_strategy(const MergingStrategy& strategy, const std::vector<RequestRecord>& train) {
  PreparedDomain d;
  d.domain_id = strategy.domain_id;
  d.strategy = strategy;
  d.vocab = Vocabulary(strategy.token_set);
  d.sequences.reserve(train.size());
  d.encoded.reserve(train.size());
  for (const auto& r : train) {
    TokenSequence seq = apply_strategy(strategy, parse_request(r.request));
    seq.domain_id = strategy.domain_id;
    d.encoded.push_back(d.vocab.encode(seq.tokens));
    d.sequences.push_back(std::move(seq));
  }
  return d;
}

PreparedDomain prepare_domain(const std::string& domain_id, const std::vector<RequestRecord>& train,
                              const StrategyConfig& config) {
  if (train.empty()) throw std::invalid_argument("domain " + domain_id + " has no training requests");
  std::vector<ParsedRequest> parsed;
  parsed.reserve(train.size());
  for (const auto& r : train) parsed.push_back(parse_request(r.request));
  return prepare_with_strategy(build_strategy(parsed, config, domain_id), train);
}

EmbeddingMatrix embed_domain(const PreparedDomain& domain, const SkipGramConfig& config) {
  std::vector<std::vector<std::string>> wrapped;
  wrapped.reserve(domain.sequences.size());
  for (const auto& s : domain.sequences) wrapped.push_back(domain.vocab.wrap(s.tokens));
  SkipGramConfig c = config;
  // Distinct streams per domain from one configured seed.
  c.seed = config.seed ^ fnv1a64(domain.domain_id);
  return normalize_rows(train_skipgram(wrapped, domain.vocab, c, domain.domain_id));
}

UniversalRepresentation align_domains(const std::map<std::string, EmbeddingMatrix>& auxiliary,
                                      const std::vector<EmbeddingMatrix>& others, int embed_dim,
                                      std::uint64_t seed, BaseDomainChoice* choice) {
  std::vector<std::pair<std::string, std::set<std::string>>> sets;
  for (const auto& [id, emb] : auxiliary) sets.emplace_back(id, std::set<std::string>(emb.vocab.begin(), emb.vocab.end()));
  BaseDomainChoice base;
  if (sets.size() == 1) {
    base.domain_id = sets.front().first;
  } else {
    base = select_base_domain(sets);
  }
  Rng rng(seed);
  UniversalRepresentation rep = UniversalRepresentation::build(base.domain_id, auxiliary, embed_dim, rng);
  for (const auto& emb : others) rep.add_domain(emb, embed_dim);
  if (choice) *choice = std::move(base);
  return rep;
}

std::shared_ptr<const Seq2Seq> model_for(const UniversalRepresentation& rep, const std::string& domain_id,
                                         const Seq2SeqConfig& config) {
  auto it = rep.geometries.find(domain_id);
  if (it == rep.geometries.end()) throw std::invalid_argument("domain is not aligned: " + domain_id);
  return std::make_shared<const Seq2Seq>(it->second, config);
}

UniversalModel meta_train(const UniversalRepresentation& rep, const std::vector<PreparedDomain>& auxiliary,
                          const Seq2SeqConfig& seq_config, const MetaConfig& config) {
  std::vector<DomainCorpus> corpora;
  for (const auto& d : auxiliary) corpora.push_back({d.domain_id, model_for(rep, d.domain_id, seq_config), d.encoded});
  MetaInit init{rep.A, rep.E, rep.base_domain};
  return train_universal(corpora, init, seq_config, config);
}

Detector make_detector(const MergingStrategy& strategy, std::shared_ptr<const Seq2Seq> model, ModelParams params,
                       std::span<const std::vector<int>> calibration, double q) {
  Detector d{strategy, std::move(model), std::move(params), 0.0};
  d.threshold = calibrate_threshold(score_sequences(*d.model, d.params, calibration), q);
  return d;
}

MetricsReport evaluate_records(const Detector& detector, const std::vector<RequestRecord>& labeled,
                               std::vector<DetectionResult>* results) {
  std::vector<RawRequest> requests;
  std::unique_ptr<bool[]> labels(new bool[labeled.size()]);
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (!labeled[i].is_attack) throw std::invalid_argument("evaluation record " + std::to_string(i) + " has no label");
    requests.push_back(labeled[i].request);
    labels[i] = *labeled[i].is_attack;
  }
  ScoreCache cache(std::max<std::size_t>(1, requests.size()));
  auto out = detect_stream(detector, &cache, requests);
  MetricsReport m = evaluate(out, std::span<const bool>(labels.get(), labeled.size()));
  if (results) *results = std::move(out);
  return m;
}

json metrics_to_json(const MetricsReport& m) {
  return {{"tp", m.tp},
          {"fp", m.fp},
          {"fn", m.fn},
          {"tn", m.tn},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"precision_undefined", m.precision_undefined},
          {"recall_undefined", m.recall_undefined}};
}

// ---- checkpoints ----------------------------------------------------------

namespace {

Matrix column(const std::vector<double>& v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void add_params(NamedTensors& t, const std::string& prefix, const ModelParams& p) {
  p.for_each([&](std::string_view name, const Matrix& m) {
    if (m.size() > 0) t.add(prefix + std::string(name), m);
  });
}

ModelParams read_params(const NamedTensors& t, const std::string& prefix, bool optional_bank) {
  ModelParams p;
  p.for_each([&](std::string_view name, Matrix& m) {
    const std::string key = prefix + std::string(name);
    if (optional_bank && !t.contains(key)) return;
    m = t.at(key);
  });
  return p;
}

}  // namespace

NamedTensors embedding_to_tensors(const EmbeddingMatrix& m) {
  NamedTensors t;
  t.metadata = {{"kind", "embedding"},
                {"domain", m.domain_id},
                {"vocab", m.vocab},
                {"normalized", m.normalized},
                {"degenerate_rows", m.degenerate_rows}};
  t.add("vectors", m.vectors);
  return t;
}

EmbeddingMatrix embedding_from_tensors(const NamedTensors& t) {
  if (t.metadata.value("kind", "") != "embedding") throw std::invalid_argument("not an embedding checkpoint");
  EmbeddingMatrix m;
  m.domain_id = t.metadata.at("domain").get<std::string>();
  m.vocab = t.metadata.at("vocab").get<std::vector<std::string>>();
  m.normalized = t.metadata.at("normalized").get<bool>();
  m.degenerate_rows = t.metadata.at("degenerate_rows").get<std::vector<int>>();
  m.vectors = t.at("vectors");
  if (static_cast<std::size_t>(m.vectors.rows()) != m.vocab.size()) {
    throw std::invalid_argument("embedding checkpoint rows do not match its vocabulary");
  }
  return m;
}

NamedTensors representation_to_tensors(const UniversalRepresentation& rep) {
  NamedTensors t;
  json domains = json::object();
  for (const auto& [id, tr] : rep.transforms) {
    domains[id] = {{"vocab", rep.geometries.at(id).vocab.tokens()},
                   {"overlap", tr.overlap},
                   {"residual", tr.residual}};
  }
  t.metadata = {{"kind", "alignment"},
                {"base_domain", rep.base_domain},
                {"base_vocab", rep.base_embedding.vocab},
                {"domains", domains}};
  t.add("base", rep.base_embedding.vectors);
  t.add("A", rep.A);
  t.add("E", rep.E);
  for (const auto& [id, tr] : rep.transforms) {
    t.add("map/" + id, tr.map);
    t.add("aligned/" + id, rep.geometries.at(id).aligned);
    t.add("Ev/" + id, rep.domain_specific.at(id));
  }
  return t;
}

UniversalRepresentation representation_from_tensors(const NamedTensors& t) {
  if (t.metadata.value("kind", "") != "alignment") throw std::invalid_argument("not an alignment checkpoint");
  UniversalRepresentation rep;
  rep.base_domain = t.metadata.at("base_domain").get<std::string>();
  rep.base_embedding.domain_id = rep.base_domain;
  rep.base_embedding.vocab = t.metadata.at("base_vocab").get<std::vector<std::string>>();
  rep.base_embedding.vectors = t.at("base");
  rep.base_embedding.normalized = true;
  rep.A = t.at("A");
  rep.E = t.at("E");
  for (const auto& [id, info] : t.metadata.at("domains").items()) {
    AlignmentTransform tr;
    tr.domain_id = id;
    tr.map = t.at("map/" + id);
    tr.overlap = info.at("overlap").get<std::vector<std::string>>();
    tr.residual = info.at("residual").get<double>();
    DomainGeometry g;
    g.domain_id = id;
    g.vocab = Vocabulary::from_tokens(info.at("vocab").get<std::vector<std::string>>());
    g.aligned = t.at("aligned/" + id);
    g.base = rep.base_embedding.vectors;
    rep.transforms[id] = std::move(tr);
    rep.geometries[id] = std::move(g);
    rep.domain_specific[id] = t.at("Ev/" + id);
  }
  return rep;
}

NamedTensors universal_to_tensors(const UniversalModel& um, const MetaConfig& config) {
  NamedTensors t;
  std::vector<std::string> domains;
  for (const auto& [id, bank] : um.banks) domains.push_back(id);
  t.metadata = {{"kind", "universal"},
                {"base_domain", um.base_domain},
                {"iterations", um.iterations},
                {"converged", um.converged},
                {"domains", domains},
                {"inner_lr", config.inner_lr},
                {"outer_lr", config.outer_lr},
                {"inner_steps", config.inner_steps},
                {"token_batch", config.token_batch}};
  add_params(t, "shared/", um.shared);
  for (const auto& [id, bank] : um.banks) {
    t.add("bank/" + id + "/Ev", bank.Ev);
    t.add("bank/" + id + "/gen_w", bank.gen_w);
    t.add("bank/" + id + "/gen_b", bank.gen_b);
  }
  t.add("meta_loss", column(um.meta_loss));
  return t;
}

UniversalModel universal_from_tensors(const NamedTensors& t) {
  if (t.metadata.value("kind", "") != "universal") throw std::invalid_argument("not a universal-model checkpoint");
  UniversalModel um;
  um.base_domain = t.metadata.at("base_domain").get<std::string>();
  um.iterations = t.metadata.at("iterations").get<std::size_t>();
  um.converged = t.metadata.at("converged").get<bool>();
  um.shared = read_params(t, "shared/", true);
  for (const auto& id : t.metadata.at("domains").get<std::vector<std::string>>()) {
    um.banks[id] = {t.at("bank/" + id + "/Ev"), t.at("bank/" + id + "/gen_w"), t.at("bank/" + id + "/gen_b")};
  }
  const Matrix& loss = t.at("meta_loss");
  um.meta_loss.assign(loss.data(), loss.data() + loss.size());
  return um;
}

NamedTensors detector_to_tensors(const Detector& detector, const std::string& preset, double q) {
  const auto& g = detector.model->geometry();
  const auto& cfg = detector.model->config();
  NamedTensors t;
  t.metadata = {{"kind", "detector"},
                {"domain", detector.strategy.domain_id},
                {"preset", preset},
                {"vocab_hash", hex64(g.vocab.fingerprint())},
                {"vocab", g.vocab.tokens()},
                {"embed_dim", cfg.embed_dim},
                {"hidden_dim", cfg.hidden_dim},
                {"max_len", cfg.max_len},
                {"threshold_quantile", q}};
  t.add("threshold", Matrix::Constant(1, 1, detector.threshold));
  t.add("aligned", g.aligned);
  t.add("base", g.base);
  add_params(t, "", detector.params);
  return t;
}

Detector detector_from_tensors(const NamedTensors& t, const MergingStrategy& strategy, const Seq2SeqConfig& config) {
  if (t.metadata.value("kind", "") != "detector") throw std::invalid_argument("not a detector checkpoint");
  const Vocabulary vocab(strategy.token_set);
  const std::string expected = hex64(vocab.fingerprint());
  const std::string stored = t.metadata.at("vocab_hash").get<std::string>();
  if (stored != expected) {
    throw std::invalid_argument("detector checkpoint vocabulary hash " + stored +
                                " does not match the strategy's vocabulary " + expected);
  }
  Seq2SeqConfig cfg = config;
  cfg.embed_dim = t.metadata.at("embed_dim").get<int>();
  cfg.hidden_dim = t.metadata.at("hidden_dim").get<int>();
  cfg.max_len = t.metadata.at("max_len").get<std::size_t>();
  DomainGeometry g{strategy.domain_id, vocab, t.at("aligned"), t.at("base")};
  Detector d;
  d.strategy = strategy;
  d.model = std::make_shared<const Seq2Seq>(g, cfg);
  d.params = read_params(t, "", false);
  d.threshold = t.at("threshold")(0, 0);
  return d;
}

// ---- disk stages ----------------------------------------------------------

namespace {

struct Domains {
  std::vector<std::string> auxiliary;
  std::string target;
};

Domains resolve_domains(const RunConfig& c) {
  Domains d{c.auxiliary_domains, c.target_domain};
  if (d.auxiliary.empty() && d.target.empty()) {
    const std::size_t m = c.synthetic.domain_count;
    for (std::size_t i = 0; i + 1 < m; ++i) d.auxiliary.push_back(synthetic_domain_id(i, m));
    d.target = synthetic_domain_id(m - 1, m);
  }
  if (d.auxiliary.empty()) throw std::invalid_argument("config: no auxiliary domains");
  if (d.target.empty()) throw std::invalid_argument("config: no target domain");
  return d;
}

fs::path data_dir(const RunConfig& c) { return c.data_dir.empty() ? c.artifact_root / "data" : c.data_dir; }

ArtifactPaths paths(const RunConfig& c) { return {c.artifact_root}; }

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<RequestRecord> read_domain_log(const fs::path& path, const std::string& domain) {
  if (!fs::exists(path)) throw std::runtime_error("missing request log " + path.string());
  auto records = read_records(path);
  for (auto& r : records) {
    if (r.request.domain_id.empty()) r.request.domain_id = domain;
  }
  return records;
}

MergingStrategy load_strategy_for(const RunConfig& c, const std::string& domain) {
  const fs::path p = paths(c).strategy(domain);
  if (!fs::exists(p)) {
    throw StageError("preprocess", "missing strategy for domain '" + domain + "' (" + p.string() + ")");
  }
  return load_strategy(p);
}

PreparedDomain load_prepared(const RunConfig& c, const std::string& domain) {
  const MergingStrategy s = load_strategy_for(c, domain);
  return prepare_with_strategy(s, read_domain_log(paths(c).train_log(data_dir(c), domain), domain));
}

bool skip(const RunConfig& c, std::initializer_list<fs::path> outputs) {
  if (!c.resume) return false;
  for (const auto& p : outputs) {
    if (!fs::exists(p)) return false;
  }
  return true;
}

}  // namespace

void stage_synth(const RunConfig& c) {
  in_stage("synth", [&] {
    const auto dir = data_dir(c);
    fs::create_directories(dir);
    for (const auto& d : generate_synthetic(c.synthetic)) {
      // Labels only ship with the evaluation split.
      std::vector<RequestRecord> train = d.train;
      for (auto& r : train) r.is_attack.reset();
      write_records(ArtifactPaths{}.train_log(dir, d.domain_id), train);
      if (d.is_target) write_records(ArtifactPaths{}.test_log(dir, d.domain_id), d.test);
    }
  });
}

void stage_preprocess(const RunConfig& c) {
  in_stage("preprocess", [&] {
    const Domains d = resolve_domains(c);
    std::vector<std::string> all = d.auxiliary;
    all.push_back(d.target);
    for (const auto& id : all) {
      const fs::path out = paths(c).strategy(id);
      if (skip(c, {out})) continue;
      const PreparedDomain p = prepare_domain(id, read_domain_log(paths(c).train_log(data_dir(c), id), id), c.strategy);
      ensure_parent(out);
      save_strategy(p.strategy, out);
    }
  });
}

void stage_embed(const RunConfig& c) {
  in_stage("embed", [&] {
    const Domains d = resolve_domains(c);
    std::vector<std::string> all = d.auxiliary;
    all.push_back(d.target);
    for (const auto& id : all) {
      const fs::path out = paths(c).embedding(id);
      if (skip(c, {out})) continue;
      const PreparedDomain p = load_prepared(c, id);
      ensure_parent(out);
      write_tensors(out, embedding_to_tensors(embed_domain(p, c.skipgram)));
    }
  });
}

void stage_align(const RunConfig& c) {
  in_stage("align", [&] {
    const fs::path out = paths(c).alignment();
    if (skip(c, {out})) return;
    const Domains d = resolve_domains(c);
    std::map<std::string, EmbeddingMatrix> aux;
    for (const auto& id : d.auxiliary) aux[id] = embedding_from_tensors(read_tensors(paths(c).embedding(id)));
    const std::vector<EmbeddingMatrix> others{embedding_from_tensors(read_tensors(paths(c).embedding(d.target)))};
    const UniversalRepresentation rep = align_domains(aux, others, c.seq2seq.embed_dim, c.seed ^ 0xa11a5ULL);
    ensure_parent(out);
    write_tensors(out, representation_to_tensors(rep));
  });
}

void stage_meta_train(const RunConfig& c) {
  in_stage("meta-train", [&] {
    const fs::path out = paths(c).universal();
    if (skip(c, {out})) return;
    const Domains d = resolve_domains(c);
    const UniversalRepresentation rep = representation_from_tensors(read_tensors(paths(c).alignment()));
    std::vector<PreparedDomain> aux;
    for (const auto& id : d.auxiliary) aux.push_back(load_prepared(c, id));
    const UniversalModel um = meta_train(rep, aux, c.seq2seq, c.meta);
    write_tensors(out, universal_to_tensors(um, c.meta));
  });
}

void stage_adapt(const RunConfig& c) {
  in_stage("adapt", [&] {
    const fs::path out = paths(c).target_model();
    if (skip(c, {out})) return;
    const Domains d = resolve_domains(c);
    const PreparedDomain target = load_prepared(c, d.target);
    const UniversalRepresentation rep = representation_from_tensors(read_tensors(paths(c).alignment()));
    const UniversalModel um = universal_from_tensors(read_tensors(paths(c).universal()));
    auto model = model_for(rep, d.target, c.seq2seq);
    if (!(model->geometry().vocab == target.vocab)) {
      throw std::runtime_error("alignment vocabulary of '" + d.target + "' differs from its strategy");
    }
    ModelParams params = adapt_target(um, *model, target.encoded, c.seq2seq, c.adapt);
    const Detector det = make_detector(target.strategy, model, std::move(params), target.encoded, c.threshold_quantile);
    write_tensors(out, detector_to_tensors(det, c.preset, c.threshold_quantile));
  });
}

void stage_detect(const RunConfig& c) {
  in_stage("detect", [&] {
    const fs::path out = paths(c).detections();
    if (skip(c, {out})) return;
    const Domains d = resolve_domains(c);
    const Detector det =
        detector_from_tensors(read_tensors(paths(c).target_model()), load_strategy_for(c, d.target), c.seq2seq);
    const auto records = read_domain_log(paths(c).test_log(data_dir(c), d.target), d.target);
    std::vector<RawRequest> requests;
    for (const auto& r : records) requests.push_back(r.request);
    ScoreCache cache(c.cache_capacity);
    const auto results = detect_stream(det, &cache, requests);
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out.string());
    for (const auto& r : results) f << detection_to_json(r).dump() << '\n';
  });
}

json detection_to_json(const DetectionResult& r) {
  return {{"hash", hex64(r.sequence_hash)},
          {"score", r.score},
          {"threshold", r.threshold},
          {"verdict", std::string(verdict_name(r.verdict))},
          {"cache_hit", r.cache_hit}};
}

MetricsReport stage_eval(const RunConfig& c) {
  return in_stage("eval", [&] {
    const Domains d = resolve_domains(c);
    const auto records = read_domain_log(paths(c).test_log(data_dir(c), d.target), d.target);
    std::ifstream in(paths(c).detections());
    if (!in) throw std::runtime_error("missing " + paths(c).detections().string());
    std::vector<DetectionResult> results;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      DetectionResult r;
      r.sequence_hash = std::stoull(j.at("hash").get<std::string>(), nullptr, 16);
      r.score = j.at("score").get<double>();
      r.threshold = j.at("threshold").get<double>();
      r.verdict = j.at("verdict").get<std::string>() == "attack" ? Verdict::kAttack : Verdict::kBenign;
      r.cache_hit = j.at("cache_hit").get<bool>();
      results.push_back(r);
    }
    std::unique_ptr<bool[]> labels(new bool[records.size()]);
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!records[i].is_attack) throw std::invalid_argument("test record " + std::to_string(i + 1) + " has no label");
      labels[i] = *records[i].is_attack;
    }
    const MetricsReport m = evaluate(results, std::span<const bool>(labels.get(), records.size()));
    std::ofstream f(paths(c).metrics(), std::ios::binary);
    f << metrics_to_json(m).dump(2) << '\n';
    return m;
  });
}

MetricsReport run_pipeline(const RunConfig& c) {
  fs::create_directories(c.artifact_root);
  stage_preprocess(c);
  stage_embed(c);
  stage_align(c);
  stage_meta_train(c);
  stage_adapt(c);
  stage_detect(c);
  return stage_eval(c);
}

}  // namespace metawaf
