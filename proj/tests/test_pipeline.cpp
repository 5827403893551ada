#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "metawaf/hashing.h"
#include "metawaf/pipeline.h"

using namespace metawaf;
namespace fs = std::filesystem;

namespace {

/// A pipeline small enough to run in a few seconds.
RunConfig tiny_config(const fs::path& root) {
  RunConfig c = preset_config("desk");
  c.artifact_root = root;
  apply_seed(c, 3);
  c.synthetic.auxiliary_train_requests = 1500;
  c.synthetic.target_train_requests = 300;
  c.synthetic.target_test_requests = 400;
  c.skipgram.dim = 16;
  c.seq2seq.embed_dim = 16;
  c.seq2seq.hidden_dim = 16;
  c.meta.max_meta_iters = 15;
  c.meta.token_batch = 256;
  c.adapt.steps = 30;
  c.adapt.token_batch = 256;
  c.adapt.lr = 0.01;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("metawaf_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Relative path -> file bytes, for every file under `root`.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

/// Runs the tiny pipeline once per process and shares the artifacts.
const fs::path& tiny_run() {
  static const fs::path root = [] {
    const fs::path r = fresh_dir("pipeline_a");
    const RunConfig c = tiny_config(r);
    stage_synth(c);
    run_pipeline(c);
    return r;
  }();
  return root;
}

}  // namespace

TEST_CASE("presets") {
  CHECK(preset_names() == std::vector<std::string>{"desk", "paper-512"});
  auto desk = preset_config("desk");
  CHECK(desk.seq2seq.embed_dim == 64);
  CHECK(desk.seq2seq.hidden_dim == 64);
  CHECK(desk.threshold_quantile == 0.995);
  CHECK(desk.cache_capacity == (std::size_t{1} << 20));
  CHECK(desk.adapt.lr == 0.001);
  auto paper = preset_config("paper-512");
  CHECK(paper.seq2seq.embed_dim == 512);
  CHECK(paper.seq2seq.hidden_dim == 512);
  CHECK(paper.meta.token_batch == 4096);
  CHECK(paper.meta.max_meta_iters == 5000);
  CHECK_THROWS(preset_config("huge"));
}

TEST_CASE("config JSON round-trips and validates") {
  auto c = preset_config("desk");
  c.auxiliary_domains = {"a", "b"};
  c.target_domain = "t";
  c.meta.inner_lr = 0.01;
  auto back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));

  CHECK_THROWS_WITH(config_from_json({{"bogus", 1}}), doctest::Contains("unknown key 'bogus'"));
  CHECK_THROWS_WITH(config_from_json({{"meta", {{"lr", 1}}}}), doctest::Contains("meta.lr"));
  CHECK_THROWS(config_from_json({{"threshold_quantile", 1.0}}));
  CHECK_THROWS(config_from_json({{"synthetic", {{"poison_ratio", 2.0}}}}));
  CHECK_THROWS(config_from_json({{"cache_capacity", 0}}));
  CHECK(config_from_json({{"preset", "paper-512"}}).seq2seq.hidden_dim == 512);
}

TEST_CASE("the run seed drives every stage seed unless one is given") {
  auto c = config_from_json({{"seed", 5}});
  CHECK(c.seed == 5);
  CHECK(c.skipgram.seed == 5);
  CHECK(c.synthetic.seed == 5);
  CHECK(c.meta.seed == 42);
  CHECK(c.adapt.seed == 66);
  auto explicit_stage = config_from_json({{"seed", 5}, {"meta", {{"seed", 1}}}});
  CHECK(explicit_stage.meta.seed == 1);
  CHECK(explicit_stage.skipgram.seed == 5);
}

TEST_CASE("load_config reads files and reports errors") {
  const fs::path dir = fresh_dir("config");
  std::ofstream(dir / "ok.json") << R"({"preset":"desk","seed":9,"adapt":{"steps":10}})";
  auto c = load_config(dir / "ok.json");
  CHECK(c.adapt.steps == 10);
  CHECK(c.seed == 9);
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS(load_config(dir / "bad.json"));
  CHECK_THROWS(load_config(dir / "missing.json"));
}

TEST_CASE("the pipeline writes every artifact") {
  const fs::path& root = tiny_run();
  const ArtifactPaths p{root};
  for (const auto& id : {"aux1", "aux2", "aux3", "target"}) {
    CHECK(fs::exists(p.strategy(id)));
    CHECK(fs::exists(p.embedding(id)));
  }
  CHECK(fs::exists(p.alignment()));
  CHECK(fs::exists(p.universal()));
  CHECK(fs::exists(p.target_model()));
  CHECK(fs::exists(p.metrics()));

  std::ifstream in(p.detections());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("hash").get<std::string>().size() == 16);
    CHECK(j.contains("score"));
    CHECK(j.contains("threshold"));
    CHECK(j.contains("cache_hit"));
    const auto verdict = j.at("verdict").get<std::string>();
    CHECK((verdict == "attack") == (j.at("score").get<double>() > j.at("threshold").get<double>()));
    ++lines;
  }
  CHECK(lines == read_records(p.test_log(root / "data", "target")).size());

  auto metrics = nlohmann::json::parse(slurp(p.metrics()));
  CHECK(metrics.at("tp").get<std::size_t>() + metrics.at("fp").get<std::size_t>() +
            metrics.at("fn").get<std::size_t>() + metrics.at("tn").get<std::size_t>() ==
        lines);
}

TEST_CASE("training logs carry no labels and test records never reach training artifacts") {
  const fs::path& root = tiny_run();
  const fs::path data = root / "data";
  std::unordered_set<std::uint64_t> train_keys;
  for (const auto& id : {"aux1", "aux2", "aux3", "target"}) {
    for (const auto& r : read_records(ArtifactPaths{}.train_log(data, id))) {
      CHECK_FALSE(r.is_attack);
      train_keys.insert(fnv1a64(id + std::string("\n") + r.request.method + '\n' + r.request.url + '\n' + r.request.body));
    }
  }
  for (const auto& r : read_records(ArtifactPaths{}.test_log(data, "target"))) {
    CHECK(r.is_attack);
    CHECK_FALSE(train_keys.contains(fnv1a64(std::string("target\n") + r.request.method + '\n' + r.request.url + '\n' + r.request.body)));
  }
}

TEST_CASE("detector checkpoints round-trip and refuse other vocabularies") {
  const fs::path& root = tiny_run();
  const ArtifactPaths p{root};
  const auto t = read_tensors(p.target_model());
  CHECK(t.metadata.at("threshold_quantile").get<double>() == 0.995);
  CHECK(t.metadata.at("preset").get<std::string>() == "desk");
  const auto strategy = load_strategy(p.strategy("target"));
  Detector d = detector_from_tensors(t, strategy, Seq2SeqConfig{});
  CHECK(encode_tensors(detector_to_tensors(d, "desk", 0.995)) == encode_tensors(t));

  const auto other = load_strategy(p.strategy("aux1"));
  CHECK_THROWS_WITH(detector_from_tensors(t, other, Seq2SeqConfig{}), doctest::Contains("vocabulary hash"));
}

TEST_CASE("every checkpoint kind round-trips") {
  const fs::path& root = tiny_run();
  const ArtifactPaths p{root};
  const auto emb = read_tensors(p.embedding("aux1"));
  CHECK(encode_tensors(embedding_to_tensors(embedding_from_tensors(emb))) == encode_tensors(emb));
  const auto rep = read_tensors(p.alignment());
  CHECK(encode_tensors(representation_to_tensors(representation_from_tensors(rep))) == encode_tensors(rep));
  const auto uni = read_tensors(p.universal());
  auto um = universal_from_tensors(uni);
  MetaConfig mc = tiny_config(root).meta;
  CHECK(encode_tensors(universal_to_tensors(um, mc)) == encode_tensors(uni));
  CHECK_THROWS(universal_from_tensors(emb));
  CHECK_THROWS(embedding_from_tensors(uni));
}

TEST_CASE("the calibrated threshold admits the training requests") {
  const fs::path& root = tiny_run();
  const ArtifactPaths p{root};
  const auto strategy = load_strategy(p.strategy("target"));
  Detector d = detector_from_tensors(read_tensors(p.target_model()), strategy, Seq2SeqConfig{});
  const auto train = read_records(ArtifactPaths{}.train_log(root / "data", "target"));
  std::size_t below = 0;
  for (const auto& r : train) below += score(d, r.request).verdict == Verdict::kBenign ? 1 : 0;
  CHECK(static_cast<double>(below) >= 0.99 * static_cast<double>(train.size()));
  CHECK(merged_sequence(d, {"target", "GET", "/zzqx/wwvq?kkzz=%27%3Bdrop", {}, {}}).tokens ==
        std::vector<std::string>(4, "_other_"));
}

TEST_CASE("reruns reproduce every artifact bitwise") {
  const fs::path& first = tiny_run();
  const fs::path second = fresh_dir("pipeline_b");
  const RunConfig c = tiny_config(second);
  stage_synth(c);
  run_pipeline(c);
  CHECK(snapshot(first) == snapshot(second));
}

TEST_CASE("resume skips finished stages and recomputes missing ones identically") {
  const fs::path root = fresh_dir("pipeline_resume");
  RunConfig c = tiny_config(root);
  stage_synth(c);
  run_pipeline(c);
  const auto before = snapshot(root);
  fs::remove(ArtifactPaths{root}.target_model());
  c.resume = true;
  const auto time_of_universal = fs::last_write_time(ArtifactPaths{root}.universal());
  run_pipeline(c);
  CHECK(snapshot(root) == before);
  CHECK(fs::last_write_time(ArtifactPaths{root}.universal()) == time_of_universal);
}

TEST_CASE("stage failures name the stage") {
  const fs::path root = fresh_dir("pipeline_fail");
  RunConfig c = tiny_config(root);
  stage_synth(c);
  stage_preprocess(c);
  fs::remove(ArtifactPaths{root}.strategy("target"));
  try {
    stage_embed(c);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "preprocess");
    CHECK(std::string(e.what()).find("target") != std::string::npos);
  }

  const fs::path empty = fresh_dir("pipeline_empty");
  try {
    stage_preprocess(tiny_config(empty));
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "preprocess");
    CHECK(std::string(e.what()).find("missing request log") != std::string::npos);
  }
}

TEST_CASE("detection records serialize the documented fields") {
  DetectionResult r{0xabcULL, 1.5, 2.0, Verdict::kBenign, true};
  auto j = detection_to_json(r);
  CHECK(j.at("hash") == "0000000000000abc");
  CHECK(j.at("verdict") == "benign");
  CHECK(j.at("cache_hit") == true);
  CHECK(j.at("score") == 1.5);
}
