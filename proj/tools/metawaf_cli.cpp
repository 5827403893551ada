// metawaf command line: one subcommand per pipeline stage plus `run`.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metawaf/benchmark.h"
#include "metawaf/pipeline.h"

using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::string preset;
  std::string artifact_root;
  std::string data_dir;
  std::vector<std::string> overrides;  // dotted.key=value
  long long seed = -1;
  bool resume = false;
};

// "meta.inner_lr=0.01" -> j["meta"]["inner_lr"] = 0.01. Values parse as JSON
// when they can, otherwise they are taken as strings.
void apply_override(json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq);
  const std::string text = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("--set: bad key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

// preset < config file < --set < METAWAF_ARTIFACT_ROOT < explicit flags
metawaf::RunConfig resolve(const Options& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw std::invalid_argument("cannot open config " + o.config_path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw std::invalid_argument("config " + o.config_path + ": " + e.what());
    }
  }
  if (!o.preset.empty()) j["preset"] = o.preset;
  for (const auto& kv : o.overrides) apply_override(j, kv);
  metawaf::RunConfig c = metawaf::config_from_json(j);
  if (o.seed >= 0) metawaf::apply_seed(c, static_cast<std::uint64_t>(o.seed));
  if (const char* env = std::getenv(metawaf::kArtifactRootEnv); env && *env) c.artifact_root = env;
  if (!o.artifact_root.empty()) c.artifact_root = o.artifact_root;
  if (!o.data_dir.empty()) c.data_dir = o.data_dir;
  if (o.resume) c.resume = true;
  return c;
}

void print_metrics(const metawaf::MetricsReport& m) { std::cout << metawaf::metrics_to_json(m).dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metawaf: unsupervised web-attack detection with cross-domain meta-learning"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("-c,--config", o.config_path, "JSON run configuration");
  app.add_option("-p,--preset", o.preset, "desk | paper-512");
  app.add_option("-a,--artifact-root", o.artifact_root,
                 std::string("artifact directory (default: $") + metawaf::kArtifactRootEnv + " or ./artifacts)");
  app.add_option("-d,--data-dir", o.data_dir, "request logs (default: <artifact-root>/data)");
  app.add_option("--seed", o.seed, "seed for every stage");
  app.add_option("-s,--set", o.overrides, "override a config field, e.g. meta.inner_lr=0.01");
  app.add_flag("--resume", o.resume, "skip stages whose outputs exist");

  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs{{"synth", "write a synthetic multi-domain corpus"},
                              {"preprocess", "induce merging strategies"},
                              {"embed", "train preliminary skip-gram embeddings"},
                              {"align", "choose the base domain and fit alignment maps"},
                              {"meta-train", "train the universal initial model"},
                              {"adapt", "adapt to the target domain and calibrate the threshold"},
                              {"detect", "score the target test log"},
                              {"eval", "compare detections with labels"},
                              {"run", "preprocess through eval"},
                              {"show-config", "print the resolved configuration"}};
  for (const auto& s : subs) app.add_subcommand(s.name, s.help);
  auto* bench = app.add_subcommand("bench", "adapted vs from-scratch on the synthetic benchmark (JSON lines)");
  std::vector<std::uint64_t> bench_seeds{1};
  std::vector<std::size_t> bench_sizes;
  std::vector<double> bench_poison;
  bool bench_no_scratch = false;
  bench->add_option("--seeds", bench_seeds, "benchmark seeds");
  bench->add_option("--target-sizes", bench_sizes, "target training sizes (default: from config)");
  bench->add_option("--poison", bench_poison, "poison ratios (default: from config)");
  bench->add_flag("--no-scratch", bench_no_scratch, "skip the from-scratch baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  metawaf::RunConfig config;
  try {
    config = resolve(o);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (cmd == "bench") {
      if (bench_sizes.empty()) bench_sizes.push_back(config.synthetic.target_train_requests);
      if (bench_poison.empty()) bench_poison.push_back(config.synthetic.poison_ratio);
      for (const auto seed : bench_seeds) {
        metawaf::RunConfig c = config;
        metawaf::apply_seed(c, seed);
        // The auxiliary stage only needs the auxiliary corpora.
        c.synthetic.target_train_requests = 1;
        c.synthetic.target_test_requests = 0;
        const metawaf::AuxiliaryContext ctx = metawaf::build_auxiliary(c, metawaf::generate_synthetic(c.synthetic));
        std::vector<double> windows;
        const auto& ml = ctx.universal.meta_loss;
        for (std::size_t i = 0; i + 50 <= ml.size(); i += 50) {
          double m = 0;
          for (std::size_t k = i; k < i + 50; ++k) m += ml[k];
          windows.push_back(m / 50);
        }
        std::cout << json{{"seed", seed},
                          {"auxiliary_seconds", ctx.seconds},
                          {"meta_iterations", ctx.universal.iterations},
                          {"meta_loss_windows", windows}}
                         .dump()
                  << std::endl;
        for (const auto size : bench_sizes) {
          for (const double eta : bench_poison) {
            metawaf::SyntheticSpec spec = c.synthetic;
            spec.target_train_requests = size;
            spec.target_test_requests = config.synthetic.target_test_requests;
            spec.poison_ratio = eta;
            const auto domains = metawaf::generate_synthetic(spec);
            json out = metawaf::outcome_to_json(metawaf::evaluate_target(ctx, domains.back(), !bench_no_scratch));
            out["seed"] = seed;
            out["poison_ratio"] = eta;
            std::cout << out.dump() << std::endl;
          }
        }
      }
    } else if (cmd == "show-config") {
      std::cout << metawaf::config_to_json(config).dump(2) << '\n';
    } else if (cmd == "synth") {
      metawaf::stage_synth(config);
    } else if (cmd == "preprocess") {
      metawaf::stage_preprocess(config);
    } else if (cmd == "embed") {
      metawaf::stage_embed(config);
    } else if (cmd == "align") {
      metawaf::stage_align(config);
    } else if (cmd == "meta-train") {
      metawaf::stage_meta_train(config);
    } else if (cmd == "adapt") {
      metawaf::stage_adapt(config);
    } else if (cmd == "detect") {
      metawaf::stage_detect(config);
    } else if (cmd == "eval") {
      print_metrics(metawaf::stage_eval(config));
    } else if (cmd == "run") {
      print_metrics(metawaf::run_pipeline(config));
    }
  } catch (const metawaf::StageError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
