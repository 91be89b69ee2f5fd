#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "patchvlad/patchvlad.h"

namespace {

struct CliFailure {
  pv_status status;
  std::string message;
};

void check(pv_status s) {
  if (s != PV_OK) throw CliFailure{s, pv_last_error_message()};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};

using Model = std::unique_ptr<pv_model, Deleter<pv_model, pv_model_free>>;
using FMap = std::unique_ptr<pv_feature_map, Deleter<pv_feature_map, pv_feature_map_free>>;
using Config = std::unique_ptr<pv_config, Deleter<pv_config, pv_config_free>>;
using Manifest = std::unique_ptr<pv_manifest, Deleter<pv_manifest, pv_manifest_free>>;
using Index = std::unique_ptr<pv_index, Deleter<pv_index, pv_index_free>>;
using Results = std::unique_ptr<pv_results, Deleter<pv_results, pv_results_free>>;
using PairScore = std::unique_ptr<pv_pair_score, Deleter<pv_pair_score, pv_pair_score_free>>;
using Report = std::unique_ptr<pv_report, Deleter<pv_report, pv_report_free>>;
using OwnedString = std::unique_ptr<char, Deleter<char, pv_string_free>>;

template <typename Handle, typename Fn>
Handle make(Fn&& fn) {
  typename Handle::pointer raw = nullptr;
  check(fn(&raw));
  return Handle(raw);
}

std::string take(char* s) {
  OwnedString owned(s);
  return owned ? std::string(owned.get()) : std::string();
}

Config load_config(const std::string& path, const std::string& preset,
                   const std::vector<std::string>& overrides) {
  Config cfg;
  if (!path.empty()) {
    cfg = make<Config>([&](pv_config** o) { return pv_config_load(path.c_str(), o); });
  } else if (!preset.empty()) {
    cfg = make<Config>([&](pv_config** o) { return pv_config_preset(preset.c_str(), o); });
  } else {
    cfg = make<Config>([](pv_config** o) { return pv_config_default(o); });
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw CliFailure{PV_ERR_INVALID_ARGUMENT, "--set expects key=json, got '" + kv + "'"};
    }
    check(pv_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  return cfg;
}

// --model wins, then the config's model entry, then the index's.
Model resolve_model(const std::string& flag, const pv_config* cfg, const pv_index* index) {
  std::string path = flag;
  if (path.empty() && pv_config_model_path(cfg)) path = pv_config_model_path(cfg);
  if (path.empty() && index && pv_index_model_path(index)) path = pv_index_model_path(index);
  if (path.empty()) {
    throw CliFailure{PV_ERR_INVALID_ARGUMENT,
                     "no model given (use --model, a config \"model\" entry, or an index built with one)"};
  }
  return make<Model>([&](pv_model** o) { return pv_model_load(path.c_str(), o); });
}

void write_or_print(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f || std::fwrite(text.data(), 1, text.size(), f) != text.size()) {
    if (f) std::fclose(f);
    throw CliFailure{PV_ERR_IO, "cannot write '" + path + "'"};
  }
  std::fclose(f);
}

const char* dtype_name(std::uint8_t dtype) { return dtype == 1 ? "float32" : "unknown"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale patch-level VLAD place recognition"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pv_version());

  std::string manifest_path, model_path, out_path, index_path, query_path, config_path, preset;
  std::string results_path, a_path, b_path, stage = "reranked";
  std::vector<std::string> overrides;
  std::size_t threads = 0;
  bool dump = false, csv = false, json = false;
  std::vector<std::string> info_paths;

  auto* index_cmd = app.add_subcommand("index", "Build the global descriptor index of a manifest's references");
  index_cmd->add_option("--manifest", manifest_path, "Dataset manifest")->required();
  index_cmd->add_option("--model", model_path, "Model file")->required();
  index_cmd->add_option("--out", out_path, "Index file to write")->required();

  auto add_config_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration file");
    cmd->add_option("--preset", preset, "Named preset when no --config is given")
        ->check(CLI::IsMember({"performance", "balanced", "speed", "storage"}));
    cmd->add_option("--set", overrides, "Override a config key, key=json (repeatable)");
    cmd->add_option("--model", model_path, "Model file (overrides the config)");
  };

  auto* retrieve_cmd = app.add_subcommand("retrieve", "Shortlist and re-rank queries against an index");
  retrieve_cmd->add_option("--index", index_path, "Index file")->required();
  retrieve_cmd->add_option("--query", query_path, "Query feature map or manifest")->required();
  retrieve_cmd->add_option("--out", out_path, "Results file to write")->required();
  retrieve_cmd->add_option("--threads", threads, "Worker threads (0: PATCHVLAD_THREADS or all cores)");
  add_config_options(retrieve_cmd);

  auto* match_cmd = app.add_subcommand("match-pair", "Score one pair of feature maps");
  match_cmd->add_option("--a", a_path, "First feature map (query side)")->required();
  match_cmd->add_option("--b", b_path, "Second feature map (reference side)")->required();
  match_cmd->add_flag("--dump", dump, "Include every correspondence with its patch centres");
  add_config_options(match_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Recall@N of a results file");
  eval_cmd->add_option("--results", results_path, "Results file")->required();
  eval_cmd->add_option("--manifest", manifest_path, "Dataset manifest with ground truth")->required();
  eval_cmd->add_option("--stage", stage, "Ranking to evaluate")
      ->check(CLI::IsMember({"reranked", "shortlist"}));
  eval_cmd->add_flag("--csv", csv, "Emit recall-vs-N rows as CSV");
  eval_cmd->add_flag("--json", json, "Emit the full report as JSON");
  eval_cmd->add_option("--out", out_path, "Write the report here instead of stdout");

  pv_synthetic_spec spec;
  pv_synthetic_spec_default(&spec);
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic benchmark");
  gen_cmd->add_option("--out", out_path, "Output directory")->required();
  gen_cmd->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--references", spec.num_references, "Reference images")->capture_default_str();
  gen_cmd->add_option("--queries", spec.num_queries, "Query images")->capture_default_str();
  gen_cmd->add_option("--height", spec.height, "Feature map rows")->capture_default_str();
  gen_cmd->add_option("--width", spec.width, "Feature map columns")->capture_default_str();
  gen_cmd->add_option("--dim", spec.dim, "Feature depth D")->capture_default_str();
  gen_cmd->add_option("--clusters", spec.num_clusters, "Clusters K")->capture_default_str();
  gen_cmd->add_option("--proj-dim", spec.proj_dim, "Projection size D_proj")->capture_default_str();
  gen_cmd->add_option("--max-shift", spec.max_shift, "Largest query shift in cells")->capture_default_str();
  gen_cmd->add_option("--noise", spec.noise, "Query noise standard deviation")->capture_default_str();
  gen_cmd->add_option("--twin-fraction", spec.twin_fraction, "Share of shuffled-twin references")
      ->capture_default_str();
  gen_cmd->add_option("--twin-block", spec.twin_block, "Shuffle tile size for twins")->capture_default_str();

  auto* validate_cmd = app.add_subcommand("validate-model", "Check a model file's shapes and values");
  validate_cmd->add_option("model", model_path, "Model file")->required();

  auto* info_cmd = app.add_subcommand("info", "Print tensor file headers");
  info_cmd->add_option("files", info_paths, "Tensor files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: code=invalid_argument message=" << e.what() << "\n";
    return 2;
  }

  try {
    if (*index_cmd) {
      const auto model = make<Model>([&](pv_model** o) { return pv_model_load(model_path.c_str(), o); });
      const auto manifest =
          make<Manifest>([&](pv_manifest** o) { return pv_manifest_load(manifest_path.c_str(), o); });
      const auto index = make<Index>(
          [&](pv_index** o) { return pv_index_build(manifest.get(), model.get(), o); });
      check(pv_index_save(index.get(), out_path.c_str(), model_path.c_str()));
      std::cout << "indexed " << pv_index_size(index.get()) << " references\n";
    } else if (*retrieve_cmd) {
      auto cfg = load_config(config_path, preset, overrides);
      if (threads > 0) check(pv_config_set(cfg.get(), "threads", std::to_string(threads).c_str()));
      const auto index = make<Index>([&](pv_index** o) { return pv_index_load(index_path.c_str(), o); });
      const auto model = resolve_model(model_path, cfg.get(), index.get());
      Results results;
      if (pv_is_tensor_file(query_path.c_str())) {
        const auto query =
            make<FMap>([&](pv_feature_map** o) { return pv_feature_map_load(query_path.c_str(), o); });
        results = make<Results>([&](pv_results** o) {
          return pv_retrieve_map(index.get(), query.get(), cfg.get(), model.get(), o);
        });
      } else {
        const auto queries =
            make<Manifest>([&](pv_manifest** o) { return pv_manifest_load(query_path.c_str(), o); });
        results = make<Results>([&](pv_results** o) {
          return pv_retrieve_manifest(index.get(), queries.get(), cfg.get(), model.get(), o);
        });
      }
      check(pv_results_save(results.get(), out_path.c_str()));
      std::cout << "retrieved " << pv_results_count(results.get()) << " queries\n";
    } else if (*match_cmd) {
      const auto cfg = load_config(config_path, preset, overrides);
      const auto model = resolve_model(model_path, cfg.get(), nullptr);
      const auto a = make<FMap>([&](pv_feature_map** o) { return pv_feature_map_load(a_path.c_str(), o); });
      const auto b = make<FMap>([&](pv_feature_map** o) { return pv_feature_map_load(b_path.c_str(), o); });
      const auto score = make<PairScore>([&](pv_pair_score** o) {
        return pv_match_pair(a.get(), b.get(), cfg.get(), model.get(), o);
      });
      char* text = nullptr;
      check(pv_pair_score_to_json(score.get(), dump ? 1 : 0, &text));
      std::cout << take(text);
    } else if (*eval_cmd) {
      const auto results =
          make<Results>([&](pv_results** o) { return pv_results_load(results_path.c_str(), o); });
      const auto manifest =
          make<Manifest>([&](pv_manifest** o) { return pv_manifest_load(manifest_path.c_str(), o); });
      const auto report = make<Report>([&](pv_report** o) {
        return pv_evaluate(results.get(), manifest.get(), stage == "shortlist" ? 1 : 0, o);
      });
      char* text = nullptr;
      if (csv) {
        check(pv_report_to_csv(report.get(), &text));
      } else if (json) {
        check(pv_report_to_json(report.get(), &text));
      } else {
        check(pv_report_to_text(report.get(), &text));
      }
      write_or_print(take(text), out_path);
    } else if (*gen_cmd) {
      check(pv_generate_synthetic(&spec, out_path.c_str()));
      std::cout << "wrote " << spec.num_references << " references and " << spec.num_queries
                << " queries to " << out_path << "\n";
    } else if (*validate_cmd) {
      int ok = 0;
      char* text = nullptr;
      check(pv_model_validate_file(model_path.c_str(), &ok, &text));
      const std::string violations = take(text);
      if (!ok) {
        std::cout << violations;
        throw CliFailure{PV_ERR_INVALID_MODEL, "model has violations"};
      }
      std::cout << "ok\n";
    } else if (*info_cmd) {
      for (const auto& path : info_paths) {
        std::uint32_t rank = 0;
        std::uint32_t dims[255] = {};
        std::uint8_t dtype = 0;
        check(pv_tensor_header(path.c_str(), &rank, dims, 255, &dtype));
        std::cout << path << ": rank=" << rank << " dims=[";
        for (std::uint32_t i = 0; i < rank; ++i) std::cout << (i ? "," : "") << dims[i];
        std::cout << "] dtype=" << dtype_name(dtype) << "\n";
      }
    }
  } catch (const CliFailure& f) {
    std::cerr << "error: code=" << pv_status_string(f.status) << " message=" << f.message << "\n";
    return 1;
  }
  return 0;
}
