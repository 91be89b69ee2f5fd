#include "patchvlad/patchvlad.h"

#include <cstring>
#include <exception>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "patchvlad/config.hpp"
#include "patchvlad/error.hpp"
#include "patchvlad/io.hpp"
#include "patchvlad/retrieval.hpp"
#include "patchvlad/synthetic.hpp"

using namespace patchvlad;

struct pv_model {
  VladModel model;
};
struct pv_feature_map {
  FeatureMap fmap;
};
struct pv_config {
  RunConfig cfg;
};
struct pv_manifest {
  DatasetManifest manifest;
};
struct pv_index {
  GlobalIndex index;
  std::string model_path;
  bool has_model_path = false;
};
struct pv_results {
  std::vector<RetrievalResult> results;
};
struct pv_pair_score {
  ScoredPair pair;
  DescriptorSets a;
  DescriptorSets b;
};
struct pv_report {
  EvalReport report;
};

namespace {

thread_local std::string g_last_error;

pv_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return PV_ERR_INVALID_ARGUMENT;
    case ErrorCode::kDimensionMismatch: return PV_ERR_DIMENSION_MISMATCH;
    case ErrorCode::kOutOfBounds: return PV_ERR_OUT_OF_BOUNDS;
    case ErrorCode::kDegenerate: return PV_ERR_DEGENERATE;
    case ErrorCode::kIo: return PV_ERR_IO;
    case ErrorCode::kBadMagic: return PV_ERR_BAD_MAGIC;
    case ErrorCode::kTruncated: return PV_ERR_TRUNCATED;
    case ErrorCode::kUnsupportedDtype: return PV_ERR_UNSUPPORTED_DTYPE;
    case ErrorCode::kParse: return PV_ERR_PARSE;
    case ErrorCode::kNotFound: return PV_ERR_NOT_FOUND;
    case ErrorCode::kInvalidModel: return PV_ERR_INVALID_MODEL;
  }
  return PV_ERR_INTERNAL;
}

pv_status fail(pv_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Runs `fn`, mapping exceptions to status codes and recording the message.
template <typename Fn>
pv_status guarded(Fn&& fn) noexcept {
  try {
    fn();
    g_last_error.clear();
    return PV_OK;
  } catch (const Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(PV_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PV_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PV_ERR_INTERNAL, "unknown failure");
  }
}

void require(const void* p, const char* name) {
  if (!p) throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

template <typename T, typename... Args>
void emit(T** out, Args&&... args) {
  require(out, "out");
  *out = new T{std::forward<Args>(args)...};
}

}  // namespace

extern "C" {

const char* pv_status_string(pv_status status) {
  switch (status) {
    case PV_OK: return "ok";
    case PV_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case PV_ERR_DIMENSION_MISMATCH: return "dimension_mismatch";
    case PV_ERR_OUT_OF_BOUNDS: return "out_of_bounds";
    case PV_ERR_DEGENERATE: return "degenerate";
    case PV_ERR_IO: return "io";
    case PV_ERR_BAD_MAGIC: return "bad_magic";
    case PV_ERR_TRUNCATED: return "truncated";
    case PV_ERR_UNSUPPORTED_DTYPE: return "unsupported_dtype";
    case PV_ERR_PARSE: return "parse";
    case PV_ERR_NOT_FOUND: return "not_found";
    case PV_ERR_INVALID_MODEL: return "invalid_model";
    case PV_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* pv_last_error_message(void) { return g_last_error.c_str(); }

const char* pv_version(void) { return "0.1.0"; }

void pv_string_free(char* s) { std::free(s); }

pv_status pv_model_load(const char* path, pv_model** out) {
  return guarded([&] {
    require(out, "out");
    require(path, "path");
    emit(out, load_model(path));
  });
}

void pv_model_free(pv_model* model) { delete model; }

pv_status pv_model_dims(const pv_model* model, size_t* num_clusters, size_t* dim, size_t* proj_dim) {
  return guarded([&] {
    require(model, "model");
    if (num_clusters) *num_clusters = model->model.num_clusters;
    if (dim) *dim = model->model.dim;
    if (proj_dim) *proj_dim = model->model.proj_dim;
  });
}

pv_status pv_model_validate_file(const char* path, int* ok, char** report) {
  return guarded([&] {
    require(path, "path");
    require(ok, "ok");
    const ValidationReport r = validate_model(load_model_unchecked(path));
    *ok = r.ok() ? 1 : 0;
    if (report) {
      std::string text;
      for (const auto& v : r.violations) text += v + "\n";
      *report = dup_string(text);
    }
  });
}

pv_status pv_feature_map_load(const char* path, pv_feature_map** out) {
  return guarded([&] {
    require(out, "out");
    require(path, "path");
    emit(out, read_feature_map(path));
  });
}

void pv_feature_map_free(pv_feature_map* fmap) { delete fmap; }

pv_status pv_feature_map_dims(const pv_feature_map* fmap, size_t* height, size_t* width,
                              size_t* depth) {
  return guarded([&] {
    require(fmap, "fmap");
    if (height) *height = fmap->fmap.height();
    if (width) *width = fmap->fmap.width();
    if (depth) *depth = fmap->fmap.depth();
  });
}

pv_status pv_tensor_header(const char* path, uint32_t* rank, uint32_t* dims, size_t max_rank,
                           uint8_t* dtype) {
  return guarded([&] {
    require(path, "path");
    const TensorHeader h = read_tensor_header(path);
    if (rank) *rank = static_cast<uint32_t>(h.dims.size());
    if (dims) {
      for (size_t i = 0; i < h.dims.size() && i < max_rank; ++i) dims[i] = h.dims[i];
    }
    if (dtype) *dtype = h.dtype;
  });
}

int pv_is_tensor_file(const char* path) {
  if (!path) return 0;
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  if (!in.read(magic, 4)) return 0;
  return std::memcmp(magic, kTensorMagic.data(), 4) == 0 ? 1 : 0;
}

pv_status pv_config_default(pv_config** out) {
  return guarded([&] { emit(out, RunConfig{}); });
}

pv_status pv_config_preset(const char* name, pv_config** out) {
  return guarded([&] {
    require(out, "out");
    require(name, "name");
    emit(out, preset_config(name));
  });
}

pv_status pv_config_load(const char* path, pv_config** out) {
  return guarded([&] {
    require(out, "out");
    require(path, "path");
    emit(out, load_config(path));
  });
}

void pv_config_free(pv_config* cfg) { delete cfg; }

pv_status pv_config_set(pv_config* cfg, const char* key, const char* json_value) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(json_value, "json_value");
    apply_config_override(cfg->cfg, key, json_value);
  });
}

pv_status pv_config_to_json(const pv_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(config_to_json(cfg->cfg));
  });
}

const char* pv_config_model_path(const pv_config* cfg) {
  return cfg && cfg->cfg.model_path ? cfg->cfg.model_path->c_str() : nullptr;
}

pv_status pv_manifest_load(const char* path, pv_manifest** out) {
  return guarded([&] {
    require(out, "out");
    require(path, "path");
    emit(out, load_manifest(path));
  });
}

void pv_manifest_free(pv_manifest* manifest) { delete manifest; }

size_t pv_manifest_num_references(const pv_manifest* manifest) {
  return manifest ? manifest->manifest.references.size() : 0;
}

size_t pv_manifest_num_queries(const pv_manifest* manifest) {
  return manifest ? manifest->manifest.queries.size() : 0;
}

pv_status pv_index_build(const pv_manifest* manifest, const pv_model* model, pv_index** out) {
  return guarded([&] {
    require(out, "out");
    require(manifest, "manifest");
    require(model, "model");
    emit(out, build_index(manifest->manifest, model->model), std::string(), false);
  });
}

pv_status pv_index_save(const pv_index* index, const char* path, const char* model_path) {
  return guarded([&] {
    require(index, "index");
    require(path, "path");
    std::optional<std::filesystem::path> mp;
    if (model_path) mp = model_path;
    save_index(index->index, path, mp);
  });
}

pv_status pv_index_load(const char* path, pv_index** out) {
  return guarded([&] {
    require(out, "out");
    require(path, "path");
    IndexFile f = load_index(path);
    const bool has = f.model_path.has_value();
    emit(out, std::move(f.index), has ? f.model_path->string() : std::string(), has);
  });
}

void pv_index_free(pv_index* index) { delete index; }

size_t pv_index_size(const pv_index* index) { return index ? index->index.size() : 0; }

const char* pv_index_model_path(const pv_index* index) {
  return index && index->has_model_path ? index->model_path.c_str() : nullptr;
}

pv_status pv_retrieve_manifest(const pv_index* index, const pv_manifest* queries,
                               const pv_config* cfg, const pv_model* model, pv_results** out) {
  return guarded([&] {
    require(out, "out");
    require(index, "index");
    require(queries, "queries");
    require(cfg, "cfg");
    require(model, "model");
    const VladModel capped = apply_projection_cap(model->model, cfg->cfg);
    ReferenceDescriptorStore store(index->index, capped, cfg->cfg);
    std::vector<RetrievalResult> results;
    for (const auto& q : queries->manifest.queries) {
      const FeatureMap fmap = read_feature_map(q.path, q.image_id);
      results.push_back(retrieve(fmap, index->index, cfg->cfg, model->model, store));
    }
    emit(out, std::move(results));
  });
}

pv_status pv_retrieve_map(const pv_index* index, const pv_feature_map* query, const pv_config* cfg,
                          const pv_model* model, pv_results** out) {
  return guarded([&] {
    require(out, "out");
    require(index, "index");
    require(query, "query");
    require(cfg, "cfg");
    require(model, "model");
    const VladModel capped = apply_projection_cap(model->model, cfg->cfg);
    ReferenceDescriptorStore store(index->index, capped, cfg->cfg);
    std::vector<RetrievalResult> results;
    results.push_back(retrieve(query->fmap, index->index, cfg->cfg, model->model, store));
    emit(out, std::move(results));
  });
}

pv_status pv_results_save(const pv_results* results, const char* path) {
  return guarded([&] {
    require(results, "results");
    require(path, "path");
    save_results(results->results, path);
  });
}

pv_status pv_results_load(const char* path, pv_results** out) {
  return guarded([&] {
    require(out, "out");
    require(path, "path");
    emit(out, load_results(path));
  });
}

void pv_results_free(pv_results* results) { delete results; }

size_t pv_results_count(const pv_results* results) {
  return results ? results->results.size() : 0;
}

pv_status pv_results_ranked_id(const pv_results* results, size_t query, size_t rank,
                               int shortlist_stage, const char** id) {
  return guarded([&] {
    require(results, "results");
    require(id, "id");
    if (query >= results->results.size()) throw Error(ErrorCode::kOutOfBounds, "query index out of range");
    const auto& r = results->results[query];
    if (shortlist_stage) {
      if (rank >= r.shortlist.size()) throw Error(ErrorCode::kOutOfBounds, "rank out of range");
      *id = r.shortlist[rank].image_id.c_str();
    } else {
      if (rank >= r.reranked.size()) throw Error(ErrorCode::kOutOfBounds, "rank out of range");
      *id = r.reranked[rank].image_id.c_str();
    }
  });
}

double pv_results_scoring_seconds(const pv_results* results) {
  double total = 0;
  if (results) {
    for (const auto& r : results->results) total += r.scoring_seconds;
  }
  return total;
}

pv_status pv_match_pair(const pv_feature_map* a, const pv_feature_map* b, const pv_config* cfg,
                        const pv_model* model, pv_pair_score** out) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    require(cfg, "cfg");
    require(model, "model");
    require(out, "out");
    cfg->cfg.validate();
    const VladModel capped = apply_projection_cap(model->model, cfg->cfg);
    auto score = std::make_unique<pv_pair_score>();
    score->a = extract_multiscale(a->fmap, capped, cfg->cfg.patches, cfg->cfg.pooling);
    score->b = extract_multiscale(b->fmap, capped, cfg->cfg.patches, cfg->cfg.pooling);
    score->pair = score_pair(score->a, score->b, a->fmap.image_id(), b->fmap.image_id(), cfg->cfg);
    *out = score.release();
  });
}

void pv_pair_score_free(pv_pair_score* score) { delete score; }

double pv_pair_score_fused(const pv_pair_score* score) { return score ? score->pair.fused_score : 0.0; }

size_t pv_pair_score_num_scales(const pv_pair_score* score) {
  return score ? score->pair.scales.size() : 0;
}

pv_status pv_pair_score_scale(const pv_pair_score* score, size_t i, size_t* patch_size,
                              size_t* num_matches, double* value) {
  return guarded([&] {
    require(score, "score");
    if (i >= score->pair.scales.size()) throw Error(ErrorCode::kOutOfBounds, "scale index out of range");
    const auto& s = score->pair.scales[i];
    if (patch_size) *patch_size = s.patch_size;
    if (num_matches) *num_matches = s.num_matches;
    if (value) *value = s.score;
  });
}

pv_status pv_pair_score_to_json(const pv_pair_score* score, int include_correspondences, char** out) {
  return guarded([&] {
    require(score, "score");
    require(out, "out");
    *out = dup_string(include_correspondences ? pair_to_json(score->pair, &score->a, &score->b)
                                              : pair_to_json(score->pair));
  });
}

pv_status pv_evaluate(const pv_results* results, const pv_manifest* manifest, int stage,
                      pv_report** out) {
  return guarded([&] {
    require(out, "out");
    require(results, "results");
    require(manifest, "manifest");
    emit(out, evaluate(results->results, manifest->manifest,
                       stage ? EvalStage::kShortlist : EvalStage::kReranked));
  });
}

void pv_report_free(pv_report* report) { delete report; }

pv_status pv_report_recall_at(const pv_report* report, size_t n, double* percent) {
  return guarded([&] {
    require(report, "report");
    require(percent, "percent");
    const auto it = report->report.recall_at.find(n);
    if (it == report->report.recall_at.end()) {
      throw Error(ErrorCode::kNotFound, "no recall figure for N=" + std::to_string(n));
    }
    *percent = it->second;
  });
}

pv_status pv_report_to_text(const pv_report* report, char** out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    *out = dup_string(report_to_text(report->report));
  });
}

pv_status pv_report_to_json(const pv_report* report, char** out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    *out = dup_string(report_to_json(report->report));
  });
}

pv_status pv_report_to_csv(const pv_report* report, char** out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    *out = dup_string(report_to_csv(report->report));
  });
}

void pv_synthetic_spec_default(pv_synthetic_spec* spec) {
  if (!spec) return;
  const SyntheticSpec d;
  *spec = pv_synthetic_spec{d.num_references, d.num_queries, d.height,         d.width,
                            d.dim,            d.num_clusters, d.proj_dim,      d.max_shift,
                            d.noise,          d.residual_scale, d.assign_sharpness,
                            d.twin_fraction,  d.twin_block,   d.seed};
}

pv_status pv_generate_synthetic(const pv_synthetic_spec* spec, const char* out_dir) {
  return guarded([&] {
    require(spec, "spec");
    require(out_dir, "out_dir");
    SyntheticSpec s;
    s.num_references = spec->num_references;
    s.num_queries = spec->num_queries;
    s.height = spec->height;
    s.width = spec->width;
    s.dim = spec->dim;
    s.num_clusters = spec->num_clusters;
    s.proj_dim = spec->proj_dim;
    s.max_shift = spec->max_shift;
    s.noise = spec->noise;
    s.residual_scale = spec->residual_scale;
    s.assign_sharpness = spec->assign_sharpness;
    s.twin_fraction = spec->twin_fraction;
    s.twin_block = spec->twin_block;
    s.seed = spec->seed;
    write_synthetic(generate_synthetic(s), out_dir);
  });
}

}  // extern "C"
