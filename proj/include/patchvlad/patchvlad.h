#ifndef PATCHVLAD_PATCHVLAD_H
#define PATCHVLAD_PATCHVLAD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PV_API __declspec(dllexport)
#else
#define PV_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pv_status {
  PV_OK = 0,
  PV_ERR_INVALID_ARGUMENT = 1,
  PV_ERR_DIMENSION_MISMATCH = 2,
  PV_ERR_OUT_OF_BOUNDS = 3,
  PV_ERR_DEGENERATE = 4,
  PV_ERR_IO = 5,
  PV_ERR_BAD_MAGIC = 6,
  PV_ERR_TRUNCATED = 7,
  PV_ERR_UNSUPPORTED_DTYPE = 8,
  PV_ERR_PARSE = 9,
  PV_ERR_NOT_FOUND = 10,
  PV_ERR_INVALID_MODEL = 11,
  PV_ERR_INTERNAL = 99
} pv_status;

/* Stable snake_case name of a status, e.g. "bad_magic". */
PV_API const char* pv_status_string(pv_status status);
/* Message of the last failed call on this thread; "" after a success. */
PV_API const char* pv_last_error_message(void);
PV_API const char* pv_version(void);
/* Frees strings returned through char** out-parameters. */
PV_API void pv_string_free(char* s);

typedef struct pv_model pv_model;
typedef struct pv_feature_map pv_feature_map;
typedef struct pv_config pv_config;
typedef struct pv_manifest pv_manifest;
typedef struct pv_index pv_index;
typedef struct pv_results pv_results;
typedef struct pv_pair_score pv_pair_score;
typedef struct pv_report pv_report;

/* Models */
PV_API pv_status pv_model_load(const char* path, pv_model** out);
PV_API void pv_model_free(pv_model* model);
PV_API pv_status pv_model_dims(const pv_model* model, size_t* num_clusters, size_t* dim,
                               size_t* proj_dim);
/* Loads without validating, then reports every violation (one per line). */
PV_API pv_status pv_model_validate_file(const char* path, int* ok, char** report);

/* Feature maps (rank-3 TensorFiles) */
PV_API pv_status pv_feature_map_load(const char* path, pv_feature_map** out);
PV_API void pv_feature_map_free(pv_feature_map* fmap);
PV_API pv_status pv_feature_map_dims(const pv_feature_map* fmap, size_t* height, size_t* width,
                                     size_t* depth);

/* TensorFile header: `dims` receives up to `max_rank` entries. */
PV_API pv_status pv_tensor_header(const char* path, uint32_t* rank, uint32_t* dims,
                                  size_t max_rank, uint8_t* dtype);
/* Nonzero when the file starts with the TensorFile magic. */
PV_API int pv_is_tensor_file(const char* path);

/* Run configuration */
PV_API pv_status pv_config_default(pv_config** out);
PV_API pv_status pv_config_preset(const char* name, pv_config** out);
PV_API pv_status pv_config_load(const char* path, pv_config** out);
PV_API void pv_config_free(pv_config* cfg);
/* Overrides one key with a JSON value, e.g. ("k", "10") or ("scorer", "\"rapid\""). */
PV_API pv_status pv_config_set(pv_config* cfg, const char* key, const char* json_value);
PV_API pv_status pv_config_to_json(const pv_config* cfg, char** out);
/* The config's model path, or NULL when unset. Owned by `cfg`. */
PV_API const char* pv_config_model_path(const pv_config* cfg);

/* Manifests */
PV_API pv_status pv_manifest_load(const char* path, pv_manifest** out);
PV_API void pv_manifest_free(pv_manifest* manifest);
PV_API size_t pv_manifest_num_references(const pv_manifest* manifest);
PV_API size_t pv_manifest_num_queries(const pv_manifest* manifest);

/* Global index */
PV_API pv_status pv_index_build(const pv_manifest* manifest, const pv_model* model,
                                pv_index** out);
/* `model_path` may be NULL; otherwise it is recorded relative to the index file. */
PV_API pv_status pv_index_save(const pv_index* index, const char* path, const char* model_path);
PV_API pv_status pv_index_load(const char* path, pv_index** out);
PV_API void pv_index_free(pv_index* index);
PV_API size_t pv_index_size(const pv_index* index);
/* Model path recorded in a loaded index, or NULL. Owned by `index`. */
PV_API const char* pv_index_model_path(const pv_index* index);

/* Retrieval */
PV_API pv_status pv_retrieve_manifest(const pv_index* index, const pv_manifest* queries,
                                      const pv_config* cfg, const pv_model* model,
                                      pv_results** out);
PV_API pv_status pv_retrieve_map(const pv_index* index, const pv_feature_map* query,
                                 const pv_config* cfg, const pv_model* model, pv_results** out);
PV_API pv_status pv_results_save(const pv_results* results, const char* path);
PV_API pv_status pv_results_load(const char* path, pv_results** out);
PV_API void pv_results_free(pv_results* results);
PV_API size_t pv_results_count(const pv_results* results);
/* Candidate id at `rank` (0-based) of query `query`; owned by `results`. */
PV_API pv_status pv_results_ranked_id(const pv_results* results, size_t query, size_t rank,
                                      int shortlist_stage, const char** id);
/* Seconds spent in matching and spatial scoring, summed over all queries. */
PV_API double pv_results_scoring_seconds(const pv_results* results);

/* Pairwise matching */
PV_API pv_status pv_match_pair(const pv_feature_map* a, const pv_feature_map* b,
                               const pv_config* cfg, const pv_model* model, pv_pair_score** out);
PV_API void pv_pair_score_free(pv_pair_score* score);
PV_API double pv_pair_score_fused(const pv_pair_score* score);
PV_API size_t pv_pair_score_num_scales(const pv_pair_score* score);
PV_API pv_status pv_pair_score_scale(const pv_pair_score* score, size_t i, size_t* patch_size,
                                     size_t* num_matches, double* value);
/* include_correspondences != 0 adds every match with patch centres. */
PV_API pv_status pv_pair_score_to_json(const pv_pair_score* score, int include_correspondences,
                                       char** out);

/* Evaluation; stage 0 = reranked, 1 = shortlist. */
PV_API pv_status pv_evaluate(const pv_results* results, const pv_manifest* manifest, int stage,
                             pv_report** out);
PV_API void pv_report_free(pv_report* report);
PV_API pv_status pv_report_recall_at(const pv_report* report, size_t n, double* percent);
PV_API pv_status pv_report_to_text(const pv_report* report, char** out);
PV_API pv_status pv_report_to_json(const pv_report* report, char** out);
PV_API pv_status pv_report_to_csv(const pv_report* report, char** out);

/* Synthetic benchmark generation */
typedef struct pv_synthetic_spec {
  size_t num_references;
  size_t num_queries;
  size_t height;
  size_t width;
  size_t dim;
  size_t num_clusters;
  size_t proj_dim;
  size_t max_shift;
  double noise;
  double residual_scale;
  double assign_sharpness;
  double twin_fraction;
  size_t twin_block;
  uint64_t seed;
} pv_synthetic_spec;

PV_API void pv_synthetic_spec_default(pv_synthetic_spec* spec);
/* Writes model.json, refs/, queries/ and manifest.json under `out_dir`. */
PV_API pv_status pv_generate_synthetic(const pv_synthetic_spec* spec, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif
