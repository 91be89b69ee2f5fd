#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <list>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchvlad/config.hpp"
#include "patchvlad/matching.hpp"
#include "patchvlad/patches.hpp"
#include "patchvlad/types.hpp"
#include "patchvlad/vlad.hpp"

namespace patchvlad {

// Whole-map (N = H * W) projected descriptors of the reference images.
struct GlobalIndex {
  std::vector<std::string> image_ids;
  std::vector<std::filesystem::path> paths;
  MatrixXfR descriptors;  // one unit-norm row per reference

  std::size_t size() const noexcept { return image_ids.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(descriptors.cols()); }

  // Unique ids, matching row counts, unit-norm rows.
  void validate() const;
};

GlobalIndex build_index(const DatasetManifest& manifest, const VladModel& model);

struct Candidate {
  std::string image_id;
  std::size_t index = 0;  // row in the GlobalIndex
  double distance = 0;
};

// k nearest references by L2, ascending, ties to the lower index row.
std::vector<Candidate> shortlist(const Descriptor& query, const GlobalIndex& index, std::size_t k);

struct ScaleScore {
  std::size_t patch_size = 0;
  std::size_t num_patches = 0;  // query grid count used for normalisation
  std::size_t num_matches = 0;
  double score = 0;
  std::vector<Match> matches;
  std::vector<Match> inliers;  // RANSAC only
};

struct ScoredPair {
  std::string query_id;
  std::string candidate_id;
  std::vector<ScaleScore> scales;
  double fused_score = 0;

  std::vector<double> per_scale_scores() const;
};

struct RankedCandidate {
  std::string image_id;
  std::size_t shortlist_rank = 0;  // 0-based position in the shortlist
  double global_distance = 0;
  double fused_score = 0;
  bool dropped = false;  // feature map unavailable; ranked after every scored candidate
};

struct RetrievalResult {
  std::string query_id;
  std::vector<Candidate> shortlist;
  std::vector<RankedCandidate> reranked;
  std::vector<ScoredPair> pairs;  // shortlist order, scored candidates only
  std::vector<std::string> dropped;
  double scoring_seconds = 0;  // time spent in matching + spatial scoring
};

using DescriptorSets = std::vector<PatchDescriptorSet>;

// Supplies patch descriptor sets for reference images during re-ranking.
class DescriptorProvider {
 public:
  virtual ~DescriptorProvider() = default;
  // nullptr when the image cannot be loaded.
  virtual std::shared_ptr<const DescriptorSets> get(const std::string& image_id) = 0;
};

// Loads reference feature maps named by a GlobalIndex and extracts their
// descriptors, keeping the most recently used `capacity` sets. Thread-safe.
class ReferenceDescriptorStore : public DescriptorProvider {
 public:
  ReferenceDescriptorStore(const GlobalIndex& index, const VladModel& model, RunConfig cfg);

  std::shared_ptr<const DescriptorSets> get(const std::string& image_id) override;

  std::size_t loads() const;

 private:
  const GlobalIndex& index_;
  const VladModel& model_;
  RunConfig cfg_;
  std::unordered_map<std::string, std::size_t> rows_;

  mutable std::mutex mutex_;
  std::list<std::string> lru_;
  std::unordered_map<std::string,
                     std::pair<std::shared_ptr<const DescriptorSets>, std::list<std::string>::iterator>>
      cache_;
  std::size_t loads_ = 0;
};

// Matches two images scale by scale, scores each scale and fuses.
ScoredPair score_pair(const DescriptorSets& query, const DescriptorSets& candidate,
                      const std::string& query_id, const std::string& candidate_id,
                      const RunConfig& cfg);

// Patch-level re-ranking of a shortlist. `model` must already carry the
// configured projection cap.
RetrievalResult rerank(const FeatureMap& query, std::span<const Candidate> shortlist,
                       const RunConfig& cfg, const VladModel& model, DescriptorProvider& provider);

// Shortlist + re-rank for one query. The global descriptor uses the leading
// index.dim() projection rows of `model`; patch descriptors use `model` with
// the configured projection cap, which `provider` must match.
RetrievalResult retrieve(const FeatureMap& query, const GlobalIndex& index, const RunConfig& cfg,
                         const VladModel& model, DescriptorProvider& provider);

enum class EvalStage { kReranked, kShortlist };

struct QueryVerdict {
  std::string query_id;
  bool evaluated = false;             // false: no ground truth for the tolerance
  std::optional<std::size_t> first_hit_rank;  // 1-based
  std::optional<double> translation_error;    // inherited rank-1 pose, pose modes
  std::optional<double> rotation_error_deg;
};

struct PoseBucket {
  double meters = 0;
  double degrees = 0;
  double percent = 0;
};

struct EvalReport {
  std::map<std::size_t, double> recall_at;  // N -> percent
  std::vector<PoseBucket> pose_buckets;
  std::vector<QueryVerdict> verdicts;
  std::size_t num_queries = 0;
  std::size_t num_evaluated = 0;
  std::size_t num_excluded = 0;
};

inline constexpr std::size_t kRecallNs[] = {1, 5, 10, 20, 25};

// Whether `reference` lies within the manifest tolerance of `query`; nullopt
// when either lacks the ground truth the tolerance needs.
std::optional<bool> within_tolerance(const ToleranceSpec& tolerance, const ManifestEntry& query,
                                     const ManifestEntry& reference);

EvalReport evaluate(std::span<const RetrievalResult> results, const DatasetManifest& manifest,
                    EvalStage stage = EvalStage::kReranked);

}  // namespace patchvlad
