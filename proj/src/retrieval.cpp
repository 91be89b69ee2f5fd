#include "patchvlad/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "patchvlad/error.hpp"
#include "patchvlad/io.hpp"
#include "patchvlad/scoring.hpp"

namespace patchvlad {

void GlobalIndex::validate() const {
  if (paths.size() != image_ids.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "index has " + std::to_string(image_ids.size()) +
                                                   " ids but " + std::to_string(paths.size()) +
                                                   " paths");
  }
  if (static_cast<std::size_t>(descriptors.rows()) != image_ids.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "index has " + std::to_string(image_ids.size()) + " ids but " +
                    std::to_string(descriptors.rows()) + " descriptor rows");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : image_ids) {
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate reference id '" + id + "' in index");
    }
  }
  for (Eigen::Index r = 0; r < descriptors.rows(); ++r) {
    const double norm = descriptors.row(r).cast<double>().norm();
    if (std::abs(norm - 1.0) > 1e-4) {
      throw Error(ErrorCode::kInvalidArgument,
                  "index row for '" + image_ids[static_cast<std::size_t>(r)] + "' is not unit-norm");
    }
  }
}

GlobalIndex build_index(const DatasetManifest& manifest, const VladModel& model) {
  require_model_shapes(model);
  GlobalIndex index;
  index.descriptors.resize(static_cast<Eigen::Index>(manifest.references.size()),
                           static_cast<Eigen::Index>(model.proj_dim));
  for (std::size_t i = 0; i < manifest.references.size(); ++i) {
    const auto& ref = manifest.references[i];
    const FeatureMap fmap = read_feature_map(ref.path, ref.image_id);
    if (fmap.depth() != model.dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "reference '" + ref.image_id + "' has depth " + std::to_string(fmap.depth()) +
                      ", model expects " + std::to_string(model.dim));
    }
    index.descriptors.row(static_cast<Eigen::Index>(i)) = global_descriptor(fmap, model).transpose();
    index.image_ids.push_back(ref.image_id);
    index.paths.push_back(ref.path);
  }
  index.validate();
  return index;
}

std::vector<Candidate> shortlist(const Descriptor& query, const GlobalIndex& index, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "shortlist size k must be at least 1");
  if (index.size() == 0) throw Error(ErrorCode::kInvalidArgument, "cannot shortlist from an empty index");
  if (static_cast<std::size_t>(query.size()) != index.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "query descriptor has " + std::to_string(query.size()) + " dims, index has " +
                    std::to_string(index.dim()));
  }
  std::vector<Candidate> all(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto row = index.descriptors.row(static_cast<Eigen::Index>(i));
    double sq = 0;
    for (Eigen::Index j = 0; j < query.size(); ++j) {
      const double d = static_cast<double>(row(j)) - static_cast<double>(query(j));
      sq += d * d;
    }
    all[i] = Candidate{index.image_ids[i], i, std::sqrt(sq)};
  }
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    [](const Candidate& a, const Candidate& b) {
                      return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
                    });
  all.resize(n);
  return all;
}

std::vector<double> ScoredPair::per_scale_scores() const {
  std::vector<double> out;
  out.reserve(scales.size());
  for (const auto& s : scales) out.push_back(s.score);
  return out;
}

ReferenceDescriptorStore::ReferenceDescriptorStore(const GlobalIndex& index, const VladModel& model,
                                                   RunConfig cfg)
    : index_(index), model_(model), cfg_(std::move(cfg)) {
  for (std::size_t i = 0; i < index_.size(); ++i) rows_.emplace(index_.image_ids[i], i);
}

std::shared_ptr<const DescriptorSets> ReferenceDescriptorStore::get(const std::string& image_id) {
  const auto row = rows_.find(image_id);
  if (row == rows_.end()) return nullptr;
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(image_id); it != cache_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.second);
      return it->second.first;
    }
  }
  std::shared_ptr<const DescriptorSets> sets;
  try {
    const FeatureMap fmap = read_feature_map(index_.paths[row->second], image_id);
    sets = std::make_shared<const DescriptorSets>(
        extract_multiscale(fmap, model_, cfg_.patches, cfg_.pooling));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kIo && e.code() != ErrorCode::kBadMagic &&
        e.code() != ErrorCode::kTruncated && e.code() != ErrorCode::kUnsupportedDtype &&
        e.code() != ErrorCode::kParse) {
      throw;
    }
    return nullptr;
  }
  std::lock_guard lock(mutex_);
  ++loads_;
  if (cfg_.descriptor_cache == 0) return sets;
  if (auto it = cache_.find(image_id); it != cache_.end()) return it->second.first;
  lru_.push_front(image_id);
  cache_.emplace(image_id, std::make_pair(sets, lru_.begin()));
  while (cache_.size() > cfg_.descriptor_cache) {
    cache_.erase(lru_.back());
    lru_.pop_back();
  }
  return sets;
}

std::size_t ReferenceDescriptorStore::loads() const {
  std::lock_guard lock(mutex_);
  return loads_;
}

ScoredPair score_pair(const DescriptorSets& query, const DescriptorSets& candidate,
                      const std::string& query_id, const std::string& candidate_id,
                      const RunConfig& cfg) {
  const auto& sizes = cfg.patches.patch_sizes;
  if (query.size() != sizes.size() || candidate.size() != sizes.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "descriptor sets do not cover the configured patch sizes");
  }
  ScoredPair pair;
  pair.query_id = query_id;
  pair.candidate_id = candidate_id;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const auto& q = query[s];
    const auto& c = candidate[s];
    if (q.patch_size != sizes[s] || c.patch_size != sizes[s]) {
      throw Error(ErrorCode::kDimensionMismatch, "descriptor set patch sizes do not match the config");
    }
    ScaleScore scale;
    scale.patch_size = sizes[s];
    scale.num_patches = q.grid.count();
    MatchSet matches = mutual_nn(c, q);
    scale.num_matches = matches.size();
    if (cfg.scorer == Scorer::kRansac) {
      RansacParams params;
      params.inlier_tolerance = cfg.effective_tolerance();
      params.max_iterations = cfg.ransac_max_iterations;
      params.confidence = cfg.ransac_confidence;
      params.seed = derive_seed(cfg.seed, query_id, candidate_id, sizes[s]);
      SpatialScore spatial = ransac_score(matches, c.grid, q.grid, params);
      scale.score = spatial.score;
      scale.inliers = std::move(spatial.inliers);
    } else {
      scale.score = rapid_spatial_score(matches, c.grid, q.grid,
                                        RapidOptions{cfg.max_abs_displacement});
    }
    scale.matches = std::move(matches.pairs);
    pair.scales.push_back(std::move(scale));
  }
  const auto scores = pair.per_scale_scores();
  pair.fused_score = fuse_scores(scores, cfg.patches.fusion_weights);
  return pair;
}

RetrievalResult rerank(const FeatureMap& query, std::span<const Candidate> shortlist,
                       const RunConfig& cfg, const VladModel& model, DescriptorProvider& provider) {
  cfg.validate();
  const DescriptorSets query_sets = extract_multiscale(query, model, cfg.patches, cfg.pooling);

  struct Slot {
    std::optional<ScoredPair> pair;
    double seconds = 0;
  };
  std::vector<Slot> slots(shortlist.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&] {
    for (std::size_t i = next++; i < shortlist.size(); i = next++) {
      try {
        const auto sets = provider.get(shortlist[i].image_id);
        if (!sets) continue;
        const auto start = std::chrono::steady_clock::now();
        slots[i].pair = score_pair(query_sets, *sets, query.image_id(), shortlist[i].image_id, cfg);
        slots[i].seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = shortlist.size();
      }
    }
  };

  const std::size_t workers = std::min(resolve_thread_count(cfg.threads), shortlist.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  RetrievalResult result;
  result.query_id = query.image_id();
  result.shortlist.assign(shortlist.begin(), shortlist.end());
  std::vector<RankedCandidate> dropped;
  for (std::size_t i = 0; i < shortlist.size(); ++i) {
    RankedCandidate rc{shortlist[i].image_id, i, shortlist[i].distance, 0.0, false};
    if (slots[i].pair) {
      rc.fused_score = slots[i].pair->fused_score;
      result.scoring_seconds += slots[i].seconds;
      result.pairs.push_back(std::move(*slots[i].pair));
      result.reranked.push_back(std::move(rc));
    } else {
      rc.dropped = true;
      result.dropped.push_back(rc.image_id);
      dropped.push_back(std::move(rc));
    }
  }
  std::stable_sort(result.reranked.begin(), result.reranked.end(),
                   [](const RankedCandidate& a, const RankedCandidate& b) {
                     return a.fused_score > b.fused_score;
                   });
  result.reranked.insert(result.reranked.end(), dropped.begin(), dropped.end());
  return result;
}

RetrievalResult retrieve(const FeatureMap& query, const GlobalIndex& index, const RunConfig& cfg,
                         const VladModel& model, DescriptorProvider& provider) {
  if (model.proj_dim < index.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "index descriptors have " + std::to_string(index.dim()) +
                    " dims but the model projects to " + std::to_string(model.proj_dim));
  }
  const VladModel global_model = model.proj_dim == index.dim() ? model : model.truncated(index.dim());
  const Descriptor q = global_descriptor(query, global_model);
  const auto candidates = shortlist(q, index, cfg.k);
  return rerank(query, candidates, cfg, apply_projection_cap(model, cfg), provider);
}

std::optional<bool> within_tolerance(const ToleranceSpec& tolerance, const ManifestEntry& query,
                                     const ManifestEntry& reference) {
  return std::visit(
      [&](const auto& t) -> std::optional<bool> {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, FrameWindow>) {
          if (!query.frame_index || !reference.frame_index) return std::nullopt;
          const std::int64_t delta = *query.frame_index - *reference.frame_index;
          return (delta < 0 ? -delta : delta) <= t.frames;
        } else {
          if (!query.pose || !reference.pose) return std::nullopt;
          const double trans = translation_error(*query.pose, *reference.pose);
          if constexpr (std::is_same_v<T, Radius>) {
            return trans <= t.meters;
          } else if constexpr (std::is_same_v<T, RadiusOrientation>) {
            return trans <= t.meters && rotation_error_deg(*query.pose, *reference.pose) <= t.degrees;
          } else {
            const double rot = rotation_error_deg(*query.pose, *reference.pose);
            return std::any_of(t.thresholds.begin(), t.thresholds.end(), [&](const auto& p) {
              return trans <= p.first && rot <= p.second;
            });
          }
        }
      },
      tolerance);
}

namespace {

bool has_ground_truth(const ToleranceSpec& tolerance, const ManifestEntry& query) {
  return std::holds_alternative<FrameWindow>(tolerance) ? query.frame_index.has_value()
                                                        : query.pose.has_value();
}

std::vector<std::string> ranked_ids(const RetrievalResult& r, EvalStage stage) {
  std::vector<std::string> ids;
  if (stage == EvalStage::kShortlist) {
    for (const auto& c : r.shortlist) ids.push_back(c.image_id);
  } else {
    for (const auto& c : r.reranked) ids.push_back(c.image_id);
  }
  return ids;
}

}  // namespace

EvalReport evaluate(std::span<const RetrievalResult> results, const DatasetManifest& manifest,
                    EvalStage stage) {
  EvalReport report;
  report.num_queries = results.size();
  const bool pose_mode = !std::holds_alternative<FrameWindow>(manifest.tolerance);
  const auto* thresholds = std::get_if<PoseThresholds>(&manifest.tolerance);
  std::vector<std::size_t> bucket_hits(thresholds ? thresholds->thresholds.size() : 0, 0);
  std::map<std::size_t, std::size_t> hits;

  for (const auto& r : results) {
    const ManifestEntry* q = manifest.find_query(r.query_id);
    if (!q) throw Error(ErrorCode::kNotFound, "query '" + r.query_id + "' is not in the manifest");
    QueryVerdict v;
    v.query_id = r.query_id;
    if (!has_ground_truth(manifest.tolerance, *q)) {
      ++report.num_excluded;
      report.verdicts.push_back(std::move(v));
      continue;
    }
    v.evaluated = true;
    ++report.num_evaluated;
    const auto ids = ranked_ids(r, stage);
    for (std::size_t rank = 0; rank < ids.size(); ++rank) {
      const ManifestEntry* ref = manifest.find_reference(ids[rank]);
      if (!ref) throw Error(ErrorCode::kNotFound, "reference '" + ids[rank] + "' is not in the manifest");
      if (rank == 0 && pose_mode && ref->pose) {
        v.translation_error = translation_error(*q->pose, *ref->pose);
        v.rotation_error_deg = rotation_error_deg(*q->pose, *ref->pose);
      }
      if (!v.first_hit_rank && within_tolerance(manifest.tolerance, *q, *ref).value_or(false)) {
        v.first_hit_rank = rank + 1;
      }
    }
    for (std::size_t n : kRecallNs) {
      if (v.first_hit_rank && *v.first_hit_rank <= n) ++hits[n];
    }
    if (thresholds && v.translation_error) {
      for (std::size_t b = 0; b < bucket_hits.size(); ++b) {
        const auto& [m, d] = thresholds->thresholds[b];
        if (*v.translation_error <= m && *v.rotation_error_deg <= d) ++bucket_hits[b];
      }
    }
    report.verdicts.push_back(std::move(v));
  }

  const auto percent = [&](std::size_t count) {
    return report.num_evaluated == 0
               ? 0.0
               : 100.0 * static_cast<double>(count) / static_cast<double>(report.num_evaluated);
  };
  for (std::size_t n : kRecallNs) report.recall_at[n] = percent(hits[n]);
  if (thresholds) {
    for (std::size_t b = 0; b < bucket_hits.size(); ++b) {
      const auto& [m, d] = thresholds->thresholds[b];
      report.pose_buckets.push_back(PoseBucket{m, d, percent(bucket_hits[b])});
    }
  }
  return report;
}

}  // namespace patchvlad
