#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "patchvlad/matching.hpp"
#include "patchvlad/patches.hpp"

namespace patchvlad {

using Homography = Eigen::Matrix3d;

struct RansacParams {
  double inlier_tolerance = 1.0;  // feature-grid units; the patch stride by default
  int max_iterations = 2000;
  double confidence = 0.999;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RansacFit {
  std::vector<std::size_t> inliers;  // indices into the correspondence arrays
  std::optional<Homography> model;   // maps src -> dst
  int iterations = 0;
};

// Normalised direct linear transform. Needs >= 4 correspondences, least
// squares beyond that. Returns nullopt when the points are degenerate.
std::optional<Homography> fit_homography_dlt(std::span<const Point2> src,
                                             std::span<const Point2> dst);

// max(|dst - H src|, |src - H^-1 dst|); infinity when either side maps to
// the line at infinity.
double symmetric_transfer_error(const Homography& h, const Homography& h_inv, const Point2& src,
                                const Point2& dst);

// 4-point minimal-sample RANSAC with an adaptive iteration budget and a final
// least-squares refit on the best consensus set. Deterministic for a seed.
RansacFit ransac_homography(std::span<const Point2> src, std::span<const Point2> dst,
                            const RansacParams& params);

struct SpatialScore {
  double score = 0;
  std::vector<Match> inliers;
};

// Inlier count of the best homography between matched patch centres,
// divided by the query grid's patch count. Fewer than four matches cannot
// constrain a homography and are all counted as inliers.
SpatialScore ransac_score(const MatchSet& matches, const PatchGrid& ref_grid,
                          const PatchGrid& query_grid, const RansacParams& params);

struct RapidOptions {
  // false: |max_j d_j| as the formula prints it; true: max_j |d_j|.
  bool max_abs_displacement = false;
};

// Displacement-coherence score over horizontal/vertical displacements
// d = ref - query of matched patch centres. An empty set scores 0.
double rapid_spatial_score(std::span<const double> dx, std::span<const double> dy,
                           std::size_t num_patches, RapidOptions options = {});

double rapid_spatial_score(const MatchSet& matches, const PatchGrid& ref_grid,
                           const PatchGrid& query_grid, RapidOptions options = {});

// Convex combination sum_i w_i s_i.
double fuse_scores(std::span<const double> per_scale, std::span<const double> weights);

// Per-call RANSAC seed, stable across platforms and thread schedules.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view query_id,
                          std::string_view candidate_id, std::size_t patch_size) noexcept;

}  // namespace patchvlad
