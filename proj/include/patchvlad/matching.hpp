#pragma once

#include <cstddef>
#include <vector>

#include "patchvlad/patches.hpp"
#include "patchvlad/types.hpp"

namespace patchvlad {

struct Match {
  std::size_t ref = 0;    // index into the reference set
  std::size_t query = 0;  // index into the query set
  double distance = 0;
};

// Mutual-nearest-neighbour correspondences at one patch size. When produced
// from PatchDescriptorSets the indices are grid indices, so they address
// PatchGrid::centers directly.
struct MatchSet {
  std::size_t patch_size = 0;
  std::vector<Match> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
};

// Euclidean distances between every row of `a` and every row of `b`, via
// |a|^2 + |b|^2 - 2 a.b accumulated in double and clamped at zero. Every
// entry is evaluated with the same operation order, so duplicated rows give
// bit-identical distances.
MatrixXdR pairwise_distances(const MatrixXfR& a, const MatrixXfR& b);

// Pairs (i, j) where j is the nearest query row to reference row i and i is
// the nearest reference row to query row j. Ties go to the lowest index.
MatchSet mutual_nn(const MatrixXfR& ref, const MatrixXfR& query, std::size_t patch_size = 0);

// Same, for two descriptor sets of equal patch size; indices are translated to
// grid indices.
MatchSet mutual_nn(const PatchDescriptorSet& ref, const PatchDescriptorSet& query);

}  // namespace patchvlad
