#pragma once

#include <cstddef>
#include <vector>

#include "patchvlad/types.hpp"
#include "patchvlad/vlad.hpp"

namespace patchvlad {

struct Point2 {
  double x = 0;  // column direction
  double y = 0;  // row direction
};

// Dense grid of d_y x d_x patches sampled at stride s_p over an H x W map.
struct PatchGrid {
  std::size_t patch_height = 0;
  std::size_t patch_width = 0;
  std::size_t stride = 1;
  std::size_t grid_rows = 0;  // floor((H - d_y) / s_p + 1)
  std::size_t grid_cols = 0;  // floor((W - d_x) / s_p + 1)
  std::vector<Location> top_left;
  std::vector<Point2> centers;  // continuous, (d - 1) / 2 offset from top-left

  std::size_t count() const noexcept { return top_left.size(); }
};

PatchGrid build_grid(std::size_t height, std::size_t width, std::size_t patch_size,
                     std::size_t stride);
PatchGrid build_grid(std::size_t height, std::size_t width, std::size_t patch_height,
                     std::size_t patch_width, std::size_t stride);

// Per-scale patch descriptors. Row r of `descriptors` belongs to grid patch
// grid_index[r]; patches whose aggregate was degenerate have no row.
struct PatchDescriptorSet {
  std::size_t patch_size = 0;
  PatchGrid grid;
  MatrixXfR descriptors;
  std::vector<std::size_t> grid_index;

  std::size_t size() const noexcept { return grid_index.size(); }
  const Point2& center(std::size_t row) const { return grid.centers[grid_index[row]]; }
};

// Prefix sums of the 1x1 raw VLAD descriptors:
//   I(i, j) = sum over i' < i, j' < j of f1(i', j'),  0 <= i <= H, 0 <= j <= W.
// Row 0 and column 0 are zero.
class IntegralFeatureMap {
 public:
  IntegralFeatureMap(std::size_t height, std::size_t width, std::size_t num_clusters,
                     std::size_t dim);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t num_clusters() const noexcept { return num_clusters_; }
  std::size_t dim() const noexcept { return dim_; }

  // K x D block at integral coordinate (i, j).
  Eigen::Map<const MatrixXdR> at(std::size_t i, std::size_t j) const;
  Eigen::Map<MatrixXdR> at(std::size_t i, std::size_t j);

  // Raw aggregate of the box with the given top-left corner and size, from
  // the four corners I(r+h, c+w) - I(r, c+w) - I(r+h, c) + I(r, c).
  RawVlad box(Location top_left, std::size_t box_height, std::size_t box_width) const;

 private:
  std::size_t index(std::size_t i, std::size_t j) const noexcept {
    return (i * (width_ + 1) + j) * block_;
  }

  std::size_t height_;
  std::size_t width_;
  std::size_t num_clusters_;
  std::size_t dim_;
  std::size_t block_;
  std::vector<double> data_;
};

IntegralFeatureMap build_integral(const FeatureMap& fmap, const VladModel& model);

RawVlad patch_raw_from_integral(const IntegralFeatureMap& integral, Location top_left,
                                std::size_t patch_size);

std::vector<Location> patch_locations(Location top_left, std::size_t patch_height,
                                      std::size_t patch_width);

// One descriptor set per configured patch size. With VLAD pooling a single
// integral map feeds every scale; average/max pooling work on raw features.
std::vector<PatchDescriptorSet> extract_multiscale(const FeatureMap& fmap,
                                                   const VladModel& model,
                                                   const PatchConfig& cfg,
                                                   Pooling strategy = Pooling::kVlad);

// Reference path: aggregates every patch directly from its locations.
std::vector<PatchDescriptorSet> extract_multiscale_direct(const FeatureMap& fmap,
                                                          const VladModel& model,
                                                          const PatchConfig& cfg,
                                                          Pooling strategy = Pooling::kVlad);

}  // namespace patchvlad
