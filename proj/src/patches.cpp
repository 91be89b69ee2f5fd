#include "patchvlad/patches.hpp"

#include <algorithm>
#include <string>

#include "patchvlad/error.hpp"

namespace patchvlad {

namespace {

// Keeps peak memory for the batched projection bounded.
constexpr std::size_t kProjectionChunk = 256;

void require_fits(std::size_t height, std::size_t width, std::size_t ph, std::size_t pw) {
  if (ph == 0 || pw == 0) throw Error(ErrorCode::kInvalidArgument, "patch size must be positive");
  if (ph > height || pw > width) {
    throw Error(ErrorCode::kInvalidArgument,
                "patch " + std::to_string(ph) + "x" + std::to_string(pw) +
                    " does not fit a " + std::to_string(height) + "x" + std::to_string(width) +
                    " feature map");
  }
}

// Projects a grid's raw aggregates in chunks and drops degenerate patches.
template <typename RawFn>
PatchDescriptorSet describe_grid(PatchGrid grid, std::size_t patch_size, const VladModel& model,
                                 RawFn&& raw_for_patch) {
  PatchDescriptorSet set;
  set.patch_size = patch_size;
  const std::size_t n = grid.count();
  MatrixXfR all(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(model.proj_dim));
  std::vector<char> keep(n, 0);
  std::vector<RawVlad> raws;
  std::vector<char> valid;
  for (std::size_t begin = 0; begin < n; begin += kProjectionChunk) {
    const std::size_t end = std::min(n, begin + kProjectionChunk);
    raws.clear();
    for (std::size_t i = begin; i < end; ++i) raws.push_back(raw_for_patch(grid.top_left[i]));
    const MatrixXfR projected = project_batch(raws, model, valid);
    all.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
        projected;
    std::copy(valid.begin(), valid.end(), keep.begin() + static_cast<std::ptrdiff_t>(begin));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) set.grid_index.push_back(i);
  }
  set.descriptors.resize(static_cast<Eigen::Index>(set.grid_index.size()), all.cols());
  for (std::size_t r = 0; r < set.grid_index.size(); ++r) {
    set.descriptors.row(static_cast<Eigen::Index>(r)) =
        all.row(static_cast<Eigen::Index>(set.grid_index[r]));
  }
  set.grid = std::move(grid);
  return set;
}

PatchDescriptorSet describe_grid_pooled(PatchGrid grid, std::size_t patch_size,
                                        const FeatureMap& fmap, const VladModel& model,
                                        Pooling strategy) {
  PatchDescriptorSet set;
  set.patch_size = patch_size;
  std::vector<Descriptor> rows;
  std::vector<std::span<const float>> features;
  for (std::size_t i = 0; i < grid.count(); ++i) {
    features.clear();
    for (const auto& loc : patch_locations(grid.top_left[i], patch_size, patch_size)) {
      features.push_back(fmap.at(loc));
    }
    try {
      rows.push_back(pool_patch(features, strategy, model));
      set.grid_index.push_back(i);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerate) throw;
    }
  }
  const auto dim = rows.empty() ? Eigen::Index{0} : rows.front().size();
  set.descriptors.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    set.descriptors.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  }
  set.grid = std::move(grid);
  return set;
}

}  // namespace

PatchGrid build_grid(std::size_t height, std::size_t width, std::size_t patch_size,
                     std::size_t stride) {
  return build_grid(height, width, patch_size, patch_size, stride);
}

PatchGrid build_grid(std::size_t height, std::size_t width, std::size_t patch_height,
                     std::size_t patch_width, std::size_t stride) {
  require_fits(height, width, patch_height, patch_width);
  if (stride == 0) throw Error(ErrorCode::kInvalidArgument, "patch stride must be positive");

  PatchGrid grid;
  grid.patch_height = patch_height;
  grid.patch_width = patch_width;
  grid.stride = stride;
  grid.grid_rows = (height - patch_height) / stride + 1;
  grid.grid_cols = (width - patch_width) / stride + 1;
  grid.top_left.reserve(grid.grid_rows * grid.grid_cols);
  grid.centers.reserve(grid.grid_rows * grid.grid_cols);
  const double off_x = (static_cast<double>(patch_width) - 1.0) / 2.0;
  const double off_y = (static_cast<double>(patch_height) - 1.0) / 2.0;
  for (std::size_t gr = 0; gr < grid.grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < grid.grid_cols; ++gc) {
      const Location tl{gr * stride, gc * stride};
      grid.top_left.push_back(tl);
      grid.centers.push_back({static_cast<double>(tl.col) + off_x,
                              static_cast<double>(tl.row) + off_y});
    }
  }
  return grid;
}

IntegralFeatureMap::IntegralFeatureMap(std::size_t height, std::size_t width,
                                       std::size_t num_clusters, std::size_t dim)
    : height_(height),
      width_(width),
      num_clusters_(num_clusters),
      dim_(dim),
      block_(num_clusters * dim),
      data_((height + 1) * (width + 1) * num_clusters * dim, 0.0) {}

Eigen::Map<const MatrixXdR> IntegralFeatureMap::at(std::size_t i, std::size_t j) const {
  return {data_.data() + index(i, j), static_cast<Eigen::Index>(num_clusters_),
          static_cast<Eigen::Index>(dim_)};
}

Eigen::Map<MatrixXdR> IntegralFeatureMap::at(std::size_t i, std::size_t j) {
  return {data_.data() + index(i, j), static_cast<Eigen::Index>(num_clusters_),
          static_cast<Eigen::Index>(dim_)};
}

RawVlad IntegralFeatureMap::box(Location tl, std::size_t box_height, std::size_t box_width) const {
  if (box_height == 0 || box_width == 0 || tl.row + box_height > height_ ||
      tl.col + box_width > width_) {
    throw Error(ErrorCode::kOutOfBounds,
                "patch at (" + std::to_string(tl.row) + ", " + std::to_string(tl.col) +
                    ") of size " + std::to_string(box_height) + "x" + std::to_string(box_width) +
                    " leaves the " + std::to_string(height_) + "x" + std::to_string(width_) +
                    " map");
  }
  const std::size_t r0 = tl.row, c0 = tl.col;
  const std::size_t r1 = r0 + box_height, c1 = c0 + box_width;
  RawVlad out(static_cast<Eigen::Index>(num_clusters_), static_cast<Eigen::Index>(dim_));
  const double* a = data_.data() + index(r1, c1);
  const double* b = data_.data() + index(r0, c1);
  const double* c = data_.data() + index(r1, c0);
  const double* d = data_.data() + index(r0, c0);
  double* o = out.data();
  for (std::size_t e = 0; e < block_; ++e) o[e] = a[e] - b[e] - c[e] + d[e];
  return out;
}

IntegralFeatureMap build_integral(const FeatureMap& fmap, const VladModel& model) {
  require_model_shapes(model);
  if (fmap.depth() != model.dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature map depth " + std::to_string(fmap.depth()) + " != model dim " +
                    std::to_string(model.dim));
  }
  const std::size_t h = fmap.height(), w = fmap.width();
  IntegralFeatureMap integral(h, w, model.num_clusters, model.dim);
  RawVlad unit = RawVlad::Zero(static_cast<Eigen::Index>(model.num_clusters),
                               static_cast<Eigen::Index>(model.dim));
  RawVlad row_sum = unit;
  // Running sum along the row plus the prefix of the row above.
  for (std::size_t i = 1; i <= h; ++i) {
    row_sum.setZero();
    for (std::size_t j = 1; j <= w; ++j) {
      unit.setZero();
      accumulate_residuals(fmap.at(i - 1, j - 1), model, unit);
      row_sum += unit;
      integral.at(i, j) = integral.at(i - 1, j) + row_sum;
    }
  }
  return integral;
}

RawVlad patch_raw_from_integral(const IntegralFeatureMap& integral, Location top_left,
                                std::size_t patch_size) {
  return integral.box(top_left, patch_size, patch_size);
}

std::vector<Location> patch_locations(Location top_left, std::size_t patch_height,
                                      std::size_t patch_width) {
  std::vector<Location> out;
  out.reserve(patch_height * patch_width);
  for (std::size_t r = 0; r < patch_height; ++r) {
    for (std::size_t c = 0; c < patch_width; ++c) {
      out.push_back({top_left.row + r, top_left.col + c});
    }
  }
  return out;
}

std::vector<PatchDescriptorSet> extract_multiscale(const FeatureMap& fmap,
                                                   const VladModel& model,
                                                   const PatchConfig& cfg, Pooling strategy) {
  cfg.validate();
  std::vector<PatchGrid> grids;
  for (auto size : cfg.patch_sizes) {
    grids.push_back(build_grid(fmap.height(), fmap.width(), size, cfg.stride));
  }

  std::vector<PatchDescriptorSet> out;
  if (strategy != Pooling::kVlad) {
    for (std::size_t s = 0; s < grids.size(); ++s) {
      out.push_back(describe_grid_pooled(std::move(grids[s]), cfg.patch_sizes[s], fmap, model,
                                         strategy));
    }
    return out;
  }

  const IntegralFeatureMap integral = build_integral(fmap, model);
  for (std::size_t s = 0; s < grids.size(); ++s) {
    const std::size_t size = cfg.patch_sizes[s];
    out.push_back(describe_grid(std::move(grids[s]), size, model, [&](Location tl) {
      return integral.box(tl, size, size);
    }));
  }
  return out;
}

std::vector<PatchDescriptorSet> extract_multiscale_direct(const FeatureMap& fmap,
                                                          const VladModel& model,
                                                          const PatchConfig& cfg,
                                                          Pooling strategy) {
  if (strategy != Pooling::kVlad) return extract_multiscale(fmap, model, cfg, strategy);
  cfg.validate();
  std::vector<PatchDescriptorSet> out;
  for (auto size : cfg.patch_sizes) {
    auto grid = build_grid(fmap.height(), fmap.width(), size, cfg.stride);
    out.push_back(describe_grid(std::move(grid), size, model, [&](Location tl) {
      const auto locations = patch_locations(tl, size, size);
      return vlad_aggregate(locations, fmap, model);
    }));
  }
  return out;
}

}  // namespace patchvlad
