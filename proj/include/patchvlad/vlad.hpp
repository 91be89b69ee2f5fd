#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "patchvlad/types.hpp"

namespace patchvlad {

// Unprojected K x D aggregate, accumulated and kept at 64-bit.
using RawVlad = MatrixXdR;

// Unit-norm projected descriptor (D_proj) or pooled descriptor (D).
using Descriptor = Eigen::VectorXf;

enum class Pooling { kVlad, kAverage, kMax };

// Soft-assignment a_k(x) = softmax_k(w_k . x + b_k). Non-negative, sums to 1.
std::vector<double> soft_assign(std::span<const float> feature, const VladModel& model);

// Adds a_k(x) (x - c_k) for every cluster k into `out` (K x D).
void accumulate_residuals(std::span<const float> feature, const VladModel& model,
                          RawVlad& out);

// Residual aggregation over a set of feature-map locations. Locations are
// summed in row-major order regardless of the order given, so the result does
// not depend on how the caller enumerated them.
RawVlad vlad_aggregate(std::span<const Location> locations, const FeatureMap& fmap,
                       const VladModel& model);

// Whole-map aggregate (N = H * W), the classic NetVLAD global aggregate.
RawVlad vlad_aggregate_full(const FeatureMap& fmap, const VladModel& model);

// Intra-normalisation, flatten, L2, PCA (mean, basis, whitening), L2.
// Throws kDegenerate on an all-zero aggregate.
Descriptor project(const RawVlad& raw, const VladModel& model);

// Projects many aggregates at once (one basis GEMM). Rows of the result line
// up with `raws`; degenerate aggregates get valid[i] == 0 and a zero row.
MatrixXfR project_batch(std::span<const RawVlad> raws, const VladModel& model,
                        std::vector<char>& valid);

Descriptor global_descriptor(const FeatureMap& fmap, const VladModel& model);

// Pools a patch of D-dimensional features into one descriptor.
//   kVlad    -> aggregate + project (D_proj)
//   kAverage -> elementwise mean, L2-normalised (D)
//   kMax     -> elementwise max, L2-normalised (D)
Descriptor pool_patch(std::span<const std::span<const float>> features, Pooling strategy,
                      const VladModel& model);

// Number of soft-assignment evaluations performed process-wide. Used to
// compare the integral and direct extraction paths.
std::uint64_t soft_assign_count() noexcept;
void reset_soft_assign_count() noexcept;

const char* pooling_name(Pooling p) noexcept;
Pooling parse_pooling(std::string_view name);

}  // namespace patchvlad
