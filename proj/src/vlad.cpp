#include "patchvlad/vlad.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "patchvlad/error.hpp"

namespace patchvlad {

namespace {

std::atomic<std::uint64_t> g_soft_assign_count{0};

constexpr double kZeroRowNorm = 1e-12;

void require_feature_dim(std::size_t got, const VladModel& model) {
  if (got != model.dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature has " + std::to_string(got) + " channels, model expects " +
                    std::to_string(model.dim));
  }
}

void soft_assign_into(std::span<const float> x, const VladModel& model, double* out) {
  const std::size_t k_count = model.num_clusters;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < k_count; ++k) {
    const float* w = model.assign_weights.row(static_cast<Eigen::Index>(k)).data();
    double logit = model.assign_bias[static_cast<Eigen::Index>(k)];
    for (std::size_t j = 0; j < x.size(); ++j) logit += static_cast<double>(w[j]) * x[j];
    out[k] = logit;
    max_logit = std::max(max_logit, logit);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    out[k] = std::exp(out[k] - max_logit);
    sum += out[k];
  }
  for (std::size_t k = 0; k < k_count; ++k) out[k] /= sum;
  g_soft_assign_count.fetch_add(1, std::memory_order_relaxed);
}

void accumulate_with(std::span<const float> x, const VladModel& model, const double* assignment,
                     RawVlad& out) {
  for (std::size_t k = 0; k < model.num_clusters; ++k) {
    const double a = assignment[k];
    const float* c = model.centers.row(static_cast<Eigen::Index>(k)).data();
    double* row = out.row(static_cast<Eigen::Index>(k)).data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      row[j] += a * (static_cast<double>(x[j]) - static_cast<double>(c[j]));
    }
  }
}

RawVlad zero_raw(const VladModel& model) {
  return RawVlad::Zero(static_cast<Eigen::Index>(model.num_clusters),
                       static_cast<Eigen::Index>(model.dim));
}

Descriptor l2_normalized(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::kDegenerate, "cannot L2-normalise a zero descriptor");
  }
  return (v / norm).cast<float>();
}

}  // namespace

std::vector<double> soft_assign(std::span<const float> feature, const VladModel& model) {
  require_model_shapes(model);
  require_feature_dim(feature.size(), model);
  std::vector<double> out(model.num_clusters);
  soft_assign_into(feature, model, out.data());
  return out;
}

void accumulate_residuals(std::span<const float> feature, const VladModel& model,
                          RawVlad& out) {
  require_feature_dim(feature.size(), model);
  if (out.rows() != static_cast<Eigen::Index>(model.num_clusters) ||
      out.cols() != static_cast<Eigen::Index>(model.dim)) {
    throw Error(ErrorCode::kDimensionMismatch, "accumulator is not K x D");
  }
  std::vector<double> assignment(model.num_clusters);
  soft_assign_into(feature, model, assignment.data());
  accumulate_with(feature, model, assignment.data(), out);
}

RawVlad vlad_aggregate(std::span<const Location> locations, const FeatureMap& fmap,
                       const VladModel& model) {
  require_model_shapes(model);
  require_feature_dim(fmap.depth(), model);
  if (locations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "cannot aggregate an empty location set");
  }
  std::vector<Location> ordered(locations.begin(), locations.end());
  for (const auto& loc : ordered) {
    if (loc.row >= fmap.height() || loc.col >= fmap.width()) {
      throw Error(ErrorCode::kOutOfBounds,
                  "location (" + std::to_string(loc.row) + ", " + std::to_string(loc.col) +
                      ") outside " + std::to_string(fmap.height()) + "x" +
                      std::to_string(fmap.width()) + " map");
    }
  }
  std::sort(ordered.begin(), ordered.end());

  RawVlad out = zero_raw(model);
  std::vector<double> assignment(model.num_clusters);
  for (const auto& loc : ordered) {
    const auto x = fmap.at(loc);
    soft_assign_into(x, model, assignment.data());
    accumulate_with(x, model, assignment.data(), out);
  }
  return out;
}

RawVlad vlad_aggregate_full(const FeatureMap& fmap, const VladModel& model) {
  std::vector<Location> all;
  all.reserve(fmap.num_locations());
  for (std::size_t r = 0; r < fmap.height(); ++r) {
    for (std::size_t c = 0; c < fmap.width(); ++c) all.push_back({r, c});
  }
  return vlad_aggregate(all, fmap, model);
}

namespace {

void require_raw_shape(const RawVlad& raw, const VladModel& model) {
  if (raw.rows() != static_cast<Eigen::Index>(model.num_clusters) ||
      raw.cols() != static_cast<Eigen::Index>(model.dim)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "raw VLAD is " + std::to_string(raw.rows()) + "x" + std::to_string(raw.cols()) +
                    ", model expects " + std::to_string(model.num_clusters) + "x" +
                    std::to_string(model.dim));
  }
  if (!raw.allFinite()) throw Error(ErrorCode::kInvalidArgument, "raw VLAD has non-finite entries");
}

// Steps before the basis product: intra-normalise (rows that collected
// nothing stay zero), flatten row-major, L2, subtract the PCA mean.
// Returns false for an all-zero aggregate.
template <typename Out>
bool center_for_projection(const RawVlad& raw, const VladModel& model, Out&& out) {
  MatrixXdR normalized = raw;
  bool any_nonzero = false;
  for (Eigen::Index k = 0; k < normalized.rows(); ++k) {
    const double n = normalized.row(k).norm();
    if (n < kZeroRowNorm) {
      normalized.row(k).setZero();
    } else {
      normalized.row(k) /= n;
      any_nonzero = true;
    }
  }
  if (!any_nonzero) return false;
  Eigen::Map<const Eigen::VectorXd> flat(normalized.data(), normalized.size());
  out = ((flat / flat.norm()) - model.pca_mean.cast<double>()).template cast<float>();
  return true;
}

// Whitening and the final L2; false if the whitened vector vanished.
template <typename In>
bool whiten_and_normalize(const In& reduced, const VladModel& model, Eigen::VectorXf& out) {
  const Eigen::VectorXd whitened =
      reduced.template cast<double>().cwiseProduct(model.pca_whiten.cast<double>());
  const double norm = whitened.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) return false;
  out = (whitened / norm).cast<float>();
  return true;
}

}  // namespace

Descriptor project(const RawVlad& raw, const VladModel& model) {
  require_model_shapes(model);
  require_raw_shape(raw, model);
  Eigen::VectorXf centered;
  if (!center_for_projection(raw, model, centered)) {
    throw Error(ErrorCode::kDegenerate, "raw VLAD aggregate is all zero");
  }
  const Eigen::VectorXf reduced = model.pca_basis * centered;
  Descriptor out;
  if (!whiten_and_normalize(reduced, model, out)) {
    throw Error(ErrorCode::kDegenerate, "projected descriptor is zero");
  }
  return out;
}

MatrixXfR project_batch(std::span<const RawVlad> raws, const VladModel& model,
                        std::vector<char>& valid) {
  require_model_shapes(model);
  const auto n = static_cast<Eigen::Index>(raws.size());
  valid.assign(raws.size(), 0);
  Eigen::MatrixXf centered(static_cast<Eigen::Index>(model.vlad_dim()), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require_raw_shape(raws[static_cast<std::size_t>(i)], model);
    if (center_for_projection(raws[static_cast<std::size_t>(i)], model, centered.col(i))) {
      valid[static_cast<std::size_t>(i)] = 1;
    } else {
      centered.col(i).setZero();
    }
  }
  const Eigen::MatrixXf reduced = model.pca_basis * centered;
  MatrixXfR out = MatrixXfR::Zero(n, static_cast<Eigen::Index>(model.proj_dim));
  Eigen::VectorXf row;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!valid[static_cast<std::size_t>(i)]) continue;
    if (whiten_and_normalize(reduced.col(i), model, row)) {
      out.row(i) = row.transpose();
    } else {
      valid[static_cast<std::size_t>(i)] = 0;
    }
  }
  return out;
}

Descriptor global_descriptor(const FeatureMap& fmap, const VladModel& model) {
  return project(vlad_aggregate_full(fmap, model), model);
}

Descriptor pool_patch(std::span<const std::span<const float>> features, Pooling strategy,
                      const VladModel& model) {
  if (features.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot pool an empty patch");
  const std::size_t dim = features.front().size();
  for (const auto& f : features) {
    if (f.size() != dim) throw Error(ErrorCode::kDimensionMismatch, "patch features differ in length");
  }

  switch (strategy) {
    case Pooling::kVlad: {
      require_model_shapes(model);
      require_feature_dim(dim, model);
      RawVlad raw = zero_raw(model);
      std::vector<double> assignment(model.num_clusters);
      for (const auto& f : features) {
        soft_assign_into(f, model, assignment.data());
        accumulate_with(f, model, assignment.data(), raw);
      }
      return project(raw, model);
    }
    case Pooling::kAverage: {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
      for (const auto& f : features) {
        for (std::size_t j = 0; j < dim; ++j) sum[static_cast<Eigen::Index>(j)] += f[j];
      }
      return l2_normalized(sum / static_cast<double>(features.size()));
    }
    case Pooling::kMax: {
      Eigen::VectorXd best = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim),
                                                       -std::numeric_limits<double>::infinity());
      for (const auto& f : features) {
        for (std::size_t j = 0; j < dim; ++j) {
          auto& b = best[static_cast<Eigen::Index>(j)];
          b = std::max(b, static_cast<double>(f[j]));
        }
      }
      return l2_normalized(best);
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown pooling strategy");
}

std::uint64_t soft_assign_count() noexcept {
  return g_soft_assign_count.load(std::memory_order_relaxed);
}

void reset_soft_assign_count() noexcept { g_soft_assign_count.store(0, std::memory_order_relaxed); }

const char* pooling_name(Pooling p) noexcept {
  switch (p) {
    case Pooling::kVlad: return "vlad";
    case Pooling::kAverage: return "average";
    case Pooling::kMax: return "max";
  }
  return "unknown";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "vlad") return Pooling::kVlad;
  if (name == "average") return Pooling::kAverage;
  if (name == "max") return Pooling::kMax;
  throw Error(ErrorCode::kInvalidArgument, "unknown pooling strategy '" + std::string(name) + "'");
}

}  // namespace patchvlad
