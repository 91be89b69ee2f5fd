#include "patchvlad/types.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "patchvlad/error.hpp"

namespace patchvlad {

namespace {

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

std::string shape(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

}  // namespace

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kOutOfBounds: return "out_of_bounds";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kUnsupportedDtype: return "unsupported_dtype";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kInvalidModel: return "invalid_model";
  }
  return "unknown";
}

FeatureMap::FeatureMap(std::string image_id, std::size_t height, std::size_t width,
                       std::size_t depth, std::vector<float> data)
    : image_id_(std::move(image_id)),
      height_(height),
      width_(width),
      depth_(depth),
      data_(std::move(data)) {
  if (height_ == 0 || width_ == 0 || depth_ == 0) {
    throw Error(ErrorCode::kInvalidArgument, "feature map dimensions must be positive");
  }
  if (data_.size() != height_ * width_ * depth_) {
    std::ostringstream os;
    os << "feature map buffer holds " << data_.size() << " values, expected "
       << height_ << "*" << width_ << "*" << depth_;
    throw Error(ErrorCode::kDimensionMismatch, os.str());
  }
  if (!std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); })) {
    throw Error(ErrorCode::kInvalidArgument, "feature map '" + image_id_ + "' contains non-finite values");
  }
}

VladModel VladModel::truncated(std::size_t dims) const {
  if (dims == 0 || dims > proj_dim) {
    throw Error(ErrorCode::kInvalidArgument,
                "cannot truncate projection of " + std::to_string(proj_dim) + " dims to " +
                    std::to_string(dims));
  }
  VladModel out = *this;
  out.proj_dim = dims;
  out.pca_basis = pca_basis.topRows(static_cast<Eigen::Index>(dims));
  out.pca_whiten = pca_whiten.head(static_cast<Eigen::Index>(dims));
  return out;
}

ValidationReport validate_model(const VladModel& m) {
  ValidationReport report;
  auto& v = report.violations;
  const auto k = static_cast<Eigen::Index>(m.num_clusters);
  const auto d = static_cast<Eigen::Index>(m.dim);
  const auto p = static_cast<Eigen::Index>(m.proj_dim);

  if (m.num_clusters == 0) v.push_back("num_clusters must be positive");
  if (m.dim == 0) v.push_back("dim must be positive");
  if (m.proj_dim == 0) v.push_back("proj_dim must be positive");
  if (m.proj_dim > m.num_clusters * m.dim) {
    v.push_back("proj_dim " + std::to_string(m.proj_dim) + " exceeds K*D = " +
                std::to_string(m.num_clusters * m.dim));
  }

  auto check_shape = [&](const char* name, Eigen::Index rows, Eigen::Index cols,
                         Eigen::Index want_rows, Eigen::Index want_cols) {
    if (rows != want_rows || cols != want_cols) {
      v.push_back(std::string(name) + " is " + shape(rows, cols) + ", expected " +
                  shape(want_rows, want_cols));
    }
  };
  check_shape("centers", m.centers.rows(), m.centers.cols(), k, d);
  check_shape("assign_weights", m.assign_weights.rows(), m.assign_weights.cols(), k, d);
  check_shape("assign_bias", m.assign_bias.size(), 1, k, 1);
  check_shape("pca_mean", m.pca_mean.size(), 1, k * d, 1);
  check_shape("pca_basis", m.pca_basis.rows(), m.pca_basis.cols(), p, k * d);
  check_shape("pca_whiten", m.pca_whiten.size(), 1, p, 1);

  if (!all_finite(m.centers)) v.push_back("centers contain non-finite values");
  if (!all_finite(m.assign_weights)) v.push_back("assign_weights contain non-finite values");
  if (!all_finite(m.assign_bias)) v.push_back("assign_bias contains non-finite values");
  if (!all_finite(m.pca_mean)) v.push_back("pca_mean contains non-finite values");
  if (!all_finite(m.pca_basis)) v.push_back("pca_basis contains non-finite values");
  if (!all_finite(m.pca_whiten)) {
    v.push_back("pca_whiten contains non-finite values");
  } else if (m.pca_whiten.size() > 0 && !(m.pca_whiten.array() > 0.0f).all()) {
    v.push_back("pca_whiten entries must be strictly positive");
  }
  return report;
}

void require_valid_model(const VladModel& model) {
  const auto report = validate_model(model);
  if (report.ok()) return;
  std::string message = "invalid VLAD model:";
  for (const auto& violation : report.violations) message += " " + violation + ";";
  throw Error(ErrorCode::kInvalidModel, message);
}

void require_model_shapes(const VladModel& m) {
  const auto k = static_cast<Eigen::Index>(m.num_clusters);
  const auto d = static_cast<Eigen::Index>(m.dim);
  const auto p = static_cast<Eigen::Index>(m.proj_dim);
  const bool ok = k > 0 && d > 0 && p > 0 && m.centers.rows() == k && m.centers.cols() == d &&
                  m.assign_weights.rows() == k && m.assign_weights.cols() == d &&
                  m.assign_bias.size() == k && m.pca_mean.size() == k * d &&
                  m.pca_basis.rows() == p && m.pca_basis.cols() == k * d &&
                  m.pca_whiten.size() == p;
  if (!ok) throw Error(ErrorCode::kDimensionMismatch, "VLAD model shapes are inconsistent");
}

bool is_convex_weighting(std::span<const double> weights) noexcept {
  if (weights.empty()) return false;
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) return false;
    sum += w;
  }
  return std::abs(sum - 1.0) <= 1e-9;
}

void PatchConfig::validate() const {
  if (patch_sizes.empty()) throw Error(ErrorCode::kInvalidArgument, "at least one patch size is required");
  if (stride == 0) throw Error(ErrorCode::kInvalidArgument, "patch stride must be positive");
  for (auto size : patch_sizes) {
    if (size == 0) throw Error(ErrorCode::kInvalidArgument, "patch sizes must be positive");
  }
  if (fusion_weights.size() != patch_sizes.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "fusion weights (" + std::to_string(fusion_weights.size()) +
                    ") must match patch sizes (" + std::to_string(patch_sizes.size()) + ")");
  }
  if (!is_convex_weighting(fusion_weights)) {
    throw Error(ErrorCode::kInvalidArgument,
                "fusion weights must be non-negative and sum to 1");
  }
}

double translation_error(const Pose& a, const Pose& b) noexcept {
  double sq = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double d = a.position[i] - b.position[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

double rotation_error_deg(const Pose& a, const Pose& b) noexcept {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    dot += a.orientation[i] * b.orientation[i];
    na += a.orientation[i] * a.orientation[i];
    nb += b.orientation[i] * b.orientation[i];
  }
  const double c = std::clamp(std::abs(dot) / std::sqrt(na * nb), 0.0, 1.0);
  return 2.0 * std::acos(c) * 180.0 / std::numbers::pi;
}

void DatasetManifest::validate() const {
  auto check_unique = [](const std::vector<ManifestEntry>& entries, const char* which) {
    std::unordered_set<std::string> seen;
    for (const auto& e : entries) {
      if (!seen.insert(e.image_id).second) {
        throw Error(ErrorCode::kInvalidArgument,
                    std::string("duplicate ") + which + " image id '" + e.image_id + "'");
      }
    }
  };
  check_unique(references, "reference");
  check_unique(queries, "query");

  std::visit(
      [](const auto& tol) {
        using T = std::decay_t<decltype(tol)>;
        bool ok = true;
        if constexpr (std::is_same_v<T, FrameWindow>) {
          ok = tol.frames >= 0;
        } else if constexpr (std::is_same_v<T, Radius>) {
          ok = tol.meters >= 0;
        } else if constexpr (std::is_same_v<T, RadiusOrientation>) {
          ok = tol.meters >= 0 && tol.degrees >= 0;
        } else {
          ok = !tol.thresholds.empty();
          for (const auto& [m, deg] : tol.thresholds) ok = ok && m >= 0 && deg >= 0;
        }
        if (!ok) throw Error(ErrorCode::kInvalidArgument, "tolerance fields must be non-negative");
      },
      tolerance);
}

const ManifestEntry* DatasetManifest::find_reference(const std::string& id) const {
  auto it = std::find_if(references.begin(), references.end(),
                         [&](const ManifestEntry& e) { return e.image_id == id; });
  return it == references.end() ? nullptr : &*it;
}

const ManifestEntry* DatasetManifest::find_query(const std::string& id) const {
  auto it = std::find_if(queries.begin(), queries.end(),
                         [&](const ManifestEntry& e) { return e.image_id == id; });
  return it == queries.end() ? nullptr : &*it;
}

}  // namespace patchvlad
