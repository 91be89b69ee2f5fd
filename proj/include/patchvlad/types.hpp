#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace patchvlad {

using MatrixXfR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Location {
  std::size_t row = 0;
  std::size_t col = 0;

  friend auto operator<=>(const Location&, const Location&) = default;
};

// Dense H x W x D feature tensor for one image, row-major (row, col, channel).
// Construction validates the buffer length and finiteness; instances are
// immutable afterwards.
class FeatureMap {
 public:
  FeatureMap(std::string image_id, std::size_t height, std::size_t width,
             std::size_t depth, std::vector<float> data);

  const std::string& image_id() const noexcept { return image_id_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t depth() const noexcept { return depth_; }
  std::size_t num_locations() const noexcept { return height_ * width_; }

  std::span<const float> data() const noexcept { return data_; }

  std::span<const float> at(std::size_t row, std::size_t col) const noexcept {
    return {data_.data() + (row * width_ + col) * depth_, depth_};
  }
  std::span<const float> at(Location loc) const noexcept { return at(loc.row, loc.col); }

 private:
  std::string image_id_;
  std::size_t height_;
  std::size_t width_;
  std::size_t depth_;
  std::vector<float> data_;
};

// NetVLAD layer parameters plus the PCA-whitening projection. Kept as a plain
// aggregate so malformed models can be represented and reported on; use
// validate_model() before trusting one.
struct VladModel {
  std::size_t num_clusters = 0;  // K
  std::size_t dim = 0;           // D
  std::size_t proj_dim = 0;      // D_proj

  MatrixXfR centers;         // K x D
  MatrixXfR assign_weights;  // K x D
  Eigen::VectorXf assign_bias;  // K
  Eigen::VectorXf pca_mean;     // K*D
  MatrixXfR pca_basis;       // D_proj x K*D
  Eigen::VectorXf pca_whiten;   // D_proj, strictly positive

  std::size_t vlad_dim() const noexcept { return num_clusters * dim; }

  // Keeps the leading `dims` projection rows. PCA rows are ordered by
  // explained variance, so this is the usual way of trading accuracy for size.
  VladModel truncated(std::size_t dims) const;
};

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
};

ValidationReport validate_model(const VladModel& model);

// Throws Error(kInvalidModel) listing every violation.
void require_valid_model(const VladModel& model);

// Cheap shape-only check used on hot paths.
void require_model_shapes(const VladModel& model);

struct PatchConfig {
  std::vector<std::size_t> patch_sizes{2, 5, 8};
  std::size_t stride = 1;
  std::vector<double> fusion_weights{0.45, 0.15, 0.4};

  // Throws kInvalidArgument when sizes/weights disagree or weights are not convex.
  void validate() const;
};

bool is_convex_weighting(std::span<const double> weights) noexcept;

struct Pose {
  std::array<double, 3> position{};           // meters
  std::array<double, 4> orientation{1, 0, 0, 0};  // unit quaternion (w, x, y, z)
};

double translation_error(const Pose& a, const Pose& b) noexcept;
// Absolute angle of the relative rotation, degrees.
double rotation_error_deg(const Pose& a, const Pose& b) noexcept;

struct FrameWindow {
  std::int64_t frames = 0;
};
struct Radius {
  double meters = 0;
};
struct RadiusOrientation {
  double meters = 0;
  double degrees = 0;
};
struct PoseThresholds {
  std::vector<std::pair<double, double>> thresholds;  // (meters, degrees)
};

using ToleranceSpec = std::variant<FrameWindow, Radius, RadiusOrientation, PoseThresholds>;

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path path;  // resolved against the manifest directory
  std::optional<Pose> pose;
  std::optional<std::int64_t> frame_index;
};

struct DatasetManifest {
  std::vector<ManifestEntry> references;
  std::vector<ManifestEntry> queries;
  ToleranceSpec tolerance = FrameWindow{};

  // Throws kInvalidArgument on duplicate ids or negative tolerances.
  void validate() const;

  const ManifestEntry* find_reference(const std::string& id) const;
  const ManifestEntry* find_query(const std::string& id) const;
};

}  // namespace patchvlad
