#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "patchvlad/patches.hpp"
#include "patchvlad/synthetic.hpp"
#include "patchvlad/types.hpp"

namespace patchvlad::testing {

// Random model with non-trivial mean and whitening, unlike the synthetic
// generator's, so tests exercise every projection step.
inline VladModel random_test_model(std::size_t k, std::size_t d, std::size_t p, std::uint64_t seed) {
  PortableRng rng(seed);
  VladModel m = random_model(k, d, p, 0.3, rng);
  for (Eigen::Index i = 0; i < m.assign_bias.size(); ++i) {
    m.assign_bias[i] += static_cast<float>(0.5 * rng.normal());
  }
  for (Eigen::Index i = 0; i < m.pca_mean.size(); ++i) {
    m.pca_mean[i] = static_cast<float>(0.01 * rng.normal());
  }
  for (Eigen::Index i = 0; i < m.pca_whiten.size(); ++i) {
    m.pca_whiten[i] = static_cast<float>(0.5 + rng.uniform());
  }
  return m;
}

inline FeatureMap random_map(std::size_t h, std::size_t w, std::size_t d, std::uint64_t seed,
                             const std::string& id = "map") {
  PortableRng rng(seed);
  std::vector<float> data(h * w * d);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  return FeatureMap(id, h, w, d, std::move(data));
}

// 40 correspondences related by a fixed projective map followed by 10
// outliers with uniform random targets, inside a 40 x 30 grid extent.
struct PlantedHomography {
  std::vector<Point2> src;
  std::vector<Point2> dst;
  std::size_t num_inliers = 0;
};

inline PlantedHomography planted_homography(std::uint64_t seed, std::size_t inliers = 40,
                                            std::size_t outliers = 10) {
  PortableRng rng(seed);
  const double h[3][3] = {{0.95, 0.06, 1.8}, {-0.04, 1.03, -1.2}, {0.0012, -0.0009, 1.0}};
  PlantedHomography out;
  out.num_inliers = inliers;
  for (std::size_t i = 0; i < inliers + outliers; ++i) {
    const Point2 p{40.0 * rng.uniform(), 30.0 * rng.uniform()};
    out.src.push_back(p);
    if (i < inliers) {
      const double w = h[2][0] * p.x + h[2][1] * p.y + h[2][2];
      out.dst.push_back({(h[0][0] * p.x + h[0][1] * p.y + h[0][2]) / w,
                         (h[1][0] * p.x + h[1][1] * p.y + h[1][2]) / w});
    } else {
      out.dst.push_back({40.0 * rng.uniform(), 30.0 * rng.uniform()});
    }
  }
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("patchvlad_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace patchvlad::testing
