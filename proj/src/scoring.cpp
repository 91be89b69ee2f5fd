#include "patchvlad/scoring.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "patchvlad/error.hpp"

namespace patchvlad {

namespace {

constexpr double kDegenerateArea = 1e-8;
constexpr int kRefitRounds = 3;

// Similarity that moves the centroid to the origin and the mean distance to
// sqrt(2).
std::optional<Eigen::Matrix3d> normalizer(std::span<const Point2> pts) {
  double cx = 0, cy = 0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean_dist = 0;
  for (const auto& p : pts) mean_dist += std::hypot(p.x - cx, p.y - cy);
  mean_dist /= static_cast<double>(pts.size());
  if (!(mean_dist > 0) || !std::isfinite(mean_dist)) return std::nullopt;
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

Point2 apply(const Eigen::Matrix3d& h, const Point2& p, bool& finite) {
  const double x = h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2);
  const double y = h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2);
  const double w = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
  finite = std::abs(w) > std::numeric_limits<double>::epsilon();
  return {x / w, y / w};
}

bool collinear(const Point2& a, const Point2& b, const Point2& c, double scale) {
  const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  return std::abs(cross) <= kDegenerateArea * scale;
}

// Any three of the four points on a line leaves the homography unconstrained.
bool degenerate_sample(const std::array<Point2, 4>& p) {
  double scale = 0;
  for (const auto& q : p) {
    for (const auto& r : p) scale = std::max(scale, (q.x - r.x) * (q.x - r.x) + (q.y - r.y) * (q.y - r.y));
  }
  if (!(scale > 0)) return true;
  return collinear(p[0], p[1], p[2], scale) || collinear(p[0], p[1], p[3], scale) ||
         collinear(p[0], p[2], p[3], scale) || collinear(p[1], p[2], p[3], scale);
}

// Unbiased draw in [0, bound) from a standard-specified engine, independent
// of the library's distribution implementations.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t bound) {
  const std::uint64_t b = bound;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % b;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % b);
}

int required_iterations(std::size_t inliers, std::size_t total, double confidence, int cap) {
  const double w = static_cast<double>(inliers) / static_cast<double>(total);
  const double p_good = std::pow(w, 4.0);
  if (p_good >= 1.0 - 1e-12) return 1;
  if (p_good <= 0.0) return cap;
  const double n = std::log(1.0 - confidence) / std::log(1.0 - p_good);
  if (!std::isfinite(n) || n >= static_cast<double>(cap)) return cap;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

std::vector<std::size_t> consensus(const Homography& h, std::span<const Point2> src,
                                   std::span<const Point2> dst, double tolerance) {
  std::vector<std::size_t> out;
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(h);
  if (!lu.isInvertible()) return out;
  const Homography h_inv = lu.inverse();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (symmetric_transfer_error(h, h_inv, src[i], dst[i]) <= tolerance) out.push_back(i);
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void RansacParams::validate() const {
  if (!(inlier_tolerance > 0) || !std::isfinite(inlier_tolerance)) {
    throw Error(ErrorCode::kInvalidArgument, "RANSAC inlier tolerance must be positive");
  }
  if (!(confidence > 0 && confidence < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "RANSAC confidence must lie in (0, 1)");
  }
  if (max_iterations < 1) throw Error(ErrorCode::kInvalidArgument, "RANSAC needs at least one iteration");
}

std::optional<Homography> fit_homography_dlt(std::span<const Point2> src,
                                             std::span<const Point2> dst) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "homography fit needs paired points");
  }
  if (src.size() < 4) return std::nullopt;
  const auto t_src = normalizer(src);
  const auto t_dst = normalizer(dst);
  if (!t_src || !t_dst) return std::nullopt;

  // Accumulate A^T A over the two DLT rows of each correspondence; its
  // smallest eigenvector is the least-squares null vector of A.
  Eigen::Matrix<double, 9, 9> ata = Eigen::Matrix<double, 9, 9>::Zero();
  Eigen::Matrix<double, 9, 1> r1, r2;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Eigen::Vector3d p = *t_src * Eigen::Vector3d(src[i].x, src[i].y, 1.0);
    const Eigen::Vector3d q = *t_dst * Eigen::Vector3d(dst[i].x, dst[i].y, 1.0);
    r1 << 0, 0, 0, -p.x(), -p.y(), -1, q.y() * p.x(), q.y() * p.y(), q.y();
    r2 << p.x(), p.y(), 1, 0, 0, 0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
    ata.noalias() += r1 * r1.transpose();
    ata.noalias() += r2 * r2.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> eig(ata);
  if (eig.info() != Eigen::Success) return std::nullopt;
  const Eigen::Matrix<double, 9, 1> h = eig.eigenvectors().col(0);

  Homography hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Homography out = t_dst->inverse() * hn * *t_src;
  if (!out.allFinite()) return std::nullopt;
  const double norm = out.norm();
  if (!(norm > 0)) return std::nullopt;
  out /= norm;
  if (std::abs(out.determinant()) < 1e-14) return std::nullopt;
  return out;
}

double symmetric_transfer_error(const Homography& h, const Homography& h_inv, const Point2& src,
                                const Point2& dst) {
  bool ok_fwd = false, ok_bwd = false;
  const Point2 fwd = apply(h, src, ok_fwd);
  const Point2 bwd = apply(h_inv, dst, ok_bwd);
  if (!ok_fwd || !ok_bwd) return std::numeric_limits<double>::infinity();
  const double e_fwd = std::hypot(dst.x - fwd.x, dst.y - fwd.y);
  const double e_bwd = std::hypot(src.x - bwd.x, src.y - bwd.y);
  const double e = std::max(e_fwd, e_bwd);
  return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

RansacFit ransac_homography(std::span<const Point2> src, std::span<const Point2> dst,
                            const RansacParams& params) {
  params.validate();
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "RANSAC needs paired points");
  }
  RansacFit fit;
  const std::size_t n = src.size();
  if (n < 4) return fit;

  std::mt19937_64 rng(params.seed);
  int budget = params.max_iterations;
  std::array<std::size_t, 4> idx{};
  std::array<Point2, 4> s{}, d{};
  for (int it = 0; it < budget; ++it) {
    fit.iterations = it + 1;
    for (std::size_t k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = uniform_index(rng, n);
        fresh = std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx[k]) ==
                idx.begin() + static_cast<std::ptrdiff_t>(k);
      } while (!fresh);
      s[k] = src[idx[k]];
      d[k] = dst[idx[k]];
    }
    if (degenerate_sample(s) || degenerate_sample(d)) continue;
    const auto h = fit_homography_dlt(s, d);
    if (!h) continue;
    auto inliers = consensus(*h, src, dst, params.inlier_tolerance);
    if (inliers.size() > fit.inliers.size()) {
      fit.inliers = std::move(inliers);
      fit.model = *h;
      budget = std::min(params.max_iterations,
                        required_iterations(fit.inliers.size(), n, params.confidence,
                                            params.max_iterations));
    }
  }

  // Least-squares refit on the consensus set while it keeps growing.
  for (int round = 0; round < kRefitRounds && fit.inliers.size() >= 4; ++round) {
    std::vector<Point2> in_src, in_dst;
    for (auto i : fit.inliers) {
      in_src.push_back(src[i]);
      in_dst.push_back(dst[i]);
    }
    const auto h = fit_homography_dlt(in_src, in_dst);
    if (!h) break;
    auto inliers = consensus(*h, src, dst, params.inlier_tolerance);
    if (inliers.size() <= fit.inliers.size()) break;
    fit.inliers = std::move(inliers);
    fit.model = *h;
  }
  return fit;
}

SpatialScore ransac_score(const MatchSet& matches, const PatchGrid& ref_grid,
                          const PatchGrid& query_grid, const RansacParams& params) {
  const auto n_p = static_cast<double>(query_grid.count());
  if (query_grid.count() == 0) throw Error(ErrorCode::kInvalidArgument, "query grid is empty");
  SpatialScore out;
  if (matches.size() < 4) {
    out.inliers = matches.pairs;
    out.score = static_cast<double>(matches.size()) / n_p;
    return out;
  }
  std::vector<Point2> src, dst;
  src.reserve(matches.size());
  dst.reserve(matches.size());
  for (const auto& m : matches.pairs) {
    src.push_back(ref_grid.centers.at(m.ref));
    dst.push_back(query_grid.centers.at(m.query));
  }
  const RansacFit fit = ransac_homography(src, dst, params);
  for (auto i : fit.inliers) out.inliers.push_back(matches.pairs[i]);
  out.score = static_cast<double>(fit.inliers.size()) / n_p;
  return out;
}

double rapid_spatial_score(std::span<const double> dx, std::span<const double> dy,
                           std::size_t num_patches, RapidOptions options) {
  if (dx.size() != dy.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "displacement lists differ in length");
  }
  if (num_patches == 0) throw Error(ErrorCode::kInvalidArgument, "patch count must be positive");
  if (dx.empty()) return 0.0;

  auto reach = [&](std::span<const double> d) {
    if (options.max_abs_displacement) {
      double m = 0;
      for (double v : d) m = std::max(m, std::abs(v));
      return m;
    }
    return std::abs(*std::max_element(d.begin(), d.end()));
  };
  auto mean = [](std::span<const double> d) {
    double s = 0;
    for (double v : d) s += v;
    return s / static_cast<double>(d.size());
  };
  const double max_x = reach(dx), max_y = reach(dy);
  const double mean_x = mean(dx), mean_y = mean(dy);
  double sum = 0;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double tx = max_x - std::abs(dx[i] - mean_x);
    const double ty = max_y - std::abs(dy[i] - mean_y);
    sum += tx * tx + ty * ty;
  }
  return sum / static_cast<double>(num_patches);
}

double rapid_spatial_score(const MatchSet& matches, const PatchGrid& ref_grid,
                           const PatchGrid& query_grid, RapidOptions options) {
  std::vector<double> dx, dy;
  dx.reserve(matches.size());
  dy.reserve(matches.size());
  for (const auto& m : matches.pairs) {
    const Point2& r = ref_grid.centers.at(m.ref);
    const Point2& q = query_grid.centers.at(m.query);
    dx.push_back(r.x - q.x);
    dy.push_back(r.y - q.y);
  }
  return rapid_spatial_score(dx, dy, query_grid.count(), options);
}

double fuse_scores(std::span<const double> per_scale, std::span<const double> weights) {
  if (per_scale.size() != weights.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "got " + std::to_string(per_scale.size()) + " scores for " +
                    std::to_string(weights.size()) + " weights");
  }
  if (!is_convex_weighting(weights)) {
    throw Error(ErrorCode::kInvalidArgument, "fusion weights must be non-negative and sum to 1");
  }
  double fused = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) fused += weights[i] * per_scale[i];
  return fused;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view query_id,
                          std::string_view candidate_id, std::size_t patch_size) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(query_id, h);
  h = fnv1a(std::string_view("\x1f", 1), h);
  h = fnv1a(candidate_id, h);
  return splitmix64(seed ^ splitmix64(h ^ splitmix64(patch_size)));
}

}  // namespace patchvlad
