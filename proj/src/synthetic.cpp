#include "patchvlad/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/QR>

#include "patchvlad/error.hpp"
#include "patchvlad/io.hpp"

namespace patchvlad {

namespace fs = std::filesystem;

double PortableRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t PortableRng::below(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "empty draw range");
  const std::uint64_t b = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % b;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<std::size_t>(v % b);
}

double PortableRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

void SyntheticSpec::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be positive");
  };
  positive(num_references, "num_references");
  positive(height, "height");
  positive(width, "width");
  positive(dim, "dim");
  positive(num_clusters, "num_clusters");
  positive(proj_dim, "proj_dim");
  positive(twin_block, "twin_block");
  if (proj_dim > num_clusters * dim) {
    throw Error(ErrorCode::kInvalidArgument, "proj_dim cannot exceed num_clusters * dim");
  }
  if (!(noise >= 0) || !(residual_scale >= 0) || !(assign_sharpness > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "noise and scales must be non-negative");
  }
  if (!(twin_fraction >= 0 && twin_fraction < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "twin_fraction must lie in [0, 1)");
  }
  if (max_shift >= height && max_shift >= width) {
    throw Error(ErrorCode::kInvalidArgument, "max_shift leaves no overlap with the reference");
  }
}

VladModel random_model(std::size_t num_clusters, std::size_t dim, std::size_t proj_dim,
                       double assign_sharpness, PortableRng& rng) {
  VladModel m;
  m.num_clusters = num_clusters;
  m.dim = dim;
  m.proj_dim = proj_dim;
  m.centers.resize(static_cast<Eigen::Index>(num_clusters), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < m.centers.size(); ++i) {
    m.centers.data()[i] = static_cast<float>(rng.normal());
  }
  // softmax(2a c_k.x - a|c_k|^2) = softmax(-a |x - c_k|^2)
  m.assign_weights = (2.0f * static_cast<float>(assign_sharpness)) * m.centers;
  m.assign_bias = (-static_cast<float>(assign_sharpness)) * m.centers.rowwise().squaredNorm();

  const auto n = static_cast<Eigen::Index>(num_clusters * dim);
  Eigen::MatrixXd gauss(n, static_cast<Eigen::Index>(proj_dim));
  for (Eigen::Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = rng.normal();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  const Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(n, static_cast<Eigen::Index>(proj_dim));
  m.pca_basis = q.transpose().cast<float>();
  m.pca_mean = Eigen::VectorXf::Zero(n);
  m.pca_whiten = Eigen::VectorXf::Ones(static_cast<Eigen::Index>(proj_dim));
  return m;
}

namespace {

void shuffle_indices(std::vector<std::size_t>& v, PortableRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<float> random_scene(const SyntheticSpec& spec, const VladModel& model, PortableRng& rng) {
  std::vector<float> data(spec.height * spec.width * spec.dim);
  for (std::size_t loc = 0; loc < spec.height * spec.width; ++loc) {
    const auto label = static_cast<Eigen::Index>(rng.below(spec.num_clusters));
    for (std::size_t j = 0; j < spec.dim; ++j) {
      data[loc * spec.dim + j] = model.centers(label, static_cast<Eigen::Index>(j)) +
                                 static_cast<float>(spec.residual_scale * rng.normal());
    }
  }
  return data;
}

// Permutes whole twin_block x twin_block tiles; a ragged border stays put.
std::vector<float> shuffled_twin(const std::vector<float>& scene, const SyntheticSpec& spec,
                                 PortableRng& rng) {
  const std::size_t b = spec.twin_block;
  const std::size_t tile_rows = spec.height / b, tile_cols = spec.width / b;
  std::vector<std::size_t> perm(tile_rows * tile_cols);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle_indices(perm, rng);
  std::vector<float> out = scene;
  for (std::size_t t = 0; t < perm.size(); ++t) {
    const std::size_t dr = (t / tile_cols) * b, dc = (t % tile_cols) * b;
    const std::size_t sr = (perm[t] / tile_cols) * b, sc = (perm[t] % tile_cols) * b;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t dst = ((dr + i) * spec.width + dc + j) * spec.dim;
        const std::size_t src = ((sr + i) * spec.width + sc + j) * spec.dim;
        std::copy_n(scene.begin() + static_cast<std::ptrdiff_t>(src), spec.dim,
                    out.begin() + static_cast<std::ptrdiff_t>(dst));
      }
    }
  }
  return out;
}

int draw_shift(std::size_t max_shift, std::size_t extent, PortableRng& rng) {
  const std::size_t limit = std::min(max_shift, extent - 1);
  if (limit == 0) return 0;
  const int magnitude = static_cast<int>(rng.below(limit + 1));
  return rng.below(2) == 0 ? magnitude : -magnitude;
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", prefix, i);
  return buf;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  PortableRng rng(spec.seed);
  SyntheticDataset out;
  out.model = random_model(spec.num_clusters, spec.dim, spec.proj_dim, spec.assign_sharpness, rng);

  const auto num_twins = static_cast<std::size_t>(
      std::floor(spec.twin_fraction * static_cast<double>(spec.num_references)));
  const std::size_t num_originals = spec.num_references - num_twins;

  std::vector<std::vector<float>> scenes;
  for (std::size_t i = 0; i < num_originals; ++i) scenes.push_back(random_scene(spec, out.model, rng));
  for (std::size_t i = 0; i < num_twins; ++i) {
    scenes.push_back(shuffled_twin(scenes[i % num_originals], spec, rng));
  }

  // Reference order (and frame index) is a random permutation of the scenes.
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_indices(order, rng);
  std::vector<std::size_t> position_of(scenes.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) position_of[order[pos]] = pos;

  out.manifest.tolerance = FrameWindow{0};
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const std::string id = numbered("ref", pos);
    out.references.emplace_back(id, spec.height, spec.width, spec.dim, scenes[order[pos]]);
    Pose pose;
    pose.position = {10.0 * static_cast<double>(pos), 0.0, 0.0};
    out.manifest.references.push_back(
        ManifestEntry{id, fs::path("refs") / (id + ".pvt"), pose, static_cast<std::int64_t>(pos)});
  }

  for (std::size_t qi = 0; qi < spec.num_queries; ++qi) {
    const std::size_t scene = qi % num_originals;
    const std::vector<float>& src = scenes[scene];
    int dy = 0, dx = 0;
    while (dy == 0 && dx == 0) {
      dy = draw_shift(spec.max_shift, spec.height, rng);
      dx = draw_shift(spec.max_shift, spec.width, rng);
    }
    // Fresh content fills the band the shift uncovers.
    std::vector<float> data = random_scene(spec, out.model, rng);
    for (std::size_t r = 0; r < spec.height; ++r) {
      for (std::size_t c = 0; c < spec.width; ++c) {
        const long sr = static_cast<long>(r) + dy, sc = static_cast<long>(c) + dx;
        if (sr < 0 || sc < 0 || sr >= static_cast<long>(spec.height) ||
            sc >= static_cast<long>(spec.width)) {
          continue;
        }
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(
                                      (static_cast<std::size_t>(sr) * spec.width +
                                       static_cast<std::size_t>(sc)) * spec.dim),
                    spec.dim, data.begin() + static_cast<std::ptrdiff_t>((r * spec.width + c) * spec.dim));
      }
    }
    if (spec.noise > 0) {
      for (float& v : data) v += static_cast<float>(spec.noise * rng.normal());
    }
    const std::string id = numbered("query", qi);
    out.queries.emplace_back(id, spec.height, spec.width, spec.dim, std::move(data));
    const std::size_t ref_pos = position_of[scene];
    out.query_sources.push_back(ref_pos);
    out.query_shifts.emplace_back(dy, dx);
    Pose pose = *out.manifest.references[ref_pos].pose;
    pose.position[1] = 0.5 * dy;
    pose.position[2] = 0.5 * dx;
    out.manifest.queries.push_back(ManifestEntry{id, fs::path("queries") / (id + ".pvt"), pose,
                                                 static_cast<std::int64_t>(ref_pos)});
  }
  return out;
}

void write_synthetic(const SyntheticDataset& data, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  save_model(data.model, out_dir / "model.json");
  DatasetManifest manifest = data.manifest;
  for (std::size_t i = 0; i < data.references.size(); ++i) {
    manifest.references[i].path = out_dir / manifest.references[i].path;
    write_feature_map(data.references[i], manifest.references[i].path);
  }
  for (std::size_t i = 0; i < data.queries.size(); ++i) {
    manifest.queries[i].path = out_dir / manifest.queries[i].path;
    write_feature_map(data.queries[i], manifest.queries[i].path);
  }
  save_manifest(manifest, out_dir / "manifest.json");
}

}  // namespace patchvlad
