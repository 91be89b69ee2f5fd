#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "patchvlad/types.hpp"

namespace patchvlad {

// mt19937_64 with bounded draws and normals defined here rather than by the
// standard library distributions, whose output differs between vendors.
class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();                    // [0, 1)
  std::size_t below(std::size_t n);   // [0, n), unbiased
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0;
};

struct SyntheticSpec {
  std::size_t num_references = 100;
  std::size_t num_queries = 50;
  std::size_t height = 15;
  std::size_t width = 20;
  std::size_t dim = 32;
  std::size_t num_clusters = 16;
  std::size_t proj_dim = 128;
  std::size_t max_shift = 3;        // queries are shifted by 1..max_shift cells
  double noise = 0.6;               // per-element Gaussian noise on queries
  double residual_scale = 1.0;      // spread of features around their cluster centre
  double assign_sharpness = 0.1;    // soft-assignment temperature of the random model
  double twin_fraction = 0.5;       // share of references that are shuffled twins
  std::size_t twin_block = 1;       // shuffle block size; 1 shuffles single locations
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  VladModel model;
  DatasetManifest manifest;  // paths are relative to the output directory
  std::vector<FeatureMap> references;
  std::vector<FeatureMap> queries;
  std::vector<std::size_t> query_sources;  // reference index each query was cut from
  std::vector<std::pair<int, int>> query_shifts;  // (rows, cols)
};

VladModel random_model(std::size_t num_clusters, std::size_t dim, std::size_t proj_dim,
                       double assign_sharpness, PortableRng& rng);

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Writes model.json (+ model_tensors/), refs/, queries/ and manifest.json.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir);

}  // namespace patchvlad
