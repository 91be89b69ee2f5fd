#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchvlad/config.hpp"
#include "patchvlad/retrieval.hpp"
#include "patchvlad/types.hpp"

namespace patchvlad {

// TensorFile layout, little-endian throughout:
//   "PVT1" | rank:u8 | dims: rank x u32 | dtype:u8 (1 = float32) | payload
inline constexpr std::array<char, 4> kTensorMagic{'P', 'V', 'T', '1'};
inline constexpr std::uint8_t kDtypeFloat32 = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t numel() const noexcept;
};

struct TensorHeader {
  std::vector<std::uint32_t> dims;
  std::uint8_t dtype = 0;
  std::size_t header_bytes = 0;
  std::uint64_t payload_bytes = 0;  // as implied by dims and dtype
};

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
TensorHeader decode_tensor_header(std::span<const std::uint8_t> bytes);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const Tensor& tensor, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);
TensorHeader read_tensor_header(const std::filesystem::path& path);

// Feature maps are rank-3 (H, W, D) tensors. The id defaults to the file stem.
FeatureMap read_feature_map(const std::filesystem::path& path,
                            std::optional<std::string> image_id = std::nullopt);
void write_feature_map(const FeatureMap& fmap, const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

enum class TensorStorage { kFiles, kInline };

// Model document: JSON with K, D, D_proj and one entry per parameter tensor,
// either a path relative to the document or {"base64": <TensorFile bytes>}.
VladModel load_model_unchecked(const std::filesystem::path& path);
VladModel load_model(const std::filesystem::path& path);  // throws kInvalidModel
void save_model(const VladModel& model, const std::filesystem::path& path,
                TensorStorage storage = TensorStorage::kFiles);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// `base_dir` resolves a relative "model" entry.
RunConfig config_from_json(std::string_view text,
                           const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const RunConfig& cfg);
// Overrides one top-level key with a JSON value, e.g. ("scorer", "\"rapid\"").
void apply_config_override(RunConfig& cfg, std::string_view key, std::string_view json_value);

struct IndexFile {
  GlobalIndex index;
  std::optional<std::filesystem::path> model_path;  // resolved
};

void save_index(const GlobalIndex& index, const std::filesystem::path& path,
                const std::optional<std::filesystem::path>& model_path = std::nullopt);
IndexFile load_index(const std::filesystem::path& path);

std::string results_to_json(std::span<const RetrievalResult> results);
std::vector<RetrievalResult> results_from_json(std::string_view text);
void save_results(std::span<const RetrievalResult> results, const std::filesystem::path& path);
std::vector<RetrievalResult> load_results(const std::filesystem::path& path);

std::string report_to_json(const EvalReport& report);
std::string report_to_text(const EvalReport& report);
// "N,recall_percent" rows, then "meters,degrees,percent" rows when present.
std::string report_to_csv(const EvalReport& report);

// Per-scale and fused scores; with `query`/`candidate` descriptor sets the
// correspondences are dumped with their patch centres.
std::string pair_to_json(const ScoredPair& pair, const DescriptorSets* query = nullptr,
                         const DescriptorSets* candidate = nullptr);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace patchvlad
