#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patchvlad/types.hpp"
#include "patchvlad/vlad.hpp"

namespace patchvlad {

enum class Scorer { kRansac, kRapid };

const char* scorer_name(Scorer s) noexcept;
Scorer parse_scorer(std::string_view name);

// Everything a retrieval run needs besides the model and data. Defaults are
// the single cross-dataset configuration: sizes 2/5/8 fused with
// 0.45/0.15/0.4, stride 1, RANSAC scoring, shortlist of 100.
struct RunConfig {
  PatchConfig patches;
  Scorer scorer = Scorer::kRansac;
  std::size_t k = 100;

  std::optional<double> inlier_tolerance;  // unset: the patch stride
  int ransac_max_iterations = 2000;
  double ransac_confidence = 0.999;
  std::uint64_t seed = 0;

  bool max_abs_displacement = false;
  Pooling pooling = Pooling::kVlad;

  // Upper bound on the projection size; larger models are truncated to it.
  std::optional<std::size_t> proj_dim;
  // Model file; relative paths resolve against the config file's directory.
  std::optional<std::string> model_path;

  std::size_t threads = 0;  // 0: PATCHVLAD_THREADS or hardware concurrency
  std::size_t descriptor_cache = 128;  // reference descriptor sets kept in memory

  void validate() const;
  double effective_tolerance() const {
    return inlier_tolerance.value_or(static_cast<double>(patches.stride));
  }
};

// Applies the proj_dim cap.
VladModel apply_projection_cap(const VladModel& model, const RunConfig& cfg);

// Named presets: performance, balanced, speed, storage.
RunConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

// Resolves threads == 0 against PATCHVLAD_THREADS, then the hardware.
std::size_t resolve_thread_count(std::size_t requested);

}  // namespace patchvlad
