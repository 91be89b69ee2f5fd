#include "patchvlad/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <thread>

#include "patchvlad/error.hpp"

namespace patchvlad {

const char* scorer_name(Scorer s) noexcept {
  return s == Scorer::kRansac ? "ransac" : "rapid";
}

Scorer parse_scorer(std::string_view name) {
  if (name == "ransac") return Scorer::kRansac;
  if (name == "rapid") return Scorer::kRapid;
  throw Error(ErrorCode::kInvalidArgument, "unknown scorer '" + std::string(name) + "'");
}

void RunConfig::validate() const {
  patches.validate();
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "shortlist size k must be at least 1");
  if (inlier_tolerance && !(*inlier_tolerance > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "inlier tolerance must be positive");
  }
  if (ransac_max_iterations < 1) {
    throw Error(ErrorCode::kInvalidArgument, "RANSAC needs at least one iteration");
  }
  if (!(ransac_confidence > 0 && ransac_confidence < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "RANSAC confidence must lie in (0, 1)");
  }
  if (proj_dim && *proj_dim == 0) throw Error(ErrorCode::kInvalidArgument, "proj_dim must be positive");
}

VladModel apply_projection_cap(const VladModel& model, const RunConfig& cfg) {
  if (!cfg.proj_dim || *cfg.proj_dim >= model.proj_dim) return model;
  return model.truncated(*cfg.proj_dim);
}

RunConfig preset_config(std::string_view name) {
  RunConfig cfg;
  if (name == "performance") {
    cfg.scorer = Scorer::kRansac;
    cfg.proj_dim = 4096;
  } else if (name == "balanced") {
    cfg.scorer = Scorer::kRapid;
    cfg.proj_dim = 4096;
  } else if (name == "speed") {
    cfg.scorer = Scorer::kRapid;
    cfg.patches.patch_sizes = {5};
    cfg.patches.fusion_weights = {1.0};
    cfg.proj_dim = 512;
  } else if (name == "storage") {
    cfg.scorer = Scorer::kRansac;
    cfg.proj_dim = 128;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown preset '" + std::string(name) + "'");
  }
  return cfg;
}

std::vector<std::string> preset_names() { return {"performance", "balanced", "speed", "storage"}; }

std::size_t resolve_thread_count(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PATCHVLAD_THREADS")) {
    std::size_t value = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec == std::errc() && ptr == s.data() + s.size() && value > 0) return value;
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace patchvlad
