#include "patchvlad/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <sstream>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <nlohmann/json.hpp>

#include "patchvlad/error.hpp"

namespace patchvlad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIo, "failed reading '" + path.string() + "'");
  return bytes;
}

void write_binary(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, what + ": " + e.what());
  }
}

// Runs a JSON field-access block, converting library exceptions into parse errors.
template <typename Fn>
auto with_schema(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, what + ": " + e.what());
  }
}

void require_schema(const json& doc, const std::string& what) {
  if (!doc.is_object()) throw Error(ErrorCode::kParse, what + ": expected a JSON object");
  const auto it = doc.find("schema_version");
  if (it == doc.end() || !it->is_number_integer() || it->get<int>() != kSchemaVersion) {
    throw Error(ErrorCode::kParse, what + ": unsupported or missing schema_version");
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

// `p` as seen from `base`; both may be relative to the working directory.
std::string relative_string(const fs::path& p, const fs::path& base) {
  std::error_code ec;
  const auto rel = fs::relative(fs::absolute(p), fs::absolute(base.empty() ? fs::path(".") : base), ec);
  return ec || rel.empty() ? p.generic_string() : rel.generic_string();
}

Tensor tensor_from_matrix(const MatrixXfR& m) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

Tensor tensor_from_vector(const Eigen::VectorXf& v) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.values.assign(v.data(), v.data() + v.size());
  return t;
}

MatrixXfR matrix_from_tensor(const Tensor& t, const std::string& name) {
  Eigen::Index rows = 0, cols = 0;
  if (t.dims.size() == 2) {
    rows = t.dims[0];
    cols = t.dims[1];
  } else if (t.dims.size() == 1) {
    rows = 1;
    cols = t.dims[0];
  } else {
    throw Error(ErrorCode::kParse, "tensor '" + name + "' must be rank 1 or 2");
  }
  MatrixXfR m(rows, cols);
  std::copy(t.values.begin(), t.values.end(), m.data());
  return m;
}

Eigen::VectorXf vector_from_tensor(const Tensor& t) {
  Eigen::VectorXf v(static_cast<Eigen::Index>(t.values.size()));
  std::copy(t.values.begin(), t.values.end(), v.data());
  return v;
}

json pose_to_json(const Pose& p) {
  return {{"position", p.position}, {"orientation", p.orientation}};
}

Pose pose_from_json(const json& j) {
  Pose p;
  p.position = j.at("position").get<std::array<double, 3>>();
  p.orientation = j.at("orientation").get<std::array<double, 4>>();
  return p;
}

json entry_to_json(const ManifestEntry& e, const fs::path& base) {
  json j{{"id", e.image_id}, {"path", relative_string(e.path, base)}};
  if (e.pose) j["pose"] = pose_to_json(*e.pose);
  if (e.frame_index) j["frame_index"] = *e.frame_index;
  return j;
}

ManifestEntry entry_from_json(const json& j, const fs::path& base) {
  ManifestEntry e;
  e.image_id = j.at("id").get<std::string>();
  e.path = resolve(base, fs::path(j.at("path").get<std::string>()));
  if (auto it = j.find("pose"); it != j.end() && !it->is_null()) e.pose = pose_from_json(*it);
  if (auto it = j.find("frame_index"); it != j.end() && !it->is_null()) {
    e.frame_index = it->get<std::int64_t>();
  }
  return e;
}

json tolerance_to_json(const ToleranceSpec& tol) {
  return std::visit(
      [](const auto& t) -> json {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, FrameWindow>) {
          return {{"type", "frame_window"}, {"frames", t.frames}};
        } else if constexpr (std::is_same_v<T, Radius>) {
          return {{"type", "radius"}, {"meters", t.meters}};
        } else if constexpr (std::is_same_v<T, RadiusOrientation>) {
          return {{"type", "radius_orientation"}, {"meters", t.meters}, {"degrees", t.degrees}};
        } else {
          json pairs = json::array();
          for (const auto& [m, d] : t.thresholds) pairs.push_back({m, d});
          return {{"type", "pose_thresholds"}, {"thresholds", pairs}};
        }
      },
      tol);
}

ToleranceSpec tolerance_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "frame_window") return FrameWindow{j.at("frames").get<std::int64_t>()};
  if (type == "radius") return Radius{j.at("meters").get<double>()};
  if (type == "radius_orientation") {
    return RadiusOrientation{j.at("meters").get<double>(), j.at("degrees").get<double>()};
  }
  if (type == "pose_thresholds") {
    PoseThresholds t;
    for (const auto& pair : j.at("thresholds")) {
      t.thresholds.emplace_back(pair.at(0).get<double>(), pair.at(1).get<double>());
    }
    return t;
  }
  throw Error(ErrorCode::kParse, "unknown tolerance type '" + type + "'");
}

void apply_config_key(RunConfig& cfg, const std::string& key, const json& v,
                      const fs::path& base_dir) {
  if (key == "patch_sizes") {
    cfg.patches.patch_sizes = v.get<std::vector<std::size_t>>();
  } else if (key == "fusion_weights") {
    cfg.patches.fusion_weights = v.get<std::vector<double>>();
  } else if (key == "stride") {
    cfg.patches.stride = v.get<std::size_t>();
  } else if (key == "scorer") {
    cfg.scorer = parse_scorer(v.get<std::string>());
  } else if (key == "k") {
    cfg.k = v.get<std::size_t>();
  } else if (key == "seed") {
    cfg.seed = v.get<std::uint64_t>();
  } else if (key == "max_abs_displacement") {
    cfg.max_abs_displacement = v.get<bool>();
  } else if (key == "pooling") {
    cfg.pooling = parse_pooling(v.get<std::string>());
  } else if (key == "proj_dim") {
    if (v.is_null()) cfg.proj_dim.reset(); else cfg.proj_dim = v.get<std::size_t>();
  } else if (key == "model") {
    if (v.is_null()) {
      cfg.model_path.reset();
    } else {
      cfg.model_path = resolve(base_dir, fs::path(v.get<std::string>())).string();
    }
  } else if (key == "threads") {
    cfg.threads = v.get<std::size_t>();
  } else if (key == "descriptor_cache") {
    cfg.descriptor_cache = v.get<std::size_t>();
  } else if (key == "ransac") {
    for (const auto& [rk, rv] : v.items()) {
      if (rk == "inlier_tolerance") {
        if (rv.is_null()) cfg.inlier_tolerance.reset(); else cfg.inlier_tolerance = rv.get<double>();
      } else if (rk == "max_iterations") {
        cfg.ransac_max_iterations = rv.get<int>();
      } else if (rk == "confidence") {
        cfg.ransac_confidence = rv.get<double>();
      } else {
        throw Error(ErrorCode::kParse, "unknown ransac config key '" + rk + "'");
      }
    }
  } else if (key == "preset" || key == "schema_version") {
    // handled by the caller
  } else {
    throw Error(ErrorCode::kParse, "unknown config key '" + key + "'");
  }
}

json scale_to_json(const ScaleScore& s) {
  return {{"patch_size", s.patch_size},   {"num_patches", s.num_patches},
          {"num_matches", s.num_matches}, {"num_inliers", s.inliers.size()},
          {"score", s.score}};
}

std::string fixed(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

std::size_t Tensor::numel() const noexcept {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw Error(ErrorCode::kInvalidArgument, "tensor rank exceeds 255");
  }
  if (tensor.values.size() != tensor.numel()) {
    throw Error(ErrorCode::kDimensionMismatch, "tensor values do not match its dims");
  }
  std::vector<std::uint8_t> out;
  out.reserve(6 + 4 * tensor.dims.size() + 4 * tensor.values.size());
  out.insert(out.end(), kTensorMagic.begin(), kTensorMagic.end());
  out.push_back(static_cast<std::uint8_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_u32(out, d);
  out.push_back(kDtypeFloat32);
  for (float v : tensor.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

TensorHeader decode_tensor_header(std::span<const std::uint8_t> bytes) {
  const std::size_t magic_len = std::min(bytes.size(), kTensorMagic.size());
  if (!std::equal(kTensorMagic.begin(), kTensorMagic.begin() + static_cast<std::ptrdiff_t>(magic_len),
                  bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw Error(ErrorCode::kBadMagic, "not a PVT1 tensor file");
  }
  // A prefix of the magic is a cut-off file rather than a foreign one.
  if (magic_len < kTensorMagic.size()) throw Error(ErrorCode::kTruncated, "tensor file truncated in magic");
  if (bytes.size() < 5) throw Error(ErrorCode::kTruncated, "tensor header truncated before rank");
  TensorHeader h;
  const std::size_t rank = bytes[4];
  const std::size_t dims_end = 5 + 4 * rank;
  if (bytes.size() < dims_end + 1) throw Error(ErrorCode::kTruncated, "tensor header truncated");
  std::uint64_t numel = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    h.dims.push_back(get_u32(bytes.data() + 5 + 4 * i));
    numel *= h.dims.back();
  }
  h.dtype = bytes[dims_end];
  h.header_bytes = dims_end + 1;
  if (h.dtype != kDtypeFloat32) {
    throw Error(ErrorCode::kUnsupportedDtype,
                "unsupported tensor dtype code " + std::to_string(h.dtype));
  }
  h.payload_bytes = numel * 4;
  return h;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  const TensorHeader h = decode_tensor_header(bytes);
  const std::uint64_t available = bytes.size() - h.header_bytes;
  if (available < h.payload_bytes) {
    throw Error(ErrorCode::kTruncated, "tensor payload has " + std::to_string(available) +
                                           " bytes, expected " + std::to_string(h.payload_bytes));
  }
  if (available > h.payload_bytes) {
    throw Error(ErrorCode::kParse, "tensor file has " + std::to_string(available - h.payload_bytes) +
                                       " trailing bytes");
  }
  Tensor t;
  t.dims = h.dims;
  t.values.resize(h.payload_bytes / 4);
  const std::uint8_t* p = bytes.data() + h.header_bytes;
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    t.values[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  }
  return t;
}

void write_tensor(const Tensor& tensor, const fs::path& path) {
  write_binary(path, encode_tensor(tensor));
}

Tensor read_tensor(const fs::path& path) {
  const auto bytes = read_binary(path);
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

TensorHeader read_tensor_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> head(5 + 4 * 255 + 1);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  in.clear();
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  TensorHeader h = decode_tensor_header(head);
  if (file_size - h.header_bytes < h.payload_bytes) {
    throw Error(ErrorCode::kTruncated, path.string() + ": tensor payload truncated");
  }
  return h;
}

FeatureMap read_feature_map(const fs::path& path, std::optional<std::string> image_id) {
  Tensor t = read_tensor(path);
  if (t.dims.size() != 3) {
    throw Error(ErrorCode::kDimensionMismatch,
                path.string() + ": feature map must be rank 3 (H, W, D), got rank " +
                    std::to_string(t.dims.size()));
  }
  return FeatureMap(image_id.value_or(path.stem().string()), t.dims[0], t.dims[1], t.dims[2],
                    std::move(t.values));
}

void write_feature_map(const FeatureMap& fmap, const fs::path& path) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(fmap.height()), static_cast<std::uint32_t>(fmap.width()),
            static_cast<std::uint32_t>(fmap.depth())};
  t.values.assign(fmap.data().begin(), fmap.data().end());
  write_tensor(t, path);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<const std::uint8_t*, 6, 8>>;
  std::string out(It(bytes.data()), It(bytes.data() + bytes.size()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<const char*>, 8, 6>;
  std::size_t padding = 0;
  while (!text.empty() && text.back() == '=') {
    text.remove_suffix(1);
    ++padding;
  }
  if (padding > 2 || text.size() % 4 == 1) throw Error(ErrorCode::kParse, "malformed base64 block");
  try {
    std::vector<std::uint8_t> out(It(text.data()), It(text.data() + text.size()));
    // The iterator emits a partial byte for the trailing bits; drop it.
    out.resize(text.size() * 6 / 8);
    return out;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParse, "malformed base64 block");
  }
}

VladModel load_model_unchecked(const fs::path& path) {
  const json doc = parse_json(read_text_file(path), path.string());
  require_schema(doc, path.string());
  const fs::path base = path.parent_path();
  return with_schema(path.string(), [&] {
    VladModel m;
    m.num_clusters = doc.at("num_clusters").get<std::size_t>();
    m.dim = doc.at("dim").get<std::size_t>();
    m.proj_dim = doc.at("proj_dim").get<std::size_t>();
    const json& tensors = doc.at("tensors");
    auto load = [&](const char* name) {
      const json& entry = tensors.at(name);
      if (entry.is_string()) return read_tensor(resolve(base, fs::path(entry.get<std::string>())));
      return decode_tensor(base64_decode(entry.at("base64").get<std::string>()));
    };
    m.centers = matrix_from_tensor(load("centers"), "centers");
    m.assign_weights = matrix_from_tensor(load("assign_weights"), "assign_weights");
    m.assign_bias = vector_from_tensor(load("assign_bias"));
    m.pca_mean = vector_from_tensor(load("pca_mean"));
    m.pca_basis = matrix_from_tensor(load("pca_basis"), "pca_basis");
    m.pca_whiten = vector_from_tensor(load("pca_whiten"));
    return m;
  });
}

VladModel load_model(const fs::path& path) {
  VladModel m = load_model_unchecked(path);
  require_valid_model(m);
  return m;
}

void save_model(const VladModel& model, const fs::path& path, TensorStorage storage) {
  const std::vector<std::pair<std::string, Tensor>> tensors{
      {"centers", tensor_from_matrix(model.centers)},
      {"assign_weights", tensor_from_matrix(model.assign_weights)},
      {"assign_bias", tensor_from_vector(model.assign_bias)},
      {"pca_mean", tensor_from_vector(model.pca_mean)},
      {"pca_basis", tensor_from_matrix(model.pca_basis)},
      {"pca_whiten", tensor_from_vector(model.pca_whiten)},
  };
  json doc{{"schema_version", kSchemaVersion},
           {"num_clusters", model.num_clusters},
           {"dim", model.dim},
           {"proj_dim", model.proj_dim}};
  json entries = json::object();
  const fs::path base = path.parent_path();
  const std::string stem = path.stem().string();
  for (const auto& [name, tensor] : tensors) {
    if (storage == TensorStorage::kInline) {
      entries[name] = {{"base64", base64_encode(encode_tensor(tensor))}};
    } else {
      const fs::path rel = fs::path(stem + "_tensors") / (name + ".pvt");
      write_tensor(tensor, resolve(base, rel));
      entries[name] = rel.generic_string();
    }
  }
  doc["tensors"] = entries;
  write_text_file(path, doc.dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& path) {
  const json doc = parse_json(read_text_file(path), path.string());
  require_schema(doc, path.string());
  const fs::path base = path.parent_path();
  DatasetManifest m = with_schema(path.string(), [&] {
    DatasetManifest out;
    out.tolerance = tolerance_from_json(doc.at("tolerance"));
    for (const auto& e : doc.at("references")) out.references.push_back(entry_from_json(e, base));
    if (auto it = doc.find("queries"); it != doc.end()) {
      for (const auto& e : *it) out.queries.push_back(entry_from_json(e, base));
    }
    return out;
  });
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const fs::path base = path.parent_path();
  json refs = json::array(), queries = json::array();
  for (const auto& e : manifest.references) refs.push_back(entry_to_json(e, base));
  for (const auto& e : manifest.queries) queries.push_back(entry_to_json(e, base));
  const json doc{{"schema_version", kSchemaVersion},
                 {"tolerance", tolerance_to_json(manifest.tolerance)},
                 {"references", refs},
                 {"queries", queries}};
  write_text_file(path, doc.dump(2) + "\n");
}

RunConfig config_from_json(std::string_view text, const fs::path& base_dir) {
  const json doc = parse_json(text, "config");
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "config: expected a JSON object");
  RunConfig cfg = with_schema("config", [&] {
    RunConfig c;
    if (auto it = doc.find("preset"); it != doc.end()) c = preset_config(it->get<std::string>());
    for (const auto& [key, value] : doc.items()) apply_config_key(c, key, value, base_dir);
    return c;
  });
  cfg.validate();
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  return config_from_json(read_text_file(path), path.parent_path());
}

std::string config_to_json(const RunConfig& cfg) {
  json ransac{{"max_iterations", cfg.ransac_max_iterations},
              {"confidence", cfg.ransac_confidence}};
  ransac["inlier_tolerance"] =
      cfg.inlier_tolerance ? json(*cfg.inlier_tolerance) : json(nullptr);
  json doc{{"patch_sizes", cfg.patches.patch_sizes},
           {"fusion_weights", cfg.patches.fusion_weights},
           {"stride", cfg.patches.stride},
           {"scorer", scorer_name(cfg.scorer)},
           {"k", cfg.k},
           {"ransac", ransac},
           {"seed", cfg.seed},
           {"max_abs_displacement", cfg.max_abs_displacement},
           {"pooling", pooling_name(cfg.pooling)},
           {"threads", cfg.threads},
           {"descriptor_cache", cfg.descriptor_cache}};
  doc["proj_dim"] = cfg.proj_dim ? json(*cfg.proj_dim) : json(nullptr);
  doc["model"] = cfg.model_path ? json(*cfg.model_path) : json(nullptr);
  return doc.dump(2) + "\n";
}

void apply_config_override(RunConfig& cfg, std::string_view key, std::string_view json_value) {
  const json v = parse_json(json_value, "config override '" + std::string(key) + "'");
  RunConfig next = cfg;
  with_schema("config override", [&] { apply_config_key(next, std::string(key), v, {}); });
  next.validate();
  cfg = std::move(next);
}

void save_index(const GlobalIndex& index, const fs::path& path,
                const std::optional<fs::path>& model_path) {
  index.validate();
  const fs::path base = path.parent_path();
  json refs = json::array();
  for (std::size_t i = 0; i < index.size(); ++i) {
    refs.push_back({{"id", index.image_ids[i]}, {"path", relative_string(index.paths[i], base)}});
  }
  json doc{{"schema_version", kSchemaVersion},
           {"references", refs},
           {"descriptors", {{"base64", base64_encode(encode_tensor(tensor_from_matrix(index.descriptors)))}}}};
  doc["model"] = model_path ? json(relative_string(*model_path, base))
                            : json(nullptr);
  write_text_file(path, doc.dump(2) + "\n");
}

IndexFile load_index(const fs::path& path) {
  const json doc = parse_json(read_text_file(path), path.string());
  require_schema(doc, path.string());
  const fs::path base = path.parent_path();
  IndexFile out = with_schema(path.string(), [&] {
    IndexFile f;
    for (const auto& r : doc.at("references")) {
      f.index.image_ids.push_back(r.at("id").get<std::string>());
      f.index.paths.push_back(resolve(base, fs::path(r.at("path").get<std::string>())));
    }
    const Tensor t = decode_tensor(base64_decode(doc.at("descriptors").at("base64").get<std::string>()));
    if (t.dims.size() != 2) throw Error(ErrorCode::kParse, "index descriptors must be rank 2");
    f.index.descriptors = matrix_from_tensor(t, "descriptors");
    if (auto it = doc.find("model"); it != doc.end() && !it->is_null()) {
      f.model_path = resolve(base, fs::path(it->get<std::string>()));
    }
    return f;
  });
  out.index.validate();
  return out;
}

std::string results_to_json(std::span<const RetrievalResult> results) {
  json all = json::array();
  for (const auto& r : results) {
    json shortlist = json::array(), reranked = json::array(), pairs = json::array();
    for (const auto& c : r.shortlist) {
      shortlist.push_back({{"id", c.image_id}, {"index", c.index}, {"distance", c.distance}});
    }
    for (const auto& c : r.reranked) {
      reranked.push_back({{"id", c.image_id},
                          {"shortlist_rank", c.shortlist_rank},
                          {"global_distance", c.global_distance},
                          {"fused_score", c.fused_score},
                          {"dropped", c.dropped}});
    }
    for (const auto& p : r.pairs) {
      json scales = json::array();
      for (const auto& s : p.scales) scales.push_back(scale_to_json(s));
      pairs.push_back({{"candidate_id", p.candidate_id}, {"fused_score", p.fused_score}, {"scales", scales}});
    }
    all.push_back({{"query_id", r.query_id},
                   {"shortlist", shortlist},
                   {"reranked", reranked},
                   {"pairs", pairs},
                   {"dropped", r.dropped}});
  }
  return json{{"schema_version", kSchemaVersion}, {"results", all}}.dump(2) + "\n";
}

std::vector<RetrievalResult> results_from_json(std::string_view text) {
  const json doc = parse_json(text, "results");
  require_schema(doc, "results");
  return with_schema("results", [&] {
    std::vector<RetrievalResult> out;
    for (const auto& jr : doc.at("results")) {
      RetrievalResult r;
      r.query_id = jr.at("query_id").get<std::string>();
      for (const auto& c : jr.at("shortlist")) {
        r.shortlist.push_back({c.at("id").get<std::string>(), c.at("index").get<std::size_t>(),
                               c.at("distance").get<double>()});
      }
      for (const auto& c : jr.at("reranked")) {
        RankedCandidate rc;
        rc.image_id = c.at("id").get<std::string>();
        rc.shortlist_rank = c.at("shortlist_rank").get<std::size_t>();
        rc.global_distance = c.at("global_distance").get<double>();
        rc.fused_score = c.at("fused_score").get<double>();
        rc.dropped = c.value("dropped", false);
        r.reranked.push_back(std::move(rc));
      }
      for (const auto& jp : jr.at("pairs")) {
        ScoredPair p;
        p.query_id = r.query_id;
        p.candidate_id = jp.at("candidate_id").get<std::string>();
        p.fused_score = jp.at("fused_score").get<double>();
        for (const auto& js : jp.at("scales")) {
          ScaleScore s;
          s.patch_size = js.at("patch_size").get<std::size_t>();
          s.num_patches = js.at("num_patches").get<std::size_t>();
          s.num_matches = js.at("num_matches").get<std::size_t>();
          s.score = js.at("score").get<double>();
          p.scales.push_back(std::move(s));
        }
        r.pairs.push_back(std::move(p));
      }
      r.dropped = jr.value("dropped", std::vector<std::string>{});
      out.push_back(std::move(r));
    }
    return out;
  });
}

void save_results(std::span<const RetrievalResult> results, const fs::path& path) {
  write_text_file(path, results_to_json(results));
}

std::vector<RetrievalResult> load_results(const fs::path& path) {
  return results_from_json(read_text_file(path));
}

std::string report_to_json(const EvalReport& report) {
  json recall = json::object();
  for (const auto& [n, pct] : report.recall_at) recall[std::to_string(n)] = pct;
  json buckets = json::array();
  for (const auto& b : report.pose_buckets) {
    buckets.push_back({{"meters", b.meters}, {"degrees", b.degrees}, {"percent", b.percent}});
  }
  json verdicts = json::array();
  for (const auto& v : report.verdicts) {
    json jv{{"query_id", v.query_id}, {"evaluated", v.evaluated}};
    jv["first_hit_rank"] = v.first_hit_rank ? json(*v.first_hit_rank) : json(nullptr);
    if (v.translation_error) jv["translation_error"] = *v.translation_error;
    if (v.rotation_error_deg) jv["rotation_error_deg"] = *v.rotation_error_deg;
    verdicts.push_back(std::move(jv));
  }
  json doc{{"schema_version", kSchemaVersion},
           {"num_queries", report.num_queries},
           {"num_evaluated", report.num_evaluated},
           {"num_excluded", report.num_excluded},
           {"recall_at", recall},
           {"pose_buckets", buckets},
           {"verdicts", verdicts}};
  return doc.dump(2) + "\n";
}

std::string report_to_text(const EvalReport& report) {
  std::ostringstream os;
  os << "queries " << report.num_queries << " evaluated " << report.num_evaluated << " excluded "
     << report.num_excluded << "\n";
  for (const auto& [n, pct] : report.recall_at) {
    os << "Recall@" << n << " " << fixed(pct, 1) << "\n";
  }
  for (const auto& b : report.pose_buckets) {
    os << "Pose(" << fixed(b.meters, 2) << "m," << fixed(b.degrees, 1) << "deg) "
       << fixed(b.percent, 1) << "\n";
  }
  return os.str();
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "N,recall_percent\n";
  for (const auto& [n, pct] : report.recall_at) os << n << "," << fixed(pct, 4) << "\n";
  if (!report.pose_buckets.empty()) {
    os << "meters,degrees,percent\n";
    for (const auto& b : report.pose_buckets) {
      os << fixed(b.meters, 4) << "," << fixed(b.degrees, 4) << "," << fixed(b.percent, 4) << "\n";
    }
  }
  return os.str();
}

std::string pair_to_json(const ScoredPair& pair, const DescriptorSets* query,
                         const DescriptorSets* candidate) {
  json scales = json::array();
  for (std::size_t s = 0; s < pair.scales.size(); ++s) {
    const auto& sc = pair.scales[s];
    json js = scale_to_json(sc);
    if (query && candidate && s < query->size() && s < candidate->size()) {
      const auto& qg = (*query)[s].grid;
      const auto& cg = (*candidate)[s].grid;
      json corr = json::array();
      for (const auto& m : sc.matches) {
        const bool inlier = std::any_of(sc.inliers.begin(), sc.inliers.end(), [&](const Match& i) {
          return i.ref == m.ref && i.query == m.query;
        });
        const auto& a = qg.centers.at(m.query);
        const auto& b = cg.centers.at(m.ref);
        corr.push_back({{"a_index", m.query}, {"b_index", m.ref},
                        {"a_center", {a.x, a.y}}, {"b_center", {b.x, b.y}},
                        {"distance", m.distance}, {"inlier", inlier}});
      }
      js["correspondences"] = corr;
    }
    scales.push_back(std::move(js));
  }
  json doc{{"a", pair.query_id},
           {"b", pair.candidate_id},
           {"scales", scales},
           {"fused_score", pair.fused_score}};
  return doc.dump(2) + "\n";
}

std::string read_text_file(const fs::path& path) {
  const auto bytes = read_binary(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const fs::path& path, std::string_view text) {
  write_binary(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace patchvlad
