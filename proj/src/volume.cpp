#include "stylemap/volume.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>

#include "json.hpp"

namespace stylemap {

namespace {

constexpr int kSchemaVersion = 1;

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": " + to_string(a) + " vs " + to_string(b));
  }
}

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

void write_f32le(const std::filesystem::path& path, std::span<const float> values) {
  std::vector<std::uint32_t> raw(values.size());
  std::memcpy(raw.data(), values.data(), values.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : raw) v = byteswap32(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::vector<float> read_f32le(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != count * sizeof(float)) {
    throw Error(ErrorCode::FormatError, path.string() + ": payload has " + std::to_string(size) +
                                            " bytes, expected " +
                                            std::to_string(count * sizeof(float)));
  }
  in.seekg(0);
  std::vector<std::uint32_t> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorCode::IoFailure, "read failed: " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : raw) v = byteswap32(v);
  }
  std::vector<float> out(count);
  std::memcpy(out.data(), raw.data(), size);
  return out;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
}

Shape shape_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::FormatError, "shape must be [nx,ny,nz]");
  Shape s{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
  if (!s.positive()) throw Error(ErrorCode::InvalidShape, "non-positive shape " + to_string(s));
  return s;
}

}  // namespace

std::string to_string(const Shape& s) {
  return std::to_string(s.nx) + "x" + std::to_string(s.ny) + "x" + std::to_string(s.nz);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(voxels.begin(), voxels.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

void validate(const StatMap& map) {
  if (!map.shape.positive()) throw Error(ErrorCode::InvalidShape, to_string(map.shape));
  if (map.voxels.size() != map.shape.voxels()) {
    throw Error(ErrorCode::ShapeMismatch, "voxel count " + std::to_string(map.voxels.size()) +
                                              " does not match shape " + to_string(map.shape));
  }
}

void validate(const Mask& mask) {
  if (!mask.shape.positive()) throw Error(ErrorCode::InvalidShape, to_string(mask.shape));
  if (mask.voxels.size() != mask.shape.voxels()) {
    throw Error(ErrorCode::ShapeMismatch, "mask voxel count does not match shape");
  }
  if (mask.count() == 0) throw Error(ErrorCode::EmptyInput, "mask has no true voxel");
}

Mask intersection_mask(std::span<const StatMap> maps) {
  if (maps.empty()) throw Error(ErrorCode::EmptyInput, "no maps to intersect");
  Mask mask(maps.front().shape, true);
  for (const auto& m : maps) {
    validate(m);
    require_same_shape(m.shape, mask.shape, "intersection_mask");
    for (std::size_t i = 0; i < m.voxels.size(); ++i) {
      if (m.voxels[i] == 0.0f || !std::isfinite(m.voxels[i])) mask.voxels[i] = 0;
    }
  }
  return mask;
}

StatMap apply_mask(StatMap map, const Mask& mask) {
  require_same_shape(map.shape, mask.shape, "apply_mask");
  for (std::size_t i = 0; i < map.voxels.size(); ++i) {
    if (!mask(i)) map.voxels[i] = 0.0f;
  }
  return map;
}

std::pair<StatMap, NormParams> minmax_normalize(const StatMap& map, const Mask& mask) {
  validate(map);
  require_same_shape(map.shape, mask.shape, "minmax_normalize");
  if (map.normalized) throw Error(ErrorCode::AlreadyNormalized, "map " + map.group_id);
  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < map.voxels.size(); ++i) {
    if (!mask(i)) continue;
    vmin = std::min(vmin, static_cast<double>(map.voxels[i]));
    vmax = std::max(vmax, static_cast<double>(map.voxels[i]));
  }
  if (!(vmax - vmin >= 1e-12)) {
    throw Error(ErrorCode::ConstantVolume, "in-mask range below 1e-12 for group '" +
                                               map.group_id + "'");
  }
  StatMap out = map;
  const double scale = 2.0 / (vmax - vmin);
  for (std::size_t i = 0; i < out.voxels.size(); ++i) {
    out.voxels[i] = mask(i) ? static_cast<float>(scale * (map.voxels[i] - vmin) - 1.0) : 0.0f;
  }
  NormParams params{vmin, vmax};
  out.normalized = true;
  out.norm_params = params;
  return {std::move(out), params};
}

StatMap denormalize(const StatMap& map, const NormParams& params) {
  validate(map);
  if (!map.normalized) throw Error(ErrorCode::NotNormalized, "map " + map.group_id);
  if (!(params.vmax > params.vmin)) throw Error(ErrorCode::InvalidRange, "vmax must exceed vmin");
  StatMap out = map;
  const double half = 0.5 * (params.vmax - params.vmin);
  for (auto& v : out.voxels) v = static_cast<float>((v + 1.0) * half + params.vmin);
  out.normalized = false;
  out.norm_params.reset();
  return out;
}

namespace {

struct AxisWeights {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};

AxisWeights axis_weights(int n_in, int n_out) {
  AxisWeights w;
  w.lo.resize(n_out);
  w.hi.resize(n_out);
  w.frac.resize(n_out);
  for (int i = 0; i < n_out; ++i) {
    const double u = n_out == 1 ? 0.0 : static_cast<double>(i) / (n_out - 1);
    const double pos = std::clamp(u * (n_in - 1), 0.0, static_cast<double>(n_in - 1));
    const int lo = std::min(static_cast<int>(std::floor(pos)), n_in - 1);
    w.lo[i] = lo;
    w.hi[i] = std::min(lo + 1, n_in - 1);
    w.frac[i] = pos - lo;
  }
  return w;
}

std::vector<double> trilinear(std::span<const float> src, const Shape& from, const Shape& to) {
  const auto wx = axis_weights(from.nx, to.nx);
  const auto wy = axis_weights(from.ny, to.ny);
  const auto wz = axis_weights(from.nz, to.nz);
  std::vector<double> out(to.voxels());
  for (int z = 0; z < to.nz; ++z) {
    for (int y = 0; y < to.ny; ++y) {
      for (int x = 0; x < to.nx; ++x) {
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz) {
          const int sz = dz ? wz.hi[z] : wz.lo[z];
          const double fz = dz ? wz.frac[z] : 1.0 - wz.frac[z];
          if (fz == 0.0) continue;
          for (int dy = 0; dy < 2; ++dy) {
            const int sy = dy ? wy.hi[y] : wy.lo[y];
            const double fy = dy ? wy.frac[y] : 1.0 - wy.frac[y];
            if (fy == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const int sx = dx ? wx.hi[x] : wx.lo[x];
              const double fx = dx ? wx.frac[x] : 1.0 - wx.frac[x];
              if (fx == 0.0) continue;
              acc += fx * fy * fz * src[from.index(sx, sy, sz)];
            }
          }
        }
        out[to.index(x, y, z)] = acc;
      }
    }
  }
  return out;
}

void require_resample_shape(const Shape& s, const char* which) {
  if (s.nx < 2 || s.ny < 2 || s.nz < 2) {
    throw Error(ErrorCode::InvalidShape,
                std::string(which) + " shape " + to_string(s) + " needs every dimension >= 2");
  }
}

}  // namespace

StatMap resample(const StatMap& map, const Shape& target) {
  validate(map);
  require_resample_shape(map.shape, "source");
  require_resample_shape(target, "target");
  if (map.shape == target) return map;
  const auto values = trilinear(map.voxels, map.shape, target);
  StatMap out = map;
  out.shape = target;
  out.voxels.assign(values.begin(), values.end());
  return out;
}

Mask resample(const Mask& mask, const Shape& target) {
  validate(mask);
  require_resample_shape(mask.shape, "source");
  require_resample_shape(target, "target");
  std::vector<float> src(mask.voxels.begin(), mask.voxels.end());
  const auto values = trilinear(src, mask.shape, target);
  Mask out(target, false);
  for (std::size_t i = 0; i < values.size(); ++i) out.voxels[i] = values[i] >= 0.5 ? 1 : 0;
  return out;
}

DatasetSplit split_groups(std::span<const std::string> group_ids, double train_fraction,
                          std::uint64_t seed) {
  if (group_ids.empty()) throw Error(ErrorCode::EmptyInput, "no groups to split");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidRange, "train_fraction must lie in (0, 1)");
  }
  std::unordered_set<std::string> seen;
  for (const auto& g : group_ids) {
    if (!seen.insert(g).second) throw Error(ErrorCode::DuplicateGroup, g);
  }
  std::vector<std::string> order(group_ids.begin(), group_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(order.size()) * train_fraction + 1e-9));
  DatasetSplit split;
  split.seed = seed;
  split.train_groups.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_groups.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return split;
}

std::filesystem::path payload_path(const std::filesystem::path& header_path) {
  auto p = header_path;
  p.replace_extension(".bin");
  return p;
}

void write_volume(const StatMap& map, const std::filesystem::path& header_path) {
  validate(map);
  if (header_path.extension() != ".json") {
    throw Error(ErrorCode::IoFailure, "volume header must end in .json: " + header_path.string());
  }
  nlohmann::json h;
  h["schema_version"] = kSchemaVersion;
  h["shape"] = {map.shape.nx, map.shape.ny, map.shape.nz};
  h["dtype"] = "f32le";
  h["domain"] = {{"index", map.domain.index}, {"name", map.domain.name}};
  h["group_id"] = map.group_id;
  h["task_id"] = map.task_id;
  h["normalized"] = map.normalized;
  if (map.norm_params) {
    h["norm_params"] = {{"vmin", map.norm_params->vmin}, {"vmax", map.norm_params->vmax}};
  } else {
    h["norm_params"] = nullptr;
  }
  write_text_file(header_path, h.dump(2) + "\n");
  write_f32le(payload_path(header_path), map.voxels);
}

StatMap read_volume(const std::filesystem::path& header_path) {
  const auto h = read_json(header_path);
  try {
    if (h.at("schema_version").get<int>() != kSchemaVersion) {
      throw Error(ErrorCode::FormatError, "unsupported schema_version in " + header_path.string());
    }
    if (h.at("dtype").get<std::string>() != "f32le") {
      throw Error(ErrorCode::FormatError, "unsupported dtype in " + header_path.string());
    }
    StatMap map;
    map.shape = shape_from_json(h.at("shape"));
    map.domain.index = h.at("domain").at("index").get<int>();
    map.domain.name = h.at("domain").at("name").get<std::string>();
    map.group_id = h.at("group_id").get<std::string>();
    map.task_id = h.at("task_id").get<std::string>();
    map.normalized = h.at("normalized").get<bool>();
    if (!h.at("norm_params").is_null()) {
      map.norm_params = NormParams{h["norm_params"].at("vmin").get<double>(),
                                   h["norm_params"].at("vmax").get<double>()};
    }
    map.voxels = read_f32le(payload_path(header_path), map.shape.voxels());
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, header_path.string() + ": " + e.what());
  }
}

void write_mask(const Mask& mask, const std::filesystem::path& header_path) {
  validate(mask);
  StatMap m(mask.shape);
  for (std::size_t i = 0; i < mask.voxels.size(); ++i) m.voxels[i] = mask(i) ? 1.0f : 0.0f;
  m.domain = {-1, "mask"};
  m.group_id = "mask";
  write_volume(m, header_path);
}

Mask read_mask(const std::filesystem::path& header_path) {
  const auto m = read_volume(header_path);
  Mask mask(m.shape, false);
  for (std::size_t i = 0; i < m.voxels.size(); ++i) mask.voxels[i] = m.voxels[i] > 0.5f ? 1 : 0;
  validate(mask);
  return mask;
}

// --- NIfTI-1 import -------------------------------------------------------

namespace {

struct GzFile {
  gzFile handle = nullptr;
  explicit GzFile(const std::filesystem::path& p) : handle(gzopen(p.c_str(), "rb")) {}
  ~GzFile() {
    if (handle) gzclose(handle);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  std::vector<unsigned char> read_all() {
    std::vector<unsigned char> data;
    unsigned char buf[1 << 16];
    int n = 0;
    while ((n = gzread(handle, buf, sizeof(buf))) > 0) data.insert(data.end(), buf, buf + n);
    if (n < 0) throw Error(ErrorCode::IoFailure, "gzip stream error");
    return data;
  }
};

template <typename T>
T load(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

}  // namespace

StatMap import_nifti(const std::filesystem::path& path, const DomainLabel& domain,
                     const std::string& group_id, const std::string& task_id) {
  GzFile file(path);
  if (!file.handle) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  const auto data = file.read_all();
  if (data.size() < 352) throw Error(ErrorCode::FormatError, path.string() + ": truncated header");

  bool swap = false;
  if (load<std::int32_t>(data.data(), false) != 348) {
    if (load<std::int32_t>(data.data(), true) != 348) {
      throw Error(ErrorCode::FormatError, path.string() + ": not a NIfTI-1 file");
    }
    swap = true;
  }
  const char* magic = reinterpret_cast<const char*>(data.data() + 344);
  if (std::strncmp(magic, "n+1", 3) != 0) {
    throw Error(ErrorCode::FormatError, path.string() + ": only single-file NIfTI-1 is supported");
  }
  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(data.data() + 40 + 2 * i, swap);
  if (dim[0] < 3) throw Error(ErrorCode::FormatError, path.string() + ": fewer than 3 dimensions");
  const auto datatype = load<std::int16_t>(data.data() + 70, swap);
  const auto vox_offset = static_cast<std::size_t>(load<float>(data.data() + 108, swap));
  float slope = load<float>(data.data() + 112, swap);
  const float inter = load<float>(data.data() + 116, swap);
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;

  StatMap map(Shape{dim[1], dim[2], dim[3]});
  validate(map);
  std::size_t bytes_per = 0;
  switch (datatype) {
    case 2: bytes_per = 1; break;    // uint8
    case 4: bytes_per = 2; break;    // int16
    case 8: bytes_per = 4; break;    // int32
    case 16: bytes_per = 4; break;   // float32
    case 64: bytes_per = 8; break;   // float64
    case 256: bytes_per = 1; break;  // int8
    case 512: bytes_per = 2; break;  // uint16
    default:
      throw Error(ErrorCode::FormatError,
                  path.string() + ": unsupported datatype " + std::to_string(datatype));
  }
  const std::size_t n = map.shape.voxels();
  if (data.size() < vox_offset + n * bytes_per) {
    throw Error(ErrorCode::FormatError, path.string() + ": truncated voxel data");
  }
  const unsigned char* p = data.data() + vox_offset;
  for (std::size_t i = 0; i < n; ++i, p += bytes_per) {
    double v = 0.0;
    switch (datatype) {
      case 2: v = *p; break;
      case 4: v = load<std::int16_t>(p, swap); break;
      case 8: v = load<std::int32_t>(p, swap); break;
      case 16: v = load<float>(p, swap); break;
      case 64: v = load<double>(p, swap); break;
      case 256: v = static_cast<std::int8_t>(*p); break;
      case 512: v = load<std::uint16_t>(p, swap); break;
      default: break;
    }
    const double scaled = v * slope + inter;
    map.voxels[i] = std::isfinite(scaled) ? static_cast<float>(scaled) : 0.0f;
  }
  map.domain = domain;
  map.group_id = group_id;
  map.task_id = task_id;
  return map;
}

}  // namespace stylemap
