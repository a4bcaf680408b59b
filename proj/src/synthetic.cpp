#include "stylemap/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "stylemap/rng.hpp"

namespace stylemap {

namespace {

// Calibrated so that, at 24x28x24, fsl-1 -> fsl-0 sits near r = 0.93 and
// fsl-1 -> spm-0 near r = 0.73 (see the synthetic calibration test).
constexpr double kDerivativeSmoothing = 2.6;
constexpr double kNoiseSigma = 0.05;
constexpr double kSecondSoftwareGamma = 2.6;
constexpr double kSecondSoftwareBias = 0.6;

constexpr int kGroupBlobs = 3;

const char* software_name(int s) {
  static const char* names[] = {"fsl", "spm", "afni"};
  return s < 3 ? names[s] : nullptr;
}

double length_scale(const Shape& shape) {
  return std::min({shape.nx, shape.ny, shape.nz}) / 24.0;
}

std::array<double, 3> inner_point(std::mt19937_64& rng, const Shape& shape, double extent) {
  // Uniform inside an ellipsoid of semi-axes extent * n/2 around the centre.
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::array<double, 3> p{};
  while (true) {
    const double a = u(rng), b = u(rng), c = u(rng);
    if (a * a + b * b + c * c > 1.0) continue;
    p = {(shape.nx - 1) / 2.0 + a * extent * shape.nx / 2.0,
         (shape.ny - 1) / 2.0 + b * extent * shape.ny / 2.0,
         (shape.nz - 1) / 2.0 + c * extent * shape.nz / 2.0};
    return p;
  }
}

std::array<double, 3> clamp_inside(std::array<double, 3> p, const Shape& shape) {
  p[0] = std::clamp(p[0], 0.0, shape.nx - 1.0);
  p[1] = std::clamp(p[1], 0.0, shape.ny - 1.0);
  p[2] = std::clamp(p[2], 0.0, shape.nz - 1.0);
  return p;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  return k;
}

}  // namespace

nlohmann::json to_json(const SyntheticConfig& c) {
  return {{"n_groups", c.n_groups},
          {"shape", {c.shape.nx, c.shape.ny, c.shape.nz}},
          {"K", c.K},
          {"n_blobs", c.n_blobs},
          {"style_seed", c.style_seed},
          {"content_seed", c.content_seed},
          {"task_id", c.task_id}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  try {
    c.n_groups = j.value("n_groups", c.n_groups);
    if (j.contains("shape")) {
      const auto s = j.at("shape").get<std::vector<int>>();
      if (s.size() != 3) throw Error(ErrorCode::ConfigInvalid, "synthetic.shape must have 3 entries");
      c.shape = {s[0], s[1], s[2]};
    }
    c.K = j.value("K", c.K);
    c.n_blobs = j.value("n_blobs", c.n_blobs);
    c.style_seed = j.value("style_seed", c.style_seed);
    c.content_seed = j.value("content_seed", c.content_seed);
    c.task_id = j.value("task_id", c.task_id);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("synthetic config: ") + e.what());
  }
  if (c.n_groups < 2) throw Error(ErrorCode::ConfigInvalid, "synthetic.n_groups must be >= 2");
  if (c.K < 2) throw Error(ErrorCode::InvalidK, "synthetic.K must be >= 2");
  if (!c.shape.positive()) throw Error(ErrorCode::InvalidShape, "synthetic.shape");
  if (c.n_blobs < 1) throw Error(ErrorCode::ConfigInvalid, "synthetic.n_blobs must be >= 1");
  return c;
}

nlohmann::json to_json(const StyleParams& s) {
  return {{"domain", s.domain.name},
          {"index", s.domain.index},
          {"smoothing_sigma", s.smoothing_sigma},
          {"gamma", s.gamma},
          {"bias_amplitude", s.bias_amplitude},
          {"noise_sigma", s.noise_sigma},
          {"bias_direction", s.bias_direction},
          {"bias_phase", s.bias_phase}};
}

std::vector<StyleParams> make_pipeline_styles(int K, std::uint64_t seed) {
  if (K < 2) throw Error(ErrorCode::InvalidK, "need at least 2 pipeline styles, got " + std::to_string(K));
  std::vector<StyleParams> styles;
  styles.reserve(K);
  for (int i = 0; i < K; ++i) {
    const int software = i / 2;
    const int derivatives = (i % 2) ^ (software % 2);
    std::mt19937_64 rng(derive_seed(seed, "software-" + std::to_string(software)));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;

    StyleParams s;
    s.noise_sigma = kNoiseSigma;
    s.smoothing_sigma = derivatives ? kDerivativeSmoothing : 0.0;
    if (software == 1) {
      s.gamma = kSecondSoftwareGamma;
      s.bias_amplitude = kSecondSoftwareBias;
    } else if (software >= 2) {
      s.gamma = 0.6 + 1.2 * unit(rng);
      s.bias_amplitude = 0.2 + 0.2 * unit(rng);
    }
    if (software >= 1) {
      std::array<double, 3> d{normal(rng), normal(rng), normal(rng)};
      const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      for (auto& v : d) v /= n;
      s.bias_direction = d;
      s.bias_phase = 2.0 * std::numbers::pi * unit(rng);
    }
    const char* sw = software_name(software);
    s.domain = {i, (sw ? std::string(sw) : "sw" + std::to_string(software)) + "-" +
                       std::to_string(derivatives)};
    styles.push_back(s);
  }
  return styles;
}

ContentField make_content(const SyntheticConfig& config, const std::string& group_id) {
  const Shape& shape = config.shape;
  const double scale = length_scale(shape);

  std::mt19937_64 task_rng(derive_seed(config.content_seed, "task-template"));
  std::uniform_real_distribution<double> unit;
  std::vector<Blob> templ;
  for (int b = 0; b < config.n_blobs; ++b) {
    Blob blob;
    blob.center = inner_point(task_rng, shape, 0.6);
    const bool negative = unit(task_rng) < 0.25;
    blob.amplitude = negative ? -(0.3 + 0.3 * unit(task_rng)) : 0.5 + 0.5 * unit(task_rng);
    blob.radius = (1.5 + 2.0 * unit(task_rng)) * scale;
    templ.push_back(blob);
  }

  std::mt19937_64 rng(derive_seed(config.content_seed, group_id));
  std::normal_distribution<double> jitter(0.0, 1.5 * scale);
  ContentField content;
  content.group_id = group_id;
  for (const auto& t : templ) {
    Blob blob = t;
    blob.center = clamp_inside({t.center[0] + jitter(rng), t.center[1] + jitter(rng),
                                t.center[2] + jitter(rng)},
                               shape);
    blob.amplitude *= 0.6 + 0.8 * unit(rng);
    blob.radius *= 0.85 + 0.3 * unit(rng);
    content.blobs.push_back(blob);
  }
  for (int b = 0; b < kGroupBlobs; ++b) {
    Blob blob;
    blob.center = inner_point(rng, shape, 0.7);
    const double sign = unit(rng) < 0.3 ? -1.0 : 1.0;
    blob.amplitude = sign * (0.3 + 0.5 * unit(rng));
    blob.radius = (1.5 + 1.5 * unit(rng)) * scale;
    content.blobs.push_back(blob);
  }
  return content;
}

StatMap sum_of_blobs(const ContentField& content, const Shape& shape) {
  StatMap map(shape);
  for (const auto& b : content.blobs) {
    if (!(b.radius > 0.0)) throw Error(ErrorCode::InvalidRange, "blob radius must be positive");
    for (int i = 0; i < 3; ++i) {
      const int n = i == 0 ? shape.nx : (i == 1 ? shape.ny : shape.nz);
      if (b.center[i] < 0.0 || b.center[i] > n - 1.0) {
        throw Error(ErrorCode::InvalidShape, "blob centre outside the volume " + to_string(shape));
      }
    }
  }
  for (int z = 0; z < shape.nz; ++z) {
    for (int y = 0; y < shape.ny; ++y) {
      for (int x = 0; x < shape.nx; ++x) {
        double v = 0.0;
        for (const auto& b : content.blobs) {
          const double dx = x - b.center[0], dy = y - b.center[1], dz = z - b.center[2];
          v += b.amplitude * std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * b.radius * b.radius));
        }
        map.at(x, y, z) = static_cast<float>(v);
      }
    }
  }
  map.group_id = content.group_id;
  return map;
}

StatMap gaussian_smooth(const StatMap& map, double sigma) {
  validate(map);
  if (sigma <= 0.0) return map;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const Shape s = map.shape;
  std::vector<double> a(map.voxels.begin(), map.voxels.end());
  std::vector<double> b(a.size());
  auto pass = [&](int axis) {
    for (int z = 0; z < s.nz; ++z) {
      for (int y = 0; y < s.ny; ++y) {
        for (int x = 0; x < s.nx; ++x) {
          double acc = 0.0;
          for (int o = -r; o <= r; ++o) {
            int xx = x, yy = y, zz = z;
            (axis == 0 ? xx : axis == 1 ? yy : zz) += o;
            if (xx < 0 || yy < 0 || zz < 0 || xx >= s.nx || yy >= s.ny || zz >= s.nz) continue;
            acc += k[o + r] * a[s.index(xx, yy, zz)];
          }
          b[s.index(x, y, z)] = acc;
        }
      }
    }
    std::swap(a, b);
  };
  pass(0);
  pass(1);
  pass(2);
  StatMap out = map;
  for (std::size_t i = 0; i < a.size(); ++i) out.voxels[i] = static_cast<float>(a[i]);
  return out;
}

StatMap render_group(const ContentField& content, const StyleParams& style, const Shape& shape,
                     std::uint64_t noise_seed) {
  StatMap map = gaussian_smooth(sum_of_blobs(content, shape), style.smoothing_sigma);
  const bool has_bias = style.bias_amplitude > 0.0;
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int z = 0; z < shape.nz; ++z) {
    for (int y = 0; y < shape.ny; ++y) {
      for (int x = 0; x < shape.nx; ++x) {
        double v = map.at(x, y, z);
        if (style.gamma != 1.0) v = std::copysign(std::pow(std::abs(v), style.gamma), v);
        if (has_bias) {
          const double u = x / std::max(1.0, shape.nx - 1.0), w = y / std::max(1.0, shape.ny - 1.0),
                       q = z / std::max(1.0, shape.nz - 1.0);
          const double proj = style.bias_direction[0] * u + style.bias_direction[1] * w +
                              style.bias_direction[2] * q;
          v *= 1.0 + style.bias_amplitude * std::cos(1.5 * std::numbers::pi * proj + style.bias_phase);
        }
        if (style.noise_sigma > 0.0) v += style.noise_sigma * noise(rng);
        map.at(x, y, z) = static_cast<float>(v);
      }
    }
  }
  map.domain = style.domain;
  map.group_id = content.group_id;
  return map;
}

Mask synthetic_mask(const Shape& shape) {
  Mask mask(shape, false);
  const double cx = (shape.nx - 1) / 2.0, cy = (shape.ny - 1) / 2.0, cz = (shape.nz - 1) / 2.0;
  const double ax = 0.48 * shape.nx, ay = 0.48 * shape.ny, az = 0.48 * shape.nz;
  for (int z = 0; z < shape.nz; ++z) {
    for (int y = 0; y < shape.ny; ++y) {
      for (int x = 0; x < shape.nx; ++x) {
        const double dx = (x - cx) / ax, dy = (y - cy) / ay, dz = (z - cz) / az;
        mask.voxels[shape.index(x, y, z)] = dx * dx + dy * dy + dz * dz <= 1.0 ? 1 : 0;
      }
    }
  }
  return mask;
}

std::string synthetic_group_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "g%04d", index);
  return buf;
}

Dataset make_synthetic_dataset(const SyntheticConfig& config) {
  if (config.n_groups < 2) throw Error(ErrorCode::ConfigInvalid, "n_groups must be >= 2");
  const auto styles = make_pipeline_styles(config.K, config.style_seed);
  Dataset data;
  data.mask = synthetic_mask(config.shape);
  data.task_id = config.task_id;
  for (const auto& s : styles) data.domains.push_back(s.domain);
  data.maps.reserve(static_cast<std::size_t>(config.n_groups) * config.K);
  for (int g = 0; g < config.n_groups; ++g) {
    const auto group_id = synthetic_group_id(g);
    const auto content = make_content(config, group_id);
    const auto group_seed = derive_seed(config.content_seed, group_id);
    for (const auto& style : styles) {
      auto raw = render_group(content, style, config.shape,
                              derive_seed(group_seed, "noise-" + style.domain.name));
      auto map = minmax_normalize(apply_mask(std::move(raw), data.mask), data.mask).first;
      map.task_id = config.task_id;
      data.maps.push_back(std::move(map));
    }
  }
  data.reindex();
  return data;
}

std::filesystem::path generate_dataset(const SyntheticConfig& config,
                                       const std::filesystem::path& out_dir) {
  const auto data = make_synthetic_dataset(config);
  nlohmann::json styles = nlohmann::json::array();
  for (const auto& s : make_pipeline_styles(config.K, config.style_seed)) styles.push_back(to_json(s));
  return write_dataset(data, out_dir, {{"config", to_json(config)}, {"styles", styles}});
}

}  // namespace stylemap
