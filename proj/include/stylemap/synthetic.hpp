#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylemap/dataset.hpp"
#include "stylemap/volume.hpp"

namespace stylemap {

/// Rendering parameters of one synthetic pipeline. (0, 1, 0, 0) is the identity.
struct StyleParams {
  double smoothing_sigma = 0.0;  // voxels
  double gamma = 1.0;            // signed-power exponent
  double bias_amplitude = 0.0;   // strength of the low-frequency multiplicative field
  double noise_sigma = 0.0;      // additive Gaussian noise
  std::array<double, 3> bias_direction{1.0, 0.0, 0.0};
  double bias_phase = 0.0;
  DomainLabel domain;
};

struct Blob {
  std::array<double, 3> center{};  // voxel coordinates (x, y, z)
  double amplitude = 1.0;
  double radius = 1.0;
};

struct ContentField {
  std::vector<Blob> blobs;
  std::string group_id;
};

struct SyntheticConfig {
  int n_groups = 200;
  Shape shape{24, 28, 24};
  int K = 4;
  int n_blobs = 8;
  std::uint64_t style_seed = 1;
  std::uint64_t content_seed = 1;
  std::string task_id = "task-a";
};

nlohmann::json to_json(const SyntheticConfig& c);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StyleParams& s);

/// K pipeline styles laid out on a software x HRF-derivative grid in Gray-code
/// order, so neighbouring styles differ along one axis. Style 0 is the
/// near-identity "fsl-0".
std::vector<StyleParams> make_pipeline_styles(int K, std::uint64_t seed);

/// Shared task template plus group-specific jitter; deterministic in
/// (content_seed, group_id).
ContentField make_content(const SyntheticConfig& config, const std::string& group_id);

StatMap sum_of_blobs(const ContentField& content, const Shape& shape);
StatMap gaussian_smooth(const StatMap& map, double sigma);

/// bias(style) * signed_power(smooth(blobs), gamma) + noise. Unmasked and
/// unnormalized.
StatMap render_group(const ContentField& content, const StyleParams& style, const Shape& shape,
                     std::uint64_t noise_seed);

/// Ellipsoidal "brain" mask shared by every synthetic group.
Mask synthetic_mask(const Shape& shape);

/// Group ids g0000, g0001, ...
std::string synthetic_group_id(int index);

/// The full dataset in memory (masked and normalized), identical to what
/// generate_dataset writes.
Dataset make_synthetic_dataset(const SyntheticConfig& config);

/// Writes n_groups x K canonical volumes, mask.json and manifest.json under
/// `out_dir`; returns the manifest path.
std::filesystem::path generate_dataset(const SyntheticConfig& config,
                                       const std::filesystem::path& out_dir);

}  // namespace stylemap
