#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stylemap/error.hpp"

namespace stylemap {

/// Grid dimensions. Voxels are stored x-fastest, then y, then z.
struct Shape {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * ny + y) * nx + x;
  }
  bool positive() const { return nx > 0 && ny > 0 && nz > 0; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Pipeline identity, e.g. {1, "fsl-1"}.
struct DomainLabel {
  int index = -1;
  std::string name;
  friend bool operator==(const DomainLabel&, const DomainLabel&) = default;
};

/// In-mask extrema recorded before min-max normalization.
struct NormParams {
  double vmin = -1.0;
  double vmax = 1.0;
  friend bool operator==(const NormParams&, const NormParams&) = default;
};

struct StatMap {
  Shape shape;
  std::vector<float> voxels;
  DomainLabel domain;
  std::string group_id;
  std::string task_id;
  bool normalized = false;
  std::optional<NormParams> norm_params;

  StatMap() = default;
  explicit StatMap(Shape s, float fill = 0.0f) : shape(s), voxels(s.voxels(), fill) {}

  float& at(int x, int y, int z) { return voxels[shape.index(x, y, z)]; }
  float at(int x, int y, int z) const { return voxels[shape.index(x, y, z)]; }
};

struct Mask {
  Shape shape;
  std::vector<std::uint8_t> voxels;

  Mask() = default;
  explicit Mask(Shape s, bool fill = true) : shape(s), voxels(s.voxels(), fill ? 1 : 0) {}

  std::size_t count() const;
  bool operator()(std::size_t i) const { return voxels[i] != 0; }
};

struct DatasetSplit {
  std::vector<std::string> train_groups;
  std::vector<std::string> test_groups;
  std::uint64_t seed = 0;
};

/// Throws ShapeMismatch/InvalidShape when the StatMap invariants do not hold.
void validate(const StatMap& map);
void validate(const Mask& mask);

/// Intersection of per-map masks; a voxel survives if it is nonzero and finite in
/// every map.
Mask intersection_mask(std::span<const StatMap> maps);

/// Zeroes every voxel outside the mask.
StatMap apply_mask(StatMap map, const Mask& mask);

/// Affine map of in-mask voxels onto [-1, 1]; out-of-mask voxels become 0.
std::pair<StatMap, NormParams> minmax_normalize(const StatMap& map, const Mask& mask);

/// Inverse of minmax_normalize for every voxel.
StatMap denormalize(const StatMap& map, const NormParams& params);

/// Trilinear resampling with aligned corners over the unit cube.
StatMap resample(const StatMap& map, const Shape& target);
Mask resample(const Mask& mask, const Shape& target);

/// Seeded, group-level split; the first floor(n * train_fraction) shuffled
/// groups become the training set.
DatasetSplit split_groups(std::span<const std::string> group_ids, double train_fraction,
                          std::uint64_t seed);

// Canonical on-disk format: `<stem>.json` header plus `<stem>.bin` with
// little-endian float32 voxels (x-fastest). Paths passed here are the header
// path; the payload path is derived by swapping the extension.
std::filesystem::path payload_path(const std::filesystem::path& header_path);
void write_volume(const StatMap& map, const std::filesystem::path& header_path);
StatMap read_volume(const std::filesystem::path& header_path);

void write_mask(const Mask& mask, const std::filesystem::path& header_path);
Mask read_mask(const std::filesystem::path& header_path);

/// Single-file NIfTI-1 (.nii or .nii.gz) reader; first 3D volume only, with
/// scl_slope/scl_inter applied.
StatMap import_nifti(const std::filesystem::path& path, const DomainLabel& domain,
                     const std::string& group_id, const std::string& task_id);

}  // namespace stylemap
