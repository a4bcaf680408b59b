#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "stylemap/volume.hpp"

namespace stylemap {

// Tensors are laid out [B, C, nz, ny, nx] so that memory order matches the
// x-fastest canonical voxel order.

torch::Tensor to_tensor(const StatMap& map);                        // [1, nz, ny, nx]
torch::Tensor stack_maps(std::span<const StatMap* const> maps);     // [B, 1, nz, ny, nx]
torch::Tensor stack_maps(std::span<const StatMap> maps);
torch::Tensor mask_tensor(const Mask& mask);                        // [1, 1, nz, ny, nx]

/// Copies one [1, nz, ny, nx] (or [nz, ny, nx]) tensor into a StatMap that
/// takes its metadata from `like`.
StatMap from_tensor(const torch::Tensor& t, const StatMap& like);

/// Optimizer steps per epoch for n samples: ceil(n / batch), except that a
/// trailing batch of one sample is dropped (batch statistics need two).
int batches_per_epoch(std::size_t n, int batch);

torch::Generator make_generator(std::uint64_t seed);

/// Channels-last 3D layout for 5-D weights and activations; the oneDNN
/// convolution kernels are several times faster with it on CPU.
void use_channels_last(torch::nn::Module& module);
torch::Tensor channels_last(const torch::Tensor& x);

/// Writes the module's parameters and buffers; raises IoFailure on error.
void save_module(const torch::nn::Module& module, const std::filesystem::path& path);
void load_module(torch::nn::Module& module, const std::filesystem::path& path);

/// Writes `j` atomically (temp file + rename).
void write_json_atomic(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Parameter snapshot used to check that a no-op training left weights alone.
std::vector<torch::Tensor> clone_parameters(const torch::nn::Module& module);
bool parameters_equal(const torch::nn::Module& module, const std::vector<torch::Tensor>& snapshot);

}  // namespace stylemap
