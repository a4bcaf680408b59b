#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "json.hpp"

namespace stylemap {

/// Noise predictor: a 3D U-Net with two downsampling and two upsampling blocks,
/// skip connections, and a per-block injection of (timestep embedding +
/// condition embedding).
struct UNetArch {
  std::int64_t base_channels = 16;
  std::int64_t cond_dim = 4;
  std::int64_t max_timestep = 500;

  std::int64_t emb_dim() const { return 4 * base_channels; }
  nlohmann::json to_json() const;
  static UNetArch from_json(const nlohmann::json& j);
};

class ResBlock3dImpl : public torch::nn::Module {
 public:
  ResBlock3dImpl(std::int64_t in, std::int64_t out, std::int64_t emb_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear emb_proj_{nullptr};
  torch::nn::Conv3d skip_{nullptr};
};
TORCH_MODULE(ResBlock3d);

class UNet3dImpl : public torch::nn::Module {
 public:
  explicit UNet3dImpl(const UNetArch& arch);

  /// x [B,1,nz,ny,nx]; t [B] int64 in [1, T]; cond [B, cond_dim]; null_mask
  /// [B] bool selecting the learned null condition embedding.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& cond,
                        const torch::Tensor& null_mask);

  const UNetArch& arch() const { return arch_; }

 private:
  torch::Tensor embed(const torch::Tensor& t, const torch::Tensor& cond, const torch::Tensor& null_mask);

  UNetArch arch_;
  torch::nn::Linear time_fc1_{nullptr}, time_fc2_{nullptr}, cond_fc_{nullptr};
  torch::Tensor null_embedding_;
  torch::nn::Conv3d conv_in_{nullptr};
  ResBlock3d down1_{nullptr}, down2_{nullptr}, mid_{nullptr}, up2_{nullptr}, up1_{nullptr};
  torch::nn::Conv3d pool1_{nullptr}, pool2_{nullptr};
  torch::nn::Conv3d upconv2_{nullptr}, upconv1_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv3d conv_out_{nullptr};
};
TORCH_MODULE(UNet3d);

/// Sinusoidal embedding of integer timesteps, [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim);

}  // namespace stylemap
