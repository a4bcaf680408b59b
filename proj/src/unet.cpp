#include "stylemap/unet.hpp"

#include <cmath>

#include "stylemap/tensor_utils.hpp"

namespace stylemap {

namespace F = torch::nn::functional;

namespace {

std::int64_t groups_for(std::int64_t channels) {
  for (std::int64_t g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

torch::nn::Conv3d conv3(std::int64_t in, std::int64_t out, std::int64_t stride = 1) {
  return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor upsample_to(const torch::Tensor& x, const torch::Tensor& like) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{like.size(2), like.size(3), like.size(4)})
                               .mode(torch::kNearest));
}

}  // namespace

nlohmann::json UNetArch::to_json() const {
  return {{"type", "unet3d"},
          {"levels", 3},
          {"down_blocks", 2},
          {"up_blocks", 2},
          {"base_channels", base_channels},
          {"channels", {base_channels, 2 * base_channels, 2 * base_channels}},
          {"emb_dim", emb_dim()},
          {"cond_dim", cond_dim},
          {"max_timestep", max_timestep}};
}

UNetArch UNetArch::from_json(const nlohmann::json& j) {
  UNetArch a;
  a.base_channels = j.at("base_channels").get<std::int64_t>();
  a.cond_dim = j.at("cond_dim").get<std::int64_t>();
  a.max_timestep = j.at("max_timestep").get<std::int64_t>();
  return a;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim) {
  const std::int64_t half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / half);
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2) emb = F::pad(emb, F::PadFuncOptions({0, 1}));
  return emb;
}

ResBlock3dImpl::ResBlock3dImpl(std::int64_t in, std::int64_t out, std::int64_t emb_dim) {
  norm1_ = register_module("norm1", torch::nn::GroupNorm(groups_for(in), in));
  conv1_ = register_module("conv1", conv3(in, out));
  emb_proj_ = register_module("emb_proj", torch::nn::Linear(emb_dim, out));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(groups_for(out), out));
  conv2_ = register_module("conv2", conv3(out, out));
  if (in != out) {
    skip_ = register_module("skip", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 1)));
  }
}

torch::Tensor ResBlock3dImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
  auto h = conv1_->forward(F::silu(norm1_->forward(x)));
  h = h + emb_proj_->forward(F::silu(emb)).view({emb.size(0), -1, 1, 1, 1});
  h = conv2_->forward(F::silu(norm2_->forward(h)));
  return h + (skip_ ? skip_->forward(x) : x);
}

UNet3dImpl::UNet3dImpl(const UNetArch& arch) : arch_(arch) {
  const auto c = arch.base_channels;
  const auto e = arch.emb_dim();
  time_fc1_ = register_module("time_fc1", torch::nn::Linear(c, e));
  time_fc2_ = register_module("time_fc2", torch::nn::Linear(e, e));
  cond_fc_ = register_module("cond_fc", torch::nn::Linear(arch.cond_dim, e));
  null_embedding_ = register_parameter("null_embedding", torch::randn({e}) * 0.02);

  conv_in_ = register_module("conv_in", conv3(1, c));
  down1_ = register_module("down1", ResBlock3d(c, c, e));
  pool1_ = register_module("pool1", conv3(c, c, 2));
  down2_ = register_module("down2", ResBlock3d(c, 2 * c, e));
  pool2_ = register_module("pool2", conv3(2 * c, 2 * c, 2));
  mid_ = register_module("mid", ResBlock3d(2 * c, 2 * c, e));
  upconv2_ = register_module("upconv2", conv3(2 * c, 2 * c));
  up2_ = register_module("up2", ResBlock3d(4 * c, 2 * c, e));
  upconv1_ = register_module("upconv1", conv3(2 * c, c));
  up1_ = register_module("up1", ResBlock3d(2 * c, c, e));
  norm_out_ = register_module("norm_out", torch::nn::GroupNorm(groups_for(c), c));
  conv_out_ = register_module("conv_out", conv3(c, 1));
}

torch::Tensor UNet3dImpl::embed(const torch::Tensor& t, const torch::Tensor& cond,
                                const torch::Tensor& null_mask) {
  auto temb = time_fc2_->forward(F::silu(time_fc1_->forward(timestep_embedding(t, arch_.base_channels))));
  auto cemb = cond_fc_->forward(cond);
  auto null = null_embedding_.unsqueeze(0).expand_as(cemb);
  cemb = torch::where(null_mask.to(torch::kBool).unsqueeze(1), null, cemb);
  return temb + cemb;
}

torch::Tensor UNet3dImpl::forward(const torch::Tensor& x, const torch::Tensor& t,
                                  const torch::Tensor& cond, const torch::Tensor& null_mask) {
  const auto emb = embed(t, cond, null_mask);
  auto h0 = conv_in_->forward(channels_last(x));
  auto skip1 = down1_->forward(h0, emb);
  auto skip2 = down2_->forward(pool1_->forward(skip1), emb);
  auto h = mid_->forward(pool2_->forward(skip2), emb);
  h = upconv2_->forward(upsample_to(h, skip2));
  h = up2_->forward(torch::cat({h, skip2}, 1), emb);
  h = upconv1_->forward(upsample_to(h, skip1));
  h = up1_->forward(torch::cat({h, skip1}, 1), emb);
  return conv_out_->forward(F::silu(norm_out_->forward(h)));
}

}  // namespace stylemap
