#include <algorithm>

#include "stylemap/gan.hpp"
#include "stylemap/tensor_utils.hpp"

namespace stylemap {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv3d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride, std::int64_t pad,
                       bool bias = true) {
  return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

torch::nn::AnyModule norm(NormKind kind, std::int64_t ch, bool affine = false) {
  if (kind == NormKind::Batch) return torch::nn::AnyModule(torch::nn::BatchNorm3d(ch));
  return torch::nn::AnyModule(torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(ch).affine(affine)));
}

torch::Tensor resize_to(const torch::Tensor& x, torch::IntArrayRef spatial) {
  if (x.sizes().slice(2).equals(spatial)) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>(spatial.begin(), spatial.end()))
                               .mode(torch::kTrilinear)
                               .align_corners(false));
}

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(std::int64_t ch, bool affine) {
    body_ = register_module(
        "body", torch::nn::Sequential(conv(ch, ch, 3, 1, 1), norm(NormKind::Instance, ch, affine), torch::nn::ReLU(),
                                      conv(ch, ch, 3, 1, 1), norm(NormKind::Instance, ch, affine)));
  }
  torch::Tensor forward(const torch::Tensor& x) { return x + body_->forward(x); }

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

std::int64_t halved(std::int64_t n) { return (n + 2 - 4) / 2 + 1; }

void zero_init(torch::nn::Conv3d& c) {
  torch::NoGradGuard ng;
  c->weight.zero_();
  if (c->bias.defined()) c->bias.zero_();
}

torch::Tensor finish(const torch::Tensor& out, const torch::Tensor& x, bool residual) {
  if (!residual) return torch::tanh(out);
  return x.slice(1, 0, out.size(1)) + out;
}

}  // namespace

UNetGenerator3dImpl::UNetGenerator3dImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t ngf, int depth,
                                         bool residual)
    : residual_(residual) {
  if (depth < 1) throw Error(ErrorCode::ConfigInvalid, "U-Net generator depth must be >= 1");
  std::vector<std::int64_t> ch;
  for (int i = 0; i < depth; ++i) ch.push_back(ngf * std::min<std::int64_t>(1LL << i, 8));
  for (int i = 0; i < depth; ++i) {
    torch::nn::Sequential block;
    block->push_back(conv(i == 0 ? in_ch : ch[i - 1], ch[i], 3, 2, 1));
    if (i > 0) block->push_back(torch::nn::BatchNorm3d(ch[i]));
    block->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    down_.push_back(register_module("down" + std::to_string(i + 1), block));
  }
  std::int64_t in = ch[depth - 1];
  for (int i = depth - 1; i >= 1; --i) {
    torch::nn::Sequential block(conv(in, ch[i - 1], 3, 1, 1), torch::nn::BatchNorm3d(ch[i - 1]), torch::nn::ReLU());
    up_.push_back(register_module("up" + std::to_string(i + 1), block));
    in = 2 * ch[i - 1];
  }
  out_ = register_module("out", conv(in, out_ch, 3, 1, 1));
  if (residual_) zero_init(out_);
}

torch::Tensor UNetGenerator3dImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> skips;
  auto h = channels_last(x);
  for (auto& d : down_) {
    h = d->forward(h);
    skips.push_back(h);
  }
  for (std::size_t j = 0; j < up_.size(); ++j) {
    const auto& skip = skips[skips.size() - 2 - j];
    h = up_[j]->forward(resize_to(h, skip.sizes().slice(2)));
    h = torch::cat({h, skip}, 1);
  }
  return finish(out_->forward(resize_to(h, x.sizes().slice(2))), channels_last(x), residual_);
}

ResnetGenerator3dImpl::ResnetGenerator3dImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t ngf, int blocks,
                                             bool affine_norm, bool residual)
    : residual_(residual) {
  head_ = register_module("head", torch::nn::Sequential(conv(in_ch, ngf, 7, 1, 3),
                                                        norm(NormKind::Instance, ngf, affine_norm), torch::nn::ReLU()));
  down1_ = register_module("down1", torch::nn::Sequential(conv(ngf, 2 * ngf, 3, 2, 1),
                                                          norm(NormKind::Instance, 2 * ngf, affine_norm),
                                                          torch::nn::ReLU()));
  down2_ = register_module("down2", torch::nn::Sequential(conv(2 * ngf, 4 * ngf, 3, 2, 1),
                                                          norm(NormKind::Instance, 4 * ngf, affine_norm),
                                                          torch::nn::ReLU()));
  body_ = torch::nn::Sequential();
  for (int i = 0; i < blocks; ++i) body_->push_back(ResidualBlock(4 * ngf, affine_norm));
  body_ = register_module("body", body_);
  up1_ = register_module("up1", torch::nn::ConvTranspose3d(
                                    torch::nn::ConvTranspose3dOptions(4 * ngf, 2 * ngf, 3).stride(2).padding(1)));
  up1_tail_ = register_module("up1_tail", torch::nn::Sequential(norm(NormKind::Instance, 2 * ngf, affine_norm),
                                                                torch::nn::ReLU()));
  up2_ = register_module("up2", torch::nn::ConvTranspose3d(
                                    torch::nn::ConvTranspose3dOptions(2 * ngf, ngf, 3).stride(2).padding(1)));
  up2_tail_ = register_module("up2_tail", torch::nn::Sequential(norm(NormKind::Instance, ngf, affine_norm),
                                                                torch::nn::ReLU()));
  tail_ = register_module("tail", conv(ngf, out_ch, 7, 1, 3));
  if (residual_) zero_init(tail_);
}

torch::Tensor ResnetGenerator3dImpl::forward(const torch::Tensor& x) {
  const auto h0 = head_->forward(channels_last(x));
  const auto h1 = down1_->forward(h0);
  auto h = body_->forward(down2_->forward(h1));
  const auto s1 = h1.sizes().slice(2).vec();
  const auto s0 = h0.sizes().slice(2).vec();
  h = up1_tail_->forward(up1_->forward(h, at::IntArrayRef(s1)));
  h = up2_tail_->forward(up2_->forward(h, at::IntArrayRef(s0)));
  return finish(tail_->forward(h), channels_last(x), residual_);
}

PatchDiscriminator3dImpl::PatchDiscriminator3dImpl(std::int64_t in_ch, std::int64_t ndf, int layers, NormKind kind) {
  if (layers < 1) throw Error(ErrorCode::ConfigInvalid, "patch discriminator needs >= 1 layer");
  torch::nn::Sequential seq;
  seq->push_back(conv(in_ch, ndf, 4, 2, 1));
  seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  std::int64_t ch = ndf;
  for (int i = 1; i < layers; ++i) {
    const auto next = ndf * std::min<std::int64_t>(1LL << i, 8);
    seq->push_back(conv(ch, next, 4, 2, 1));
    seq->push_back(norm(kind, next));
    seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    ch = next;
  }
  const auto last = ndf * std::min<std::int64_t>(1LL << layers, 8);
  seq->push_back(conv(ch, last, 4, 1, 1));
  seq->push_back(norm(kind, last));
  seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  seq->push_back(conv(last, 1, 4, 1, 1));
  net_ = register_module("net", seq);
}

torch::Tensor PatchDiscriminator3dImpl::forward(const torch::Tensor& x) { return net_->forward(channels_last(x)); }

StarDiscriminator3dImpl::StarDiscriminator3dImpl(const Shape& input, std::int64_t ndf, int layers, int K) {
  if (layers < 1) throw Error(ErrorCode::ConfigInvalid, "StarGAN discriminator needs >= 1 layer");
  torch::nn::Sequential seq;
  std::int64_t ch = 1;
  std::int64_t nx = input.nx, ny = input.ny, nz = input.nz;
  for (int i = 0; i < layers; ++i) {
    const auto next = ndf << i;
    seq->push_back(conv(ch, next, 4, 2, 1));
    seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.01)));
    ch = next;
    nx = halved(nx);
    ny = halved(ny);
    nz = halved(nz);
  }
  if (nx < 1 || ny < 1 || nz < 1) {
    throw Error(ErrorCode::InvalidShape, "input " + to_string(input) + " too small for " + std::to_string(layers) +
                                             " discriminator layers");
  }
  trunk_ = register_module("trunk", seq);
  src_ = register_module("src", conv(ch, 1, 3, 1, 1, false));
  cls_ = register_module("cls", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch, K, {nz, ny, nx}).bias(false)));
}

StarDiscriminatorOutput StarDiscriminator3dImpl::forward(const torch::Tensor& x) {
  const auto h = trunk_->forward(channels_last(x));
  return {src_->forward(h), cls_->forward(h).flatten(1)};
}

torch::Tensor label_channels(const torch::Tensor& x, const torch::Tensor& labels, int K, const torch::Tensor& support) {
  auto onehot = F::one_hot(labels.to(torch::kLong), K).to(x.scalar_type());
  onehot = onehot.view({x.size(0), K, 1, 1, 1}).expand({x.size(0), K, x.size(2), x.size(3), x.size(4)});
  if (support.defined()) onehot = onehot * support;
  return torch::cat({x, onehot}, 1);
}

torch::Tensor support_label_channels(const torch::Tensor& x, const torch::Tensor& labels, int K) {
  return label_channels(x, labels, K, x.ne(0).to(x.scalar_type()));
}

}  // namespace stylemap
