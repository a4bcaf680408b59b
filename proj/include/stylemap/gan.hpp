#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylemap/classifier.hpp"
#include "stylemap/dataset.hpp"
#include "stylemap/volume.hpp"

namespace stylemap {

enum class GanKind { Pix2Pix, CycleGan, StarGan };
std::string to_string(GanKind kind);
GanKind gan_kind_from_string(const std::string& s);
bool is_one_to_one(GanKind kind);

/// Widths are desk-scale; the layouts follow the original 2D designs with 3D
/// layers.
struct GanArch {
  std::int64_t ngf = 8;
  std::int64_t ndf = 8;
  int unet_depth = 3;     // Pix2Pix U-Net downsamplings
  int res_blocks = 3;     // CycleGAN / StarGAN residual blocks
  int patch_layers = 2;   // stride-2 layers of the patch discriminator
  int star_d_layers = 3;  // stride-2 layers of the StarGAN discriminator
  bool residual = true;   // generators add their (zero-initialized) output to the input map

  nlohmann::json to_json() const;
  static GanArch from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------- networks

enum class NormKind { Batch, Instance };

/// Encoder-decoder with skips. Decoder stages resize to the skip grid, so odd
/// sizes round-trip.
class UNetGenerator3dImpl : public torch::nn::Module {
 public:
  UNetGenerator3dImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t ngf, int depth, bool residual = false);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Sequential> down_;
  std::vector<torch::nn::Sequential> up_;
  torch::nn::Conv3d out_{nullptr};
  bool residual_;
};
TORCH_MODULE(UNetGenerator3d);

/// c7s1 -> two stride-2 downsamplings -> residual blocks -> two transposed
/// upsamplings -> c7s1 -> tanh. With `residual` the last conv is
/// zero-initialized and added to the first input channels instead.
class ResnetGenerator3dImpl : public torch::nn::Module {
 public:
  ResnetGenerator3dImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t ngf, int blocks, bool affine_norm,
                        bool residual = false);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential head_{nullptr}, down1_{nullptr}, down2_{nullptr}, body_{nullptr};
  torch::nn::ConvTranspose3d up1_{nullptr}, up2_{nullptr};
  torch::nn::Sequential up1_tail_{nullptr}, up2_tail_{nullptr};
  torch::nn::Conv3d tail_{nullptr};
  bool residual_;
};
TORCH_MODULE(ResnetGenerator3d);

/// Patch discriminator: a 3D grid of realism logits.
class PatchDiscriminator3dImpl : public torch::nn::Module {
 public:
  PatchDiscriminator3dImpl(std::int64_t in_ch, std::int64_t ndf, int layers, NormKind norm);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(PatchDiscriminator3d);

struct StarDiscriminatorOutput {
  torch::Tensor src;  // [B, 1, ...] realism grid
  torch::Tensor cls;  // [B, K] domain logits
};

class StarDiscriminator3dImpl : public torch::nn::Module {
 public:
  StarDiscriminator3dImpl(const Shape& input, std::int64_t ndf, int layers, int K);
  StarDiscriminatorOutput forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Conv3d src_{nullptr}, cls_{nullptr};
};
TORCH_MODULE(StarDiscriminator3d);

/// Appends the target label as K broadcast one-hot channels.
torch::Tensor label_channels(const torch::Tensor& x, const torch::Tensor& labels, int K,
                             const torch::Tensor& support = {});
/// label_channels with the planes zeroed wherever x is zero.
torch::Tensor support_label_channels(const torch::Tensor& x, const torch::Tensor& labels, int K);

// ------------------------------------------------------------------ losses

using GeneratorFn = std::function<torch::Tensor(const torch::Tensor&)>;
using LabelGeneratorFn = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;
using DiscriminatorFn = std::function<torch::Tensor(const torch::Tensor&)>;
using StarDiscriminatorFn = std::function<StarDiscriminatorOutput(const torch::Tensor&)>;

/// Same-group (source, truth) pairs.
struct PairedBatch {
  torch::Tensor source;
  torch::Tensor target;
  std::vector<std::string> source_groups;
  std::vector<std::string> target_groups;
};

struct Pix2PixLosses {
  torch::Tensor adv;    // generator adversarial term
  torch::Tensor rec;    // mean absolute error to the truth
  torch::Tensor total;  // adv + lambda_rec * rec
  torch::Tensor d;      // discriminator loss
};

struct CycleGanLosses {
  torch::Tensor adv_a;  // G_ba fooling D_a
  torch::Tensor adv_b;  // G_ab fooling D_b
  torch::Tensor cyc;    // MAE(G_ba(G_ab(a)), a) + MAE(G_ab(G_ba(b)), b)
  torch::Tensor total;  // adv_a + adv_b + lambda_cyc * cyc
  torch::Tensor d_a;
  torch::Tensor d_b;
};

/// gp > 0 switches the adversarial terms to Wasserstein form with a gradient
/// penalty on real/fake interpolates; gp == 0 keeps least squares.
struct StarGanLambdas {
  double cls = 1.0;
  double cyc = 10.0;
  double gp = 0.0;
};

struct StarGanLosses {
  torch::Tensor adv;
  torch::Tensor cls_real;
  torch::Tensor cls_fake;
  torch::Tensor cyc;
  torch::Tensor total;  // adv + lambda_cls (cls_real + cls_fake) + lambda_cyc cyc
  torch::Tensor g;      // generator objective: adv + lambda_cls cls_fake + lambda_cyc cyc
  torch::Tensor d;      // discriminator adversarial + lambda_cls cls_real
};

double pix2pix_total(double adv, double rec, double lambda_rec);
double cyclegan_total(double adv_a, double adv_b, double cyc, double lambda_cyc);
double stargan_total(double adv, double cls_real, double cls_fake, double cyc, const StarGanLambdas& l);

/// Pix2Pix uses a logistic adversarial loss; D sees (source, image) pairs.
Pix2PixLosses pix2pix_losses(const GeneratorFn& G, const DiscriminatorFn& D, const PairedBatch& batch, double lambda_rec);
/// Least-squares adversarial loss.
CycleGanLosses cyclegan_losses(const GeneratorFn& G_ab, const GeneratorFn& G_ba, const DiscriminatorFn& D_a,
                               const DiscriminatorFn& D_b, const torch::Tensor& a, const torch::Tensor& b,
                               double lambda_cyc);
/// Adversarial loss plus K-way cross-entropy on the domain head. `gen` draws
/// the interpolation weights of the gradient penalty.
StarGanLosses stargan_losses(const LabelGeneratorFn& G, const StarDiscriminatorFn& D, const torch::Tensor& x,
                             const torch::Tensor& source_label, const torch::Tensor& target_label, int K,
                             const StarGanLambdas& lambdas, torch::Generator* gen = nullptr);
/// Discriminator objective alone for a detached fake.
torch::Tensor stargan_d_loss(const StarDiscriminatorFn& D, const torch::Tensor& x, const torch::Tensor& fake,
                             const torch::Tensor& source_label, const StarGanLambdas& lambdas,
                             torch::Generator* gen = nullptr);
/// mean((||grad_x D_src(x_hat)||_2 - 1)^2) over x_hat = a x + (1 - a) fake, a ~ U(0, 1) per row.
torch::Tensor gradient_penalty(const StarDiscriminatorFn& D, const torch::Tensor& real, const torch::Tensor& fake,
                               torch::Generator* gen = nullptr);

// -------------------------------------------------------- training & model

struct GanFrameworkConfig {
  GanKind kind = GanKind::StarGan;
  double lambda_rec = 100.0;
  double lambda_cyc = 10.0;
  double lambda_cls = 1.0;
  double lambda_gp = 0.0;  // StarGAN; > 0 selects WGAN-GP instead of least squares
  int n_critic = 1;        // StarGAN discriminator steps per generator step
  int epochs = 200;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch = 8;
  std::uint64_t seed = 0;
  std::string source_domain;  // one-to-one kinds
  std::string target_domain;
  GanArch arch;

  void validate() const;
};

nlohmann::json to_json(const GanFrameworkConfig& c);
GanFrameworkConfig gan_config_from_json(const nlohmann::json& j);

struct GanLossRecord {
  int epoch = 0;
  int batch = 0;
  double g_total = 0.0;
  double d_total = 0.0;
  double rec_or_cyc = 0.0;
};
using GanLossLogger = std::function<void(const GanLossRecord&)>;

class GanModel {
 public:
  GanModel(GanFrameworkConfig config, std::vector<DomainLabel> domains, Shape input_shape);

  const GanFrameworkConfig& config() const { return config_; }
  GanFrameworkConfig& mutable_config() { return config_; }
  const std::vector<DomainLabel>& domains() const { return domains_; }
  const Shape& input_shape() const { return input_shape_; }
  GanKind kind() const { return config_.kind; }
  int K() const { return static_cast<int>(domains_.size()); }
  /// One-to-one kinds: trained (source, target) indices.
  int source_index() const;
  int target_index() const;

  /// Every learnable module, for parameter snapshots and serialization.
  torch::nn::Module& all() { return *root_; }

  UNetGenerator3d unet_g{nullptr};  // Pix2Pix
  PatchDiscriminator3d patch_d{nullptr};
  ResnetGenerator3d g_ab{nullptr}, g_ba{nullptr};  // CycleGAN
  PatchDiscriminator3d d_a{nullptr}, d_b{nullptr};
  ResnetGenerator3d star_g{nullptr};  // StarGAN
  StarDiscriminator3d star_d{nullptr};

  /// Batched single forward pass, clamped to [-1, 1], labeled with `target`.
  /// Output voxels outside `mask` are zeroed when a mask is given.
  std::vector<StatMap> transfer(std::span<const StatMap* const> sources, const DomainLabel& target,
                                const Mask* mask = nullptr);

  nlohmann::json manifest() const;
  void save(const std::filesystem::path& manifest_path) const;
  static GanModel load(const std::filesystem::path& manifest_path);

 private:
  GanFrameworkConfig config_;
  std::vector<DomainLabel> domains_;
  Shape input_shape_;
  std::shared_ptr<torch::nn::Module> root_;
};

struct GanTrainResult {
  std::vector<double> epoch_g_loss;
  std::vector<double> epoch_d_loss;
  std::vector<double> epoch_aux_loss;  // rec (Pix2Pix) or cyc
  int steps = 0;
};

/// Alternating discriminator / generator Adam updates.
GanTrainResult train_gan(GanModel& model, const Dataset& train, const GanLossLogger& log = {});

/// The pairs / pools the kind trains on; PairingUnavailable when empty.
std::vector<std::pair<const StatMap*, const StatMap*>> paired_examples(const Dataset& data, int source, int target);

StatMap gan_transfer(GanModel& model, const StatMap& source, const DomainLabel& target);

}  // namespace stylemap
