#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stylemap/dataset.hpp"
#include "stylemap/metrics.hpp"
#include "stylemap/volume.hpp"

namespace stylemap {

/// Five stride-2 stages of conv3d -> batchnorm3d -> leaky ReLU, then one linear
/// layer onto K logits. Odd sizes are zero padded, so every stage halves the
/// grid with ceil division.
struct ClassifierArch {
  std::vector<std::int64_t> channels{32, 64, 128, 256, 512};
  double leaky_slope = 0.2;
  int K = 4;
  Shape input_shape{48, 56, 48};
  bool normalize_latent = false;

  std::int64_t latent_dim() const;
};

/// C_last * prod(ceil(dim / 2^stages)).
std::int64_t classifier_latent_dim(const Shape& input, std::int64_t last_channels, int stages);

struct ClassifierOutput {
  torch::Tensor logits;               // [B, K]
  torch::Tensor latent;               // [B, D], flattened pre-head activation
  std::vector<torch::Tensor> stages;  // per-stage activations, stage 1 first
};

class PipelineClassifierImpl : public torch::nn::Module {
 public:
  explicit PipelineClassifierImpl(const ClassifierArch& arch);
  ClassifierOutput forward(const torch::Tensor& x);

 private:
  ClassifierArch arch_;
  std::vector<torch::nn::Sequential> stages_;
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(PipelineClassifier);

enum class CondKind { OneHot, Latent };
std::string to_string(CondKind kind);
CondKind cond_kind_from_string(const std::string& s);

/// Conditioning payload for the noise predictor.
struct ConditionVector {
  CondKind kind = CondKind::OneHot;
  std::vector<float> payload;
  std::string source;
};

ConditionVector one_hot_condition(const DomainLabel& target, int K);

struct ClassifierHParams {
  int epochs = 150;
  double lr = 1e-4;
  int batch = 64;
  std::uint64_t seed = 0;
};

struct ClassifierMetrics {
  int epochs_trained = 0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

/// Called once per optimizer step with (epoch, batch, loss).
using LossLogger = std::function<void(int, int, double)>;

/// Network plus the metadata needed to rebuild it from a checkpoint.
class Classifier {
 public:
  Classifier(ClassifierArch arch, std::vector<DomainLabel> domains, std::uint64_t init_seed);

  static Classifier load(const std::filesystem::path& manifest_path);
  /// Writes `<stem>.pt` and the JSON manifest at `manifest_path`.
  void save(const std::filesystem::path& manifest_path) const;

  const ClassifierArch& arch() const { return arch_; }
  const std::vector<DomainLabel>& domains() const { return domains_; }
  std::uint64_t seed() const { return seed_; }
  bool trained() const { return trained_; }
  void mark_trained(ClassifierMetrics metrics);
  const ClassifierMetrics& metrics() const { return metrics_; }
  PipelineClassifier& net() { return net_; }

  /// Inference-mode forward over a [B, 1, nz, ny, nx] batch.
  ClassifierOutput forward(const torch::Tensor& batch) const;
  ClassifierOutput forward(const StatMap& map) const;

  /// Requires trained weights (NoWeights otherwise).
  std::pair<DomainLabel, LabelDistribution> predict_domain(const StatMap& map) const;
  std::vector<LabelDistribution> predict(std::span<const StatMap* const> maps) const;

  ConditionVector extract_latent(const StatMap& map) const;
  std::vector<std::vector<float>> latents(std::span<const StatMap* const> maps) const;

  nlohmann::json manifest() const;

 private:
  void check_input(const Shape& shape) const;

  ClassifierArch arch_;
  std::vector<DomainLabel> domains_;
  std::uint64_t seed_;
  bool trained_ = false;
  ClassifierMetrics metrics_;
  mutable PipelineClassifier net_{nullptr};
};

/// Adam + cross-entropy over every map in `train`; `val` (optional) feeds the
/// final validation accuracy. epochs == 0 leaves the weights untouched.
ClassifierMetrics train_classifier(Classifier& clf, const Dataset& train, const Dataset* val,
                                   const ClassifierHParams& hp, const LossLogger& log = {});

/// Fraction of maps whose argmax logit equals their domain index; works on
/// untrained networks too.
double classifier_accuracy(const Classifier& clf, std::span<const StatMap* const> maps);

}  // namespace stylemap
