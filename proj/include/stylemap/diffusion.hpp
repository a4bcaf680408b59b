#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylemap/classifier.hpp"
#include "stylemap/dataset.hpp"
#include "stylemap/unet.hpp"
#include "stylemap/volume.hpp"

namespace stylemap {

/// Linear beta schedule. Arrays are stored 0-based; every accessor takes the
/// 1-based timestep t in [1, T].
struct DiffusionSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_var;

  double beta_at(int t) const { return beta.at(t - 1); }
  double alpha_at(int t) const { return alpha.at(t - 1); }
  double alpha_bar_at(int t) const { return alpha_bar.at(t - 1); }
  double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar.at(t - 2); }
  double posterior_var_at(int t) const { return posterior_var.at(t - 1); }
  void check_t(int t) const;
};

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);

enum class SamplingVariance { Posterior, Beta };
std::string to_string(SamplingVariance v);
SamplingVariance sampling_variance_from_string(const std::string& s);

/// w: guidance scale; p_uncond: training-time condition dropout; t_start:
/// transfer initialization step (0 resolves to T).
struct GuidanceConfig {
  double w = 2.0;
  double p_uncond = 0.1;
  int t_start = 0;

  int resolved_t_start(int T) const { return t_start == 0 ? T : t_start; }
  void validate(int T) const;
};

struct NoisyVolume {
  StatMap x_t;
  int t = 0;
};

struct NoiseSample {
  torch::Tensor eps;
  std::uint64_t seed = 0;
};

NoiseSample draw_noise(const Shape& shape, std::uint64_t seed);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; `t` holds one timestep per
/// batch row.
torch::Tensor forward_diffuse(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                              const DiffusionSchedule& schedule);
torch::Tensor forward_diffuse(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                              const DiffusionSchedule& schedule);
NoisyVolume forward_diffuse(const StatMap& x0, int t, const NoiseSample& eps,
                            const DiffusionSchedule& schedule);

/// Anything that predicts the injected noise. `t` is int64 [B] in [1, T];
/// `null_mask` [B] bool selects the unconditional (null) embedding.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual torch::Tensor predict(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& cond,
                                const torch::Tensor& null_mask) = 0;
  virtual CondKind cond_kind() const = 0;
  virtual std::int64_t cond_dim() const = 0;
};

struct TrainingStepResult {
  torch::Tensor loss;  // scalar, differentiable
  int n_null = 0;      // rows that used the null condition
};

/// One epsilon-prediction step: t ~ U{1..T}, eps ~ N(0, I), conditions dropped
/// with probability p_uncond, loss = MSE(eps_hat, eps). The caller runs
/// backward and the optimizer.
TrainingStepResult training_step(NoisePredictor& model, const torch::Tensor& x0, const torch::Tensor& cond,
                                 CondKind cond_kind, const DiffusionSchedule& schedule,
                                 const GuidanceConfig& guidance, torch::Generator& gen);

/// (1 + w) eps(x_t, t, cond) - w eps(x_t, t, null). With no condition the
/// unconditional prediction is returned.
torch::Tensor guided_noise(NoisePredictor& model, const torch::Tensor& x_t, int t,
                           const std::optional<torch::Tensor>& cond, double w);

/// One ancestral step t -> t-1; no noise is added at t = 1.
torch::Tensor reverse_step(const torch::Tensor& x_t, int t, const torch::Tensor& eps_hat,
                           const DiffusionSchedule& schedule, torch::Generator& gen,
                           SamplingVariance variance = SamplingVariance::Posterior);

/// Iterates reverse_step with guided noise from t_from down to 1.
torch::Tensor ancestral_sample(NoisePredictor& model, torch::Tensor x, int t_from,
                               const std::optional<torch::Tensor>& cond, double w,
                               const DiffusionSchedule& schedule, torch::Generator& gen,
                               SamplingVariance variance = SamplingVariance::Posterior);

/// Forward-diffuses the source to t_start with fresh noise, denoises towards
/// the condition, clamps to [-1, 1].
torch::Tensor sample_transfer(NoisePredictor& model, const torch::Tensor& source, const torch::Tensor& cond,
                              const GuidanceConfig& guidance, const DiffusionSchedule& schedule,
                              torch::Generator& gen, SamplingVariance variance = SamplingVariance::Posterior);
StatMap sample_transfer(NoisePredictor& model, const StatMap& source, const ConditionVector& cond,
                        const DomainLabel& target, const GuidanceConfig& guidance,
                        const DiffusionSchedule& schedule, torch::Generator& gen,
                        SamplingVariance variance = SamplingVariance::Posterior);

/// nullopt means "all": the mean over the whole pool.
using TargetCount = std::optional<int>;

/// One-hot indicator, or the mean latent of n distinct pool images sampled
/// with `rng` (the whole pool for n = all).
ConditionVector make_condition(const DomainLabel& target, int K, CondKind mode, TargetCount n_targets,
                               std::span<const std::vector<float>> pool_latents, std::mt19937_64& rng);
/// Same, but computes latents with the classifier for the sampled maps only.
ConditionVector make_condition(const DomainLabel& target, int K, CondKind mode, TargetCount n_targets,
                               std::span<const StatMap* const> pool, const Classifier* classifier,
                               std::mt19937_64& rng);

torch::Tensor stack_conditions(std::span<const ConditionVector> conds);

struct DiffusionConfig {
  int T = 500;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  CondKind cond_kind = CondKind::OneHot;
  GuidanceConfig guidance;
  SamplingVariance variance = SamplingVariance::Posterior;
  std::int64_t base_channels = 16;
  int epochs = 200;
  int batch = 8;
  double lr = 1e-4;
  int max_steps = 0;  // 0: no cap beyond epochs
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const DiffusionConfig& c);
DiffusionConfig diffusion_config_from_json(const nlohmann::json& j);

/// Conditional noise predictor with its schedule and metadata.
class DiffusionModel : public NoisePredictor {
 public:
  DiffusionModel(DiffusionConfig config, std::vector<DomainLabel> domains, Shape input_shape,
                 std::int64_t cond_dim);

  torch::Tensor predict(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& cond,
                        const torch::Tensor& null_mask) override;
  CondKind cond_kind() const override { return config_.cond_kind; }
  std::int64_t cond_dim() const override { return cond_dim_; }

  const DiffusionConfig& config() const { return config_; }
  DiffusionConfig& mutable_config() { return config_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  const std::vector<DomainLabel>& domains() const { return domains_; }
  const Shape& input_shape() const { return input_shape_; }
  UNet3d& net() { return net_; }

  /// Path of the classifier used for latent conditions (relative to the
  /// manifest when saved).
  std::string classifier_path;

  /// Batched transfer of `sources` towards `target`, one condition per source.
  /// Output voxels outside `mask` are zeroed when a mask is given.
  std::vector<StatMap> transfer(std::span<const StatMap* const> sources, std::span<const ConditionVector> conds,
                                const DomainLabel& target, std::uint64_t seed, const Mask* mask = nullptr);

  nlohmann::json manifest() const;
  void save(const std::filesystem::path& manifest_path) const;
  static DiffusionModel load(const std::filesystem::path& manifest_path);

 private:
  DiffusionConfig config_;
  std::vector<DomainLabel> domains_;
  Shape input_shape_;
  std::int64_t cond_dim_;
  DiffusionSchedule schedule_;
  UNet3d net_{nullptr};
};

struct DiffusionTrainResult {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
  int steps = 0;
};

/// Trains on (map, condition of its own domain) pairs: the one-hot code of the
/// map's domain, or the map's own classifier latent.
DiffusionTrainResult train_diffusion(DiffusionModel& model, const Dataset& train, const Classifier* classifier,
                                     const LossLogger& log = {});

}  // namespace stylemap
