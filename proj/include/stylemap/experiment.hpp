#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stylemap/classifier.hpp"
#include "stylemap/dataset.hpp"
#include "stylemap/diffusion.hpp"
#include "stylemap/eval.hpp"
#include "stylemap/gan.hpp"
#include "stylemap/synthetic.hpp"

namespace stylemap {

inline constexpr const char* kVersion = "0.1.0";

enum class ModelKind { Classifier, Pix2Pix, CycleGan, StarGan, Ddpm };
std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// One run: a data source (manifest xor synthetic config), a model section,
/// evaluation settings, a global seed and an output directory.
struct ExperimentConfig {
  std::optional<std::string> manifest;
  std::optional<SyntheticConfig> synthetic;
  double train_fraction = 0.8;
  ModelKind kind = ModelKind::Classifier;
  nlohmann::json model = nlohmann::json::object();  // kind-specific hyperparameters
  std::string classifier;                           // checkpoint manifest, ddpm latent mode
  std::vector<Direction> directions = canonical_directions();
  int n_images = 20;
  bool in_mask = true;
  bool denormalized = false;
  std::uint64_t seed = 0;
  std::string output_dir;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
/// Resolved config with every default materialized.
nlohmann::json to_json(const ExperimentConfig& c);

ClassifierHParams classifier_hparams_from_json(const nlohmann::json& j, std::uint64_t seed);
ClassifierArch classifier_arch_from_json(const nlohmann::json& j, const Shape& input, int K);

/// output_dir/{checkpoints,volumes,reports,logs}, created on demand.
struct OutputLayout {
  std::filesystem::path root;
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path volumes() const { return root / "volumes"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path logs() const { return root / "logs"; }
  static OutputLayout create(const std::filesystem::path& root);
};

/// $STYLEMAP_OUTPUT_ROOT, else ./outputs.
std::filesystem::path default_output_root();

struct RunRecord {
  std::string command;
  nlohmann::json config;
  std::vector<std::string> artifacts;
  std::chrono::system_clock::time_point started = std::chrono::system_clock::now();

  /// Stamps the end time and writes atomically.
  void write(const std::filesystem::path& path) const;
};

/// Seeded group-level split into (train, test).
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double train_fraction, std::uint64_t seed);

/// Adapters onto the evaluation interface. `pool` provides target-domain maps
/// for latent conditions (typically the training split).
TransferModel diffusion_transfer_model(DiffusionModel& model, const Dataset* pool, const Classifier* classifier,
                                       TargetCount n_targets, const Mask* mask);
TransferModel gan_transfer_model(GanModel& model, const Mask* mask);

/// Writes one CSV row per optimizer step: epoch,batch,loss[,d_loss,aux].
class LossCsv {
 public:
  LossCsv(const std::filesystem::path& path, const std::string& header);
  void row(const std::string& line);
  std::size_t rows() const { return rows_; }

 private:
  std::ofstream out_;
  std::size_t rows_ = 0;
};

}  // namespace stylemap
