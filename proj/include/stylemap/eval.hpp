#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylemap/classifier.hpp"
#include "stylemap/dataset.hpp"
#include "stylemap/metrics.hpp"
#include "stylemap/volume.hpp"

namespace stylemap {

struct Direction {
  std::string source;
  std::string target;

  std::string label() const { return source + "->" + target; }
  bool operator==(const Direction&) const = default;
};

/// fsl-1->spm-0, spm-0->fsl-1, fsl-1->spm-1, fsl-1->fsl-0.
std::vector<Direction> canonical_directions();
/// Parses "a->b" (also "a:b").
Direction parse_direction(const std::string& s);

struct TransferCase {
  DomainLabel source_domain;
  DomainLabel target_domain;
  StatMap source;
  StatMap truth;
  StatMap generated;
};

/// Predicted domain index per map.
using DomainPredictor = std::function<std::vector<int>(std::span<const StatMap* const>)>;
DomainPredictor classifier_predictor(const Classifier& clf);

double transfer_accuracy(std::span<const TransferCase> cases, const DomainPredictor& predict);
double inception_score(std::span<const StatMap* const> maps, const Classifier& clf);

/// Transfers a batch of sources (all from one domain) to `target`.
using TransferModel =
    std::function<std::vector<StatMap>(std::span<const StatMap* const> sources, const DomainLabel& target,
                                       std::uint64_t seed)>;

/// Returns the sources unchanged (relabelled).
TransferModel identity_model();
/// Returns the same-group truth from `truth`.
TransferModel oracle_model(const Dataset& truth);

struct EvalOptions {
  int n_images = 20;
  std::uint64_t seed = 0;
  bool in_mask = true;
  bool denormalized = false;
};

struct DirectionMetrics {
  Direction direction;
  int n = 0;
  double mean_r = 0, se_r = 0;  // percent
  double mean_mse = 0, se_mse = 0;
  double initial_r = 0, initial_se_r = 0;
  double initial_mse = 0, initial_se_mse = 0;
  double accuracy = -1;  // -1 without a classifier
  std::vector<std::string> groups;
};

struct MetricReport {
  std::string model;
  std::string train_task;
  std::string eval_task;
  EvalOptions options;
  std::vector<DirectionMetrics> rows;
  double inception_score = -1;  // over all generated maps; -1 without a classifier
  double initial_inception_score = -1;
  double target_class_accuracy = -1;
};

/// For each direction: n_images seeded test groups holding both maps, r and
/// MSE of (generated, truth) and of the Initial pair (source, truth).
MetricReport evaluate_transfers(const TransferModel& model, const Dataset& test, std::span<const Direction> directions,
                                const Classifier* classifier, const EvalOptions& options,
                                std::vector<TransferCase>* cases = nullptr);

/// evaluate_transfers on a foreign task; the domain lists must agree.
MetricReport cross_task_evaluation(const TransferModel& model, const std::vector<std::string>& model_domains,
                                   const std::string& train_task, const Dataset& test,
                                   std::span<const Direction> directions, const Classifier* classifier,
                                   const EvalOptions& options);

std::string report_csv(const MetricReport& report);
nlohmann::json to_json(const MetricReport& report);
/// Rows: Initial plus one per report; columns: directions; cells "r (se)".
std::string format_table(std::span<const MetricReport> reports);
/// Writes `<stem>.csv` and `<stem>.json`; returns both paths.
std::pair<std::filesystem::path, std::filesystem::path> write_report(const MetricReport& report,
                                                                     const std::filesystem::path& stem);

struct LayerCorrelationTable {
  std::vector<Direction> pairs;
  std::vector<std::vector<double>> r;  // [pair][layer], percent
  int layers = 4;
};

/// Mean correlation between same-group classifier feature maps of two
/// pipelines, averaged over channels and groups, for stages 1-4. A stage whose
/// channels are all spatially constant reports 0.
LayerCorrelationTable layerwise_feature_correlation(const Classifier& clf, const Dataset& data,
                                                    std::span<const Direction> pairs, int max_groups = 20);
std::string layer_table_csv(const LayerCorrelationTable& table);

}  // namespace stylemap
