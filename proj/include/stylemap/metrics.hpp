#pragma once

#include <span>
#include <vector>

#include "stylemap/volume.hpp"

namespace stylemap {

/// Class probabilities p(Y|x) for one image.
struct LabelDistribution {
  std::vector<double> probs;
  int argmax() const;
};

/// Numerically stable softmax.
LabelDistribution softmax(std::span<const double> logits);
LabelDistribution softmax(std::span<const float> logits);

/// Product-moment correlation over the voxels where `mask` is set (all voxels
/// when mask is null).
double pearson(std::span<const float> a, std::span<const float> b, const Mask* mask = nullptr);
double pearson(const StatMap& a, const StatMap& b, const Mask& mask);

double mse(std::span<const float> a, std::span<const float> b, const Mask* mask = nullptr);
double mse(const StatMap& a, const StatMap& b, const Mask& mask);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator) over sqrt(n); 0 for n < 2.
double standard_error(std::span<const double> v);

/// exp(mean_x KL(p(Y|x) || P(Y))) with P(Y) the mean distribution. One split.
double inception_score(std::span<const LabelDistribution> dists);

}  // namespace stylemap
