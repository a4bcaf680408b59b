#include "stylemap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stylemap {

int LabelDistribution::argmax() const {
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

LabelDistribution softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::EmptyInput, "softmax of no logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  LabelDistribution d;
  d.probs.resize(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.probs[i] = std::exp(logits[i] - m);
    total += d.probs[i];
  }
  for (auto& p : d.probs) p /= total;
  return d;
}

LabelDistribution softmax(std::span<const float> logits) {
  std::vector<double> l(logits.begin(), logits.end());
  return softmax(std::span<const double>(l));
}

namespace {

void check_pair(std::span<const float> a, std::span<const float> b, const Mask* mask) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "metric inputs differ in size");
  if (mask && mask->voxels.size() != a.size()) {
    throw Error(ErrorCode::ShapeMismatch, "mask does not match metric inputs");
  }
}

}  // namespace

double pearson(std::span<const float> a, std::span<const float> b, const Mask* mask) {
  check_pair(a, b, mask);
  double sa = 0.0, sb = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask && !(*mask)(i)) continue;
    sa += a[i];
    sb += b[i];
    ++n;
  }
  if (n < 2) throw Error(ErrorCode::EmptyInput, "pearson needs at least 2 voxels");
  const double ma = sa / n, mb = sb / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask && !(*mask)(i)) continue;
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) throw Error(ErrorCode::ConstantInput, "pearson of a constant input");
  return cov / std::sqrt(va * vb);
}

double pearson(const StatMap& a, const StatMap& b, const Mask& mask) {
  if (!(a.shape == b.shape) || !(a.shape == mask.shape)) {
    throw Error(ErrorCode::ShapeMismatch, "pearson: " + to_string(a.shape) + " vs " + to_string(b.shape));
  }
  return pearson(a.voxels, b.voxels, &mask);
}

double mse(std::span<const float> a, std::span<const float> b, const Mask* mask) {
  check_pair(a, b, mask);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask && !(*mask)(i)) continue;
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptyInput, "mse over an empty mask");
  return acc / n;
}

double mse(const StatMap& a, const StatMap& b, const Mask& mask) {
  if (!(a.shape == b.shape) || !(a.shape == mask.shape)) {
    throw Error(ErrorCode::ShapeMismatch, "mse: " + to_string(a.shape) + " vs " + to_string(b.shape));
  }
  return mse(a.voxels, b.voxels, &mask);
}

double mean(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::EmptySet, "mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double standard_error(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

double inception_score(std::span<const LabelDistribution> dists) {
  if (dists.empty()) throw Error(ErrorCode::EmptySet, "inception score of no images");
  const std::size_t K = dists.front().probs.size();
  std::vector<double> marginal(K, 0.0);
  for (const auto& d : dists) {
    if (d.probs.size() != K) throw Error(ErrorCode::ShapeMismatch, "label distributions differ in K");
    for (std::size_t k = 0; k < K; ++k) marginal[k] += d.probs[k];
  }
  for (auto& m : marginal) m /= dists.size();
  double kl_sum = 0.0;
  for (const auto& d : dists) {
    double kl = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      if (d.probs[k] > 0.0) kl += d.probs[k] * (std::log(d.probs[k]) - std::log(marginal[k]));
    }
    kl_sum += kl;
  }
  return std::exp(kl_sum / dists.size());
}

}  // namespace stylemap
