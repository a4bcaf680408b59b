#pragma once

// Brute-force reference formulas, written independently of the library code.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "stylemap/metrics.hpp"
#include "stylemap/volume.hpp"

namespace oracle {

inline std::vector<float> random_floats(std::mt19937_64& rng, int n) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Raw-moment form r = (n Σab − Σa Σb) / sqrt((n Σa² − (Σa)²)(n Σb² − (Σb)²)) in long double.
inline double pearson(std::span<const float> a, std::span<const float> b, const stylemap::Mask* m = nullptr) {
  long double n = 0, sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m && !m->voxels[i]) continue;
    const long double x = a[i], y = b[i];
    n += 1;
    sa += x;
    sb += y;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  return static_cast<double>((n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb)));
}

inline double mse(std::span<const float> a, std::span<const float> b, const stylemap::Mask* m = nullptr) {
  long double acc = 0;
  long double n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m && !m->voxels[i]) continue;
    acc += (static_cast<long double>(a[i]) - b[i]) * (static_cast<long double>(a[i]) - b[i]);
    n += 1;
  }
  return static_cast<double>(acc / n);
}

inline double mean(std::span<const double> v) {
  long double s = 0;
  for (double x : v) s += x;
  return static_cast<double>(s / v.size());
}

/// sqrt(Σ(x − x̄)² / (n − 1)) / sqrt(n) via Σx² − n x̄².
inline double standard_error(std::span<const double> v) {
  const long double n = v.size();
  long double s = 0, ss = 0;
  for (double x : v) {
    s += x;
    ss += static_cast<long double>(x) * x;
  }
  const long double var = (ss - s * s / n) / (n - 1);
  return static_cast<double>(std::sqrt(var / n));
}

inline std::vector<stylemap::LabelDistribution> random_distributions(std::mt19937_64& rng, int n, int K) {
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<stylemap::LabelDistribution> out;
  for (int i = 0; i < n; ++i) {
    stylemap::LabelDistribution d{std::vector<double>(K)};
    double s = 0;
    for (auto& p : d.probs) s += (p = g(rng) + 1e-12);
    for (auto& p : d.probs) p /= s;
    out.push_back(d);
  }
  return out;
}

/// exp(mean_x Σ_k p log p − Σ_k P(k) log P(k)): the KL sum rewritten as
/// negative entropy minus cross-entropy against the marginal.
inline double inception_score(std::span<const stylemap::LabelDistribution> d) {
  const std::size_t K = d[0].probs.size();
  std::vector<long double> marginal(K, 0);
  for (const auto& x : d)
    for (std::size_t k = 0; k < K; ++k) marginal[k] += x.probs[k] / d.size();
  long double neg_entropy = 0, cross = 0;
  for (const auto& x : d) {
    for (std::size_t k = 0; k < K; ++k) {
      if (x.probs[k] <= 0) continue;
      neg_entropy += x.probs[k] * std::log(static_cast<long double>(x.probs[k]));
      cross += x.probs[k] * std::log(marginal[k]);
    }
  }
  return static_cast<double>(std::exp((neg_entropy - cross) / d.size()));
}

}  // namespace oracle
