#pragma once

#include <torch/torch.h>

#include <cmath>

#include "stylemap/diffusion.hpp"

namespace stub {

/// eps_cond == a everywhere, eps_null == b everywhere.
class ConstantPredictor : public stylemap::NoisePredictor {
 public:
  ConstantPredictor(double a, double b, std::int64_t dim = 4) : a_(a), b_(b), dim_(dim) {}
  torch::Tensor predict(const torch::Tensor& x_t, const torch::Tensor&, const torch::Tensor&,
                        const torch::Tensor& null_mask) override {
    std::vector<std::int64_t> shape(x_t.dim(), 1);
    shape[0] = x_t.size(0);
    const auto m = null_mask.to(x_t.scalar_type()).view(shape);
    return torch::full_like(x_t, a_) * (1 - m) + torch::full_like(x_t, b_) * m;
  }
  stylemap::CondKind cond_kind() const override { return stylemap::CondKind::OneHot; }
  std::int64_t cond_dim() const override { return dim_; }

 private:
  double a_, b_;
  std::int64_t dim_;
};

/// Optimal predictor for data that is a single point x*:
/// eps(x_t, t) = (x_t - sqrt(abar_t) x*) / sqrt(1 - abar_t).
class PointMassPredictor : public stylemap::NoisePredictor {
 public:
  PointMassPredictor(torch::Tensor x_star, stylemap::DiffusionSchedule s, stylemap::CondKind kind = stylemap::CondKind::OneHot)
      : x_star_(std::move(x_star)), s_(std::move(s)), kind_(kind) {}
  torch::Tensor predict(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor&,
                        const torch::Tensor&) override {
    auto out = torch::empty_like(x_t);
    for (std::int64_t i = 0; i < x_t.size(0); ++i) {
      const double abar = s_.alpha_bar_at(static_cast<int>(t[i].item<std::int64_t>()));
      out[i] = (x_t[i] - std::sqrt(abar) * x_star_.expand_as(x_t[i])) / std::sqrt(1.0 - abar);
    }
    return out;
  }
  stylemap::CondKind cond_kind() const override { return kind_; }
  std::int64_t cond_dim() const override { return 4; }

 private:
  torch::Tensor x_star_;
  stylemap::DiffusionSchedule s_;
  stylemap::CondKind kind_;
};

/// Predicts zero and counts null-condition rows.
class CountingPredictor : public stylemap::NoisePredictor {
 public:
  torch::Tensor predict(const torch::Tensor& x_t, const torch::Tensor&, const torch::Tensor&,
                        const torch::Tensor& null_mask) override {
    nulls += null_mask.sum().item<std::int64_t>();
    rows += null_mask.numel();
    return torch::zeros_like(x_t);
  }
  stylemap::CondKind cond_kind() const override { return stylemap::CondKind::OneHot; }
  std::int64_t cond_dim() const override { return 4; }
  std::int64_t nulls = 0;
  std::int64_t rows = 0;
};

}  // namespace stub
