#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>

#include "stylemap/gan.hpp"
#include "stylemap/synthetic.hpp"
#include "stylemap/tensor_utils.hpp"
#include "test_util.hpp"

using namespace stylemap;

namespace {

torch::Tensor ramp(std::int64_t b = 2) {
  return torch::linspace(-0.8, 0.8, b * 4 * 4 * 4).view({b, 1, 4, 4, 4});
}

DiscriminatorFn constant_d(double v) {
  return [v](const torch::Tensor& x) { return torch::full({x.size(0), 1, 2, 2, 2}, v); };
}

GeneratorFn shift(double by) {
  return [by](const torch::Tensor& x) { return x + by; };
}

PairedBatch paired(const torch::Tensor& s, const torch::Tensor& t) {
  PairedBatch b{s, t, {}, {}};
  for (std::int64_t i = 0; i < s.size(0); ++i) {
    b.source_groups.push_back("g" + std::to_string(i));
    b.target_groups.push_back("g" + std::to_string(i));
  }
  return b;
}

Dataset tiny_data(int groups = 4) {
  SyntheticConfig c;
  c.n_groups = groups;
  c.shape = {16, 16, 16};
  return make_synthetic_dataset(c);
}

GanFrameworkConfig tiny_config(GanKind kind) {
  GanFrameworkConfig c;
  c.kind = kind;
  c.epochs = 1;
  c.batch = 4;
  c.seed = 2;
  c.arch.ngf = 4;
  c.arch.ndf = 4;
  c.arch.res_blocks = 1;
  if (kind != GanKind::StarGan) {
    c.source_domain = "fsl-1";
    c.target_domain = "spm-0";
  }
  return c;
}

std::vector<const StatMap*> of_domain(const Dataset& d, const std::string& name) {
  std::vector<const StatMap*> out;
  for (const auto& m : d.maps)
    if (m.domain.name == name) out.push_back(&m);
  return out;
}

}  // namespace

TEST(GanTotals, Formulas) {
  EXPECT_DOUBLE_EQ(pix2pix_total(0.5, 0.01, 100.0), 1.5);
  EXPECT_DOUBLE_EQ(cyclegan_total(0.25, 0.5, 0.1, 10.0), 1.75);
  EXPECT_DOUBLE_EQ(stargan_total(0.2, 0.5, 0.3, 0.05, {1.0, 10.0}), 1.5);
  EXPECT_DOUBLE_EQ(stargan_total(1.0, 1.0, 1.0, 1.0, {0.5, 2.0}), 4.0);
}

TEST(Pix2PixLoss, PerfectGeneratorHasZeroReconstruction) {
  const auto x = ramp();
  const auto l = pix2pix_losses(shift(0.0), constant_d(0.0), paired(x, x), 100.0);
  EXPECT_EQ(l.rec.item<double>(), 0.0);
  EXPECT_NEAR(l.adv.item<double>(), std::log(2.0), 1e-6);
  EXPECT_NEAR(l.total.item<double>(), std::log(2.0), 1e-6);
  EXPECT_NEAR(l.d.item<double>(), std::log(2.0), 1e-6);
}

TEST(Pix2PixLoss, OffsetGivesItsMagnitude) {
  const auto x = ramp();
  const auto l = pix2pix_losses(shift(0.1), constant_d(0.0), paired(x, x), 100.0);
  EXPECT_NEAR(l.rec.item<double>(), 0.1, 1e-6);
  EXPECT_NEAR(l.total.item<double>(), std::log(2.0) + 10.0, 1e-4);
}

TEST(Pix2PixLoss, RejectsMixedGroups) {
  const auto x = ramp();
  auto b = paired(x, x);
  b.target_groups[1] = "other";
  expect_error(ErrorCode::UnpairedData, [&] { pix2pix_losses(shift(0.0), constant_d(0.0), b, 1.0); });
  b.target_groups.pop_back();
  expect_error(ErrorCode::UnpairedData, [&] { pix2pix_losses(shift(0.0), constant_d(0.0), b, 1.0); });
}

TEST(CycleGanLoss, IdentityGeneratorsCycleExactly) {
  const auto a = ramp(), b = ramp() * 0.5;
  const auto l = cyclegan_losses(shift(0.0), shift(0.0), constant_d(1.0), constant_d(1.0), a, b, 10.0);
  EXPECT_EQ(l.cyc.item<double>(), 0.0);
  EXPECT_EQ(l.adv_a.item<double>(), 0.0);
  EXPECT_EQ(l.total.item<double>(), 0.0);
  EXPECT_NEAR(l.d_a.item<double>(), 0.5, 1e-7);
}

TEST(CycleGanLoss, InverseShiftsCancel) {
  const auto a = ramp(), b = ramp();
  const auto l = cyclegan_losses(shift(0.2), shift(-0.2), constant_d(0.0), constant_d(0.0), a, b, 10.0);
  EXPECT_NEAR(l.cyc.item<double>(), 0.0, 1e-6);
  EXPECT_NEAR(l.total.item<double>(), 2.0, 1e-5);
  EXPECT_NEAR(l.d_b.item<double>(), 0.5, 1e-7);
}

TEST(CycleGanLoss, OneSidedShiftBruteForce) {
  const auto a = ramp(), b = ramp() * 0.3;
  const auto l = cyclegan_losses(shift(0.2), shift(0.0), constant_d(0.5), constant_d(0.5), a, b, 10.0);
  const auto fb = a + 0.2, fa = b;
  const double ref = (fb - a).abs().mean().item<double>() + (fa + 0.2 - b).abs().mean().item<double>();
  EXPECT_NEAR(l.cyc.item<double>(), ref, 1e-6);
  EXPECT_NEAR(l.cyc.item<double>(), 0.4, 1e-6);
  EXPECT_NEAR(l.adv_b.item<double>(), 0.25, 1e-7);
  EXPECT_NEAR(l.total.item<double>(), 0.5 + 4.0, 1e-5);
}

TEST(StarGanLoss, UniformClassifierGivesLogK) {
  const int K = 4;
  const auto x = ramp(3);
  LabelGeneratorFn G = [](const torch::Tensor& v, const torch::Tensor&) { return v; };
  StarDiscriminatorFn D = [&](const torch::Tensor& v) {
    return StarDiscriminatorOutput{torch::ones({v.size(0), 1, 2, 2, 2}), torch::zeros({v.size(0), K})};
  };
  const auto src = torch::tensor({0, 1, 2}, torch::kLong), tgt = torch::tensor({3, 3, 0}, torch::kLong);
  const auto l = stargan_losses(G, D, x, src, tgt, K, {1.0, 10.0});
  EXPECT_NEAR(l.cls_real.item<double>(), std::log(4.0), 1e-6);
  EXPECT_NEAR(l.cls_fake.item<double>(), std::log(4.0), 1e-6);
  EXPECT_EQ(l.cyc.item<double>(), 0.0);
  EXPECT_EQ(l.adv.item<double>(), 0.0);
  EXPECT_NEAR(l.total.item<double>(), 2 * std::log(4.0), 1e-6);
  EXPECT_NEAR(l.g.item<double>(), std::log(4.0), 1e-6);
  EXPECT_NEAR(l.d.item<double>(), 1.0 + std::log(4.0), 1e-6);
}

TEST(StarGanLoss, LabelErrors) {
  const auto x = ramp(2);
  LabelGeneratorFn G = [](const torch::Tensor& v, const torch::Tensor&) { return v; };
  StarDiscriminatorFn D = [](const torch::Tensor& v) {
    return StarDiscriminatorOutput{torch::ones({v.size(0), 1}), torch::zeros({v.size(0), 4})};
  };
  expect_error(ErrorCode::UnknownLabel,
               [&] { stargan_losses(G, D, x, torch::tensor({0, 4}), torch::tensor({1, 1}), 4, {}); });
  expect_error(ErrorCode::InvalidK, [&] { stargan_losses(G, D, x, torch::tensor({0, 0}), torch::tensor({0, 0}), 1, {}); });
}

TEST(LabelChannels, BroadcastsOneHot) {
  const auto x = torch::zeros({2, 1, 3, 2, 2});
  const auto y = label_channels(x, torch::tensor({1, 3}, torch::kLong), 4);
  ASSERT_EQ(y.sizes(), (std::vector<std::int64_t>{2, 5, 3, 2, 2}));
  EXPECT_EQ(y[0][2].min().item<float>(), 1.0f);
  EXPECT_EQ(y[1][4].min().item<float>(), 1.0f);
  EXPECT_EQ(y.sum().item<float>(), 2.0f * 12.0f);
}

TEST(LabelChannels, SupportRestrictsPlanes) {
  auto x = torch::zeros({1, 1, 2, 2, 2});
  x[0][0][1][1][1] = 0.5;
  x[0][0][0][0][0] = -0.25;
  const auto y = support_label_channels(x, torch::tensor({2}, torch::kLong), 3);
  EXPECT_EQ(y[0][3].sum().item<float>(), 2.0f);
  EXPECT_EQ(y[0][3][1][1][1].item<float>(), 1.0f);
  EXPECT_EQ(y[0][1].sum().item<float>(), 0.0f);
  EXPECT_TRUE(y[0][0].equal(x[0][0]));
}

TEST(GradientPenalty, LinearCriticHasConstantGradient) {
  const auto w = torch::tensor({0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.4}, torch::kFloat64).reshape({1, 1, 2, 2, 2});
  StarDiscriminatorFn D = [&](const torch::Tensor& v) {
    return StarDiscriminatorOutput{(v * w).flatten(1).sum(1, true), torch::zeros({v.size(0), 4}, v.options())};
  };
  const auto real = torch::randn({3, 1, 2, 2, 2}, torch::kFloat64);
  const auto fake = torch::randn({3, 1, 2, 2, 2}, torch::kFloat64);
  double norm = 0.0;
  for (double v : {0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.4}) norm += v * v;
  const double expected = std::pow(std::sqrt(norm) - 1.0, 2);
  EXPECT_NEAR(gradient_penalty(D, real, fake).item<double>(), expected, 1e-12);

  const StarGanLambdas l{1.0, 10.0, 10.0};
  const double critic = -(real * w).sum().item<double>() / 3 + (fake * w).sum().item<double>() / 3;
  const auto d = stargan_d_loss(D, real, fake, torch::tensor({0, 1, 2}, torch::kLong), l);
  EXPECT_NEAR(d.item<double>(), critic + 10.0 * expected + std::log(4.0), 1e-12);
}

TEST(GradientPenalty, InterpolatesPerRow) {
  StarDiscriminatorFn D = [](const torch::Tensor& v) {
    return StarDiscriminatorOutput{0.5 * v.pow(2).flatten(1).sum(1, true), torch::zeros({v.size(0), 4}, v.options())};
  };
  const auto real = torch::randn({4, 1, 2, 3, 2}, torch::kFloat64);
  const auto fake = torch::randn({4, 1, 2, 3, 2}, torch::kFloat64);
  auto g1 = make_generator(7);
  auto g2 = make_generator(7);
  const auto got = gradient_penalty(D, real, fake, &g1).item<double>();
  const auto a = torch::rand({4, 1, 1, 1, 1}, g2, torch::kFloat64);
  const auto x_hat = a * real + (1 - a) * fake;
  double expected = 0.0;
  for (int b = 0; b < 4; ++b) {
    const double n = std::sqrt(x_hat[b].pow(2).sum().item<double>());
    expected += (n - 1.0) * (n - 1.0) / 4;
  }
  EXPECT_NEAR(got, expected, 1e-12);
}

TEST(GanNetworks, GeneratorsPreserveShape) {
  for (const auto& s : {Shape{16, 16, 16}, Shape{12, 14, 12}, Shape{9, 7, 5}}) {
    const auto x = torch::randn({2, 1, s.nz, s.ny, s.nx});
    UNetGenerator3d u(1, 1, 4, 3);
    EXPECT_EQ(u->forward(x).sizes(), x.sizes());
    ResnetGenerator3d r(1, 1, 4, 1, false);
    EXPECT_EQ(r->forward(x).sizes(), x.sizes());
  }
}

TEST(GanNetworks, ResidualGeneratorsStartAsIdentity) {
  const auto x = torch::rand({2, 1, 8, 8, 8}) * 2 - 1;
  UNetGenerator3d u(1, 1, 4, 3, true);
  EXPECT_TRUE(torch::allclose(u->forward(x), x));
  ResnetGenerator3d r(5, 1, 4, 1, true, true);
  const auto withlabels = torch::cat({x, torch::ones({2, 4, 8, 8, 8})}, 1);
  EXPECT_TRUE(torch::allclose(r->forward(withlabels), x));
}

TEST(GanNetworks, StarDiscriminatorHeads) {
  StarDiscriminator3d d(Shape{24, 28, 24}, 4, 3, 4);
  const auto out = d->forward(torch::randn({3, 1, 24, 28, 24}));
  EXPECT_EQ(out.cls.sizes(), (std::vector<std::int64_t>{3, 4}));
  EXPECT_EQ(out.src.size(0), 3);
  EXPECT_EQ(out.src.size(1), 1);
}

TEST(GanModel, TransferRangeAndMetadata) {
  const auto d = tiny_data(2);
  for (auto kind : {GanKind::Pix2Pix, GanKind::CycleGan, GanKind::StarGan}) {
    GanModel m(tiny_config(kind), d.domains, d.shape());
    const auto src = of_domain(d, "fsl-1");
    Mask mask(d.shape());
    mask.voxels[5] = 0;
    const auto out = m.transfer(src, d.domain("spm-0"), &mask);
    ASSERT_EQ(out.size(), src.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_EQ(out[i].domain, d.domain("spm-0"));
      EXPECT_EQ(out[i].group_id, src[i]->group_id);
      EXPECT_EQ(out[i].shape, d.shape());
      EXPECT_EQ(out[i].voxels[5], 0.0f);
      for (float v : out[i].voxels) ASSERT_LE(std::abs(v), 1.0f);
    }
  }
}

TEST(GanModel, DirectionMismatch) {
  const auto d = tiny_data(2);
  GanModel p(tiny_config(GanKind::Pix2Pix), d.domains, d.shape());
  expect_error(ErrorCode::DirectionMismatch, [&] { gan_transfer(p, *of_domain(d, "spm-0")[0], d.domain("fsl-1")); });
  expect_error(ErrorCode::DirectionMismatch, [&] { gan_transfer(p, *of_domain(d, "fsl-0")[0], d.domain("spm-0")); });
  GanModel c(tiny_config(GanKind::CycleGan), d.domains, d.shape());
  EXPECT_NO_THROW(gan_transfer(c, *of_domain(d, "spm-0")[0], d.domain("fsl-1")));
  expect_error(ErrorCode::DirectionMismatch, [&] { gan_transfer(c, *of_domain(d, "spm-1")[0], d.domain("spm-0")); });
  GanModel s(tiny_config(GanKind::StarGan), d.domains, d.shape());
  EXPECT_NO_THROW(gan_transfer(s, *of_domain(d, "spm-1")[0], d.domain("fsl-0")));
  expect_error(ErrorCode::UnknownDomain, [&] { gan_transfer(s, d.maps[0], DomainLabel{7, "x"}); });
}

TEST(GanModel, ConfigRequiresDirection) {
  const auto d = tiny_data(2);
  auto c = tiny_config(GanKind::Pix2Pix);
  c.target_domain.clear();
  expect_error(ErrorCode::ConfigInvalid, [&] { GanModel(c, d.domains, d.shape()); });
  c = tiny_config(GanKind::CycleGan);
  c.target_domain = "nope";
  expect_error(ErrorCode::UnknownDomain, [&] { GanModel(c, d.domains, d.shape()); });
}

TEST(GanModel, ZeroEpochsKeepsWeights) {
  const auto d = tiny_data(2);
  for (auto kind : {GanKind::Pix2Pix, GanKind::CycleGan, GanKind::StarGan}) {
    auto c = tiny_config(kind);
    c.epochs = 0;
    GanModel m(c, d.domains, d.shape());
    const auto snap = clone_parameters(m.all());
    const auto r = train_gan(m, d);
    EXPECT_EQ(r.steps, 0);
    EXPECT_TRUE(parameters_equal(m.all(), snap));
  }
}

TEST(GanModel, PairingUnavailable) {
  auto d = tiny_data(2);
  const auto groups = d.groups();
  d.maps.erase(std::remove_if(d.maps.begin(), d.maps.end(),
                              [&](const StatMap& m) {
                                return (m.group_id == groups[0] && m.domain.name == "spm-0") ||
                                       (m.group_id == groups[1] && m.domain.name == "fsl-1");
                              }),
               d.maps.end());
  d.reindex();
  expect_error(ErrorCode::PairingUnavailable,
               [&] { paired_examples(d, d.domain("fsl-1").index, d.domain("spm-0").index); });
  GanModel m(tiny_config(GanKind::Pix2Pix), d.domains, d.shape());
  expect_error(ErrorCode::PairingUnavailable, [&] { train_gan(m, d); });
  EXPECT_EQ(paired_examples(d, d.domain("fsl-0").index, d.domain("spm-1").index).size(), 2u);
}

TEST(GanModel, SaveLoadRoundTrip) {
  TempDir dir;
  const auto d = tiny_data(2);
  for (auto kind : {GanKind::Pix2Pix, GanKind::CycleGan, GanKind::StarGan}) {
    GanModel m(tiny_config(kind), d.domains, d.shape());
    const auto path = dir.path / (to_string(kind) + ".json");
    m.save(path);
    const auto j = nlohmann::json::parse(read_file(path));
    for (const char* k : {"framework", "K", "domains", "lambdas", "epochs", "lr", "betas", "batch", "seed", "arch"}) {
      EXPECT_TRUE(j.contains(k)) << k;
    }
    EXPECT_EQ(j.at("direction").is_object(), kind != GanKind::StarGan);
    auto back = GanModel::load(path);
    EXPECT_EQ(back.kind(), kind);
    const auto src = of_domain(d, "fsl-1");
    EXPECT_EQ(back.transfer(src, d.domain("spm-0"))[0].voxels, m.transfer(src, d.domain("spm-0"))[0].voxels);
  }
}

TEST(GanConfigJson, RoundTripAndErrors) {
  auto c = tiny_config(GanKind::CycleGan);
  c.lambda_cyc = 5.0;
  const auto back = gan_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  const auto d = gan_config_from_json({{"kind", "stargan"}});
  EXPECT_DOUBLE_EQ(d.lambda_rec, 100.0);
  EXPECT_DOUBLE_EQ(d.lambda_cyc, 10.0);
  EXPECT_DOUBLE_EQ(d.lambda_cls, 1.0);
  EXPECT_DOUBLE_EQ(d.beta1, 0.5);
  EXPECT_DOUBLE_EQ(d.lr, 1e-4);
  expect_error(ErrorCode::ConfigInvalid, [] { gan_config_from_json({{"kind", "vae"}}); });
  expect_error(ErrorCode::ConfigInvalid, [] { gan_config_from_json({{"kind", "stargan"}, {"epochs", -1}}); });
  expect_error(ErrorCode::ConfigInvalid, [] { gan_config_from_json({{"kind", "pix2pix"}}); });
}

TEST(GanTraining, CycleSmokeReducesCycleLoss) {
  const auto d = tiny_data(8);
  auto c = tiny_config(GanKind::CycleGan);
  c.epochs = 6;
  c.lr = 1e-3;
  c.arch.residual = false;
  c.batch = 4;
  GanModel m(c, d.domains, d.shape());
  int logged = 0;
  const auto r = train_gan(m, d, [&](const GanLossRecord&) { ++logged; });
  EXPECT_EQ(logged, 6 * batches_per_epoch(8, 4));
  EXPECT_EQ(r.steps, logged);
  ASSERT_EQ(r.epoch_aux_loss.size(), 6u);
  EXPECT_LT(r.epoch_aux_loss.back(), r.epoch_aux_loss.front());
}

TEST(GanTraining, DomainSetMismatch) {
  const auto d = tiny_data(2);
  auto other = d.domains;
  other[0].name = "elsewhere";
  GanModel m(tiny_config(GanKind::StarGan), other, d.shape());
  expect_error(ErrorCode::DomainSetMismatch, [&] { train_gan(m, d); });
}
