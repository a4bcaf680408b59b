#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>

#include "stylemap/classifier.hpp"
#include "stylemap/synthetic.hpp"
#include "stylemap/tensor_utils.hpp"
#include "test_util.hpp"

using namespace stylemap;

namespace {

ClassifierArch small_arch(const Shape& s, int K = 4) {
  ClassifierArch a;
  a.channels = {4, 8, 8, 16, 16};
  a.input_shape = s;
  a.K = K;
  return a;
}

Dataset small_data(int groups = 24, std::uint64_t seed = 1) {
  SyntheticConfig c;
  c.n_groups = groups;
  c.shape = {16, 16, 16};
  c.content_seed = seed;
  return make_synthetic_dataset(c);
}

std::vector<const StatMap*> pointers(const Dataset& d) {
  std::vector<const StatMap*> p;
  for (const auto& m : d.maps) p.push_back(&m);
  return p;
}

std::int64_t brute_latent(const Shape& s, std::int64_t c) {
  std::int64_t x = s.nx, y = s.ny, z = s.nz;
  for (int i = 0; i < 5; ++i) {
    x = (x + 1) / 2;
    y = (y + 1) / 2;
    z = (z + 1) / 2;
  }
  return c * x * y * z;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb + 1e-30);
}

/// One trained small classifier shared by the tests that need weights.
Classifier& trained() {
  static Classifier clf = [] {
    auto d = small_data(30);
    Classifier c(small_arch(d.shape()), d.domains, 5);
    ClassifierHParams hp;
    hp.epochs = 8;
    hp.batch = 16;
    hp.lr = 1e-3;
    hp.seed = 5;
    train_classifier(c, d, nullptr, hp);
    return c;
  }();
  return clf;
}

}  // namespace

TEST(ClassifierArch, FullShapeLatentIs4096) {
  ClassifierArch a;
  a.input_shape = {48, 56, 48};
  EXPECT_EQ(a.latent_dim(), 4096);
  Classifier clf(a, {{0, "a"}, {1, "b"}, {2, "c"}, {3, "d"}}, 0);
  StatMap m(a.input_shape, 0.1f);
  m.normalized = true;
  const auto out = clf.forward(m);
  EXPECT_EQ(out.latent.size(1), 4096);
  EXPECT_EQ(out.logits.size(1), 4);
}

TEST(ClassifierArch, DeskShapeLatentIs512) {
  ClassifierArch a;
  a.input_shape = {24, 28, 24};
  EXPECT_EQ(a.latent_dim(), 512);
}

TEST(ClassifierArch, LatentFormulaSweep) {
  for (int nx : {5, 16, 23, 33})
    for (int ny : {4, 17, 28})
      for (int nz : {7, 24}) {
        const Shape s{nx, ny, nz};
        EXPECT_EQ(classifier_latent_dim(s, 512, 5), brute_latent(s, 512));
      }
  for (const Shape& s : {Shape{9, 13, 6}, Shape{16, 16, 16}, Shape{17, 5, 11}}) {
    Classifier clf(small_arch(s), {{0, "a"}, {1, "b"}, {2, "c"}, {3, "d"}}, 1);
    StatMap m(s, 0.2f);
    const auto out = clf.forward(m);
    EXPECT_EQ(out.latent.size(1), brute_latent(s, 16));
    EXPECT_EQ(out.stages.size(), 5u);
  }
}

TEST(Classifier, InferenceDeterministic) {
  auto d = small_data(2);
  Classifier clf(small_arch(d.shape()), d.domains, 3);
  const auto a = clf.forward(d.maps[0]);
  const auto b = clf.forward(d.maps[0]);
  EXPECT_TRUE(torch::equal(a.logits, b.logits));
  EXPECT_TRUE(torch::equal(a.latent, b.latent));
}

TEST(Classifier, ShapeMismatch) {
  Classifier clf(small_arch({16, 16, 16}), {{0, "a"}, {1, "b"}, {2, "c"}, {3, "d"}}, 3);
  StatMap m(Shape{16, 16, 15});
  expect_error(ErrorCode::ShapeMismatch, [&] { clf.forward(m); });
}

TEST(Classifier, NoWeightsBeforeTraining) {
  auto d = small_data(2);
  Classifier clf(small_arch(d.shape()), d.domains, 3);
  expect_error(ErrorCode::NoWeights, [&] { clf.predict_domain(d.maps[0]); });
}

TEST(Classifier, UntrainedAccuracyNearChance) {
  auto d = small_data(10);
  const auto p = pointers(d);
  double total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Classifier clf(small_arch(d.shape()), d.domains, seed);
    total += classifier_accuracy(clf, p);
  }
  EXPECT_GE(total / 5, 0.10);
  EXPECT_LE(total / 5, 0.40);
}

TEST(Classifier, ZeroEpochsKeepsInitialization) {
  auto d = small_data(4);
  Classifier clf(small_arch(d.shape()), d.domains, 3);
  const auto snap = clone_parameters(*clf.net());
  ClassifierHParams hp;
  hp.epochs = 0;
  train_classifier(clf, d, nullptr, hp);
  EXPECT_TRUE(parameters_equal(*clf.net(), snap));
}

TEST(Classifier, SingleDomainRejected) {
  auto d = small_data(4);
  Dataset one = d;
  one.maps.erase(std::remove_if(one.maps.begin(), one.maps.end(), [](const auto& m) { return m.domain.index != 0; }),
                 one.maps.end());
  one.reindex();
  Classifier clf(small_arch(d.shape()), d.domains, 3);
  expect_error(ErrorCode::SingleDomainDataset, [&] { train_classifier(clf, one, nullptr, {}); });
}

TEST(Classifier, TrainingReducesLossAndLearns) {
  auto& clf = trained();
  const auto& m = clf.metrics();
  ASSERT_EQ(m.epoch_loss.size(), 8u);
  EXPECT_LT(m.epoch_loss.back(), m.epoch_loss.front());
  const auto test = small_data(12, 99);
  EXPECT_GE(classifier_accuracy(clf, pointers(test)), 0.7);
}

TEST(Classifier, LossLoggerCalledPerStep) {
  auto d = small_data(9);
  Classifier clf(small_arch(d.shape()), d.domains, 3);
  ClassifierHParams hp;
  hp.epochs = 2;
  hp.batch = 8;
  int calls = 0;
  train_classifier(clf, d, nullptr, hp, [&](int, int, double) { ++calls; });
  EXPECT_EQ(calls, 2 * batches_per_epoch(d.maps.size(), 8));
}

TEST(Classifier, PredictDistributionsSumToOne) {
  const auto d = small_data(3, 50);
  const auto dists = trained().predict(pointers(d));
  ASSERT_EQ(dists.size(), d.maps.size());
  for (const auto& p : dists) {
    double s = 0;
    for (double v : p.probs) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  const auto [label, dist] = trained().predict_domain(d.maps[0]);
  EXPECT_EQ(label.index, dist.argmax());
}

TEST(Classifier, LatentsDeterministicAndSized) {
  const auto d = small_data(2, 51);
  const auto a = trained().extract_latent(d.maps[0]);
  const auto b = trained().extract_latent(d.maps[0]);
  EXPECT_EQ(a.payload, b.payload);
  EXPECT_EQ(static_cast<std::int64_t>(a.payload.size()), trained().arch().latent_dim());
  EXPECT_EQ(a.kind, CondKind::Latent);
}

TEST(Classifier, LatentsCloserWithinStyle) {
  const auto d = small_data(21, 52);
  const auto groups = d.groups();
  const int fsl1 = d.domain("fsl-1").index, spm0 = d.domain("spm-0").index;
  double same = 0, far = 0;
  for (int i = 0; i < 20; ++i) {
    const auto a = trained().extract_latent(*d.find(groups[i], fsl1)).payload;
    const auto b = trained().extract_latent(*d.find(groups[i + 1], fsl1)).payload;
    const auto c = trained().extract_latent(*d.find(groups[i + 1], spm0)).payload;
    same += cosine(a, b);
    far += cosine(a, c);
  }
  EXPECT_GT(same / 20, far / 20);
}

TEST(Classifier, SaveLoadRoundTrip) {
  TempDir dir;
  trained().save(dir.path / "clf.json");
  const auto j = nlohmann::json::parse(read_file(dir.path / "clf.json"));
  for (const char* k : {"arch", "K", "D", "input_shape", "seed", "metrics"}) EXPECT_TRUE(j.contains(k)) << k;
  const auto back = Classifier::load(dir.path / "clf.json");
  EXPECT_TRUE(back.trained());
  const auto d = small_data(2, 53);
  EXPECT_TRUE(torch::equal(back.forward(d.maps[1]).logits, trained().forward(d.maps[1]).logits));
}

TEST(Condition, OneHot) {
  const auto c = one_hot_condition({2, "spm-1"}, 4);
  EXPECT_EQ(c.payload, (std::vector<float>{0, 0, 1, 0}));
  EXPECT_EQ(c.kind, CondKind::OneHot);
  expect_error(ErrorCode::UnknownLabel, [] { one_hot_condition({4, "x"}, 4); });
}
