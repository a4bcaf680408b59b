#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stylemap/eval.hpp"
#include "stylemap/synthetic.hpp"
#include "test_util.hpp"

using namespace stylemap;

namespace {

const Dataset& data() {
  static const Dataset d = [] {
    SyntheticConfig c;
    c.n_groups = 24;
    c.shape = {16, 16, 16};
    c.content_seed = 8;
    return make_synthetic_dataset(c);
  }();
  return d;
}

Classifier small_classifier(std::uint64_t seed = 1) {
  ClassifierArch a;
  a.channels = {4, 8, 8, 16, 16};
  a.input_shape = data().shape();
  return Classifier(a, data().domains, seed);
}

std::vector<TransferCase> cases_with_target(int n, int target) {
  std::vector<TransferCase> out;
  for (int i = 0; i < n; ++i) {
    TransferCase c;
    c.target_domain = data().domains[target];
    c.generated = data().maps[i];
    out.push_back(c);
  }
  return out;
}

}  // namespace

TEST(Directions, CanonicalAndParse) {
  const auto d = canonical_directions();
  ASSERT_EQ(d.size(), 4u);
  EXPECT_EQ(d[0], (Direction{"fsl-1", "spm-0"}));
  EXPECT_EQ(d[1], (Direction{"spm-0", "fsl-1"}));
  EXPECT_EQ(d[2], (Direction{"fsl-1", "spm-1"}));
  EXPECT_EQ(d[3], (Direction{"fsl-1", "fsl-0"}));
  EXPECT_EQ(parse_direction("a->b"), (Direction{"a", "b"}));
  EXPECT_EQ(parse_direction("a:b"), (Direction{"a", "b"}));
  expect_error(ErrorCode::ConfigInvalid, [] { parse_direction("ab"); });
}

TEST(TransferAccuracy, StubPredictors) {
  const auto cases = cases_with_target(10, 2);
  EXPECT_DOUBLE_EQ(transfer_accuracy(cases, [](auto maps) { return std::vector<int>(maps.size(), 2); }), 1.0);
  EXPECT_DOUBLE_EQ(transfer_accuracy(cases, [](auto maps) { return std::vector<int>(maps.size(), 0); }), 0.0);
  const auto seven = [](std::span<const StatMap* const> maps) {
    std::vector<int> p(maps.size(), 2);
    p[0] = p[4] = p[9] = 1;
    return p;
  };
  EXPECT_DOUBLE_EQ(transfer_accuracy(cases, seven), 0.7);
  expect_error(ErrorCode::EmptySet, [&] { transfer_accuracy(std::vector<TransferCase>{}, seven); });
}

TEST(Evaluate, IdentityEqualsInitial) {
  const auto dirs = canonical_directions();
  auto clf = small_classifier();
  clf.mark_trained({});
  EvalOptions o;
  o.seed = 4;
  const auto r = evaluate_transfers(identity_model(), data(), dirs, &clf, o);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.n, 20);
    EXPECT_DOUBLE_EQ(row.mean_r, row.initial_r);
    EXPECT_DOUBLE_EQ(row.se_r, row.initial_se_r);
    EXPECT_DOUBLE_EQ(row.mean_mse, row.initial_mse);
    EXPECT_GT(row.mean_r, 0.0);
    EXPECT_LT(row.mean_r, 100.0);
  }
  EXPECT_DOUBLE_EQ(r.inception_score, r.initial_inception_score);
  EXPECT_GE(r.inception_score, 1.0);
}

TEST(Evaluate, OracleIsPerfect) {
  const auto dirs = canonical_directions();
  const auto r = evaluate_transfers(oracle_model(data()), data(), dirs, nullptr, {});
  for (const auto& row : r.rows) {
    EXPECT_NEAR(row.mean_r, 100.0, 1e-9);
    EXPECT_NEAR(row.se_r, 0.0, 1e-9);
    EXPECT_EQ(row.mean_mse, 0.0);
    EXPECT_EQ(row.accuracy, -1.0);
  }
  EXPECT_EQ(r.inception_score, -1.0);
}

TEST(Evaluate, RowMatchesBruteForce) {
  const Direction dirs[] = {{"fsl-1", "spm-0"}};
  EvalOptions o;
  o.n_images = 6;
  o.seed = 11;
  const auto r = evaluate_transfers(identity_model(), data(), dirs, nullptr, o);
  const auto& row = r.rows[0];
  ASSERT_EQ(row.groups.size(), 6u);
  const int s = data().domain("fsl-1").index, t = data().domain("spm-0").index;
  std::vector<double> rs, es;
  for (const auto& g : row.groups) {
    const auto& a = data().find(g, s)->voxels;
    const auto& b = data().find(g, t)->voxels;
    rs.push_back(100.0 * oracle::pearson(a, b, &data().mask));
    es.push_back(oracle::mse(a, b, &data().mask));
  }
  EXPECT_NEAR(row.initial_r, oracle::mean(rs), 1e-8);
  EXPECT_NEAR(row.initial_se_r, oracle::standard_error(rs), 1e-8);
  EXPECT_NEAR(row.initial_mse, oracle::mean(es), 1e-10);
}

TEST(Evaluate, GroupSelectionSeeded) {
  const Direction dirs[] = {{"fsl-1", "spm-0"}};
  EvalOptions o;
  o.n_images = 5;
  o.seed = 1;
  const auto a = evaluate_transfers(identity_model(), data(), dirs, nullptr, o);
  const auto b = evaluate_transfers(identity_model(), data(), dirs, nullptr, o);
  EXPECT_EQ(a.rows[0].groups, b.rows[0].groups);
  bool differs = false;
  for (std::uint64_t seed = 2; seed < 8 && !differs; ++seed) {
    o.seed = seed;
    differs = evaluate_transfers(identity_model(), data(), dirs, nullptr, o).rows[0].groups != a.rows[0].groups;
  }
  EXPECT_TRUE(differs);
}

TEST(Evaluate, InsufficientTestData) {
  const Direction dirs[] = {{"fsl-1", "spm-0"}};
  EvalOptions o;
  o.n_images = 25;
  expect_error(ErrorCode::InsufficientTestData, [&] { evaluate_transfers(identity_model(), data(), dirs, nullptr, o); });
  const Direction bad[] = {{"fsl-1", "afni"}};
  expect_error(ErrorCode::UnknownDomain, [&] { evaluate_transfers(identity_model(), data(), bad, nullptr, {}); });
}

TEST(Evaluate, DenormalizedIdentityStillInitial) {
  const Direction dirs[] = {{"spm-0", "fsl-1"}};
  EvalOptions o;
  o.denormalized = true;
  const auto r = evaluate_transfers(identity_model(), data(), dirs, nullptr, o);
  EXPECT_DOUBLE_EQ(r.rows[0].mean_r, r.rows[0].initial_r);
}

TEST(CrossTask, MatchesDirectEvaluation) {
  const auto dirs = canonical_directions();
  EvalOptions o;
  o.seed = 3;
  const auto direct = evaluate_transfers(identity_model(), data(), dirs, nullptr, o);
  const auto cross = cross_task_evaluation(identity_model(), data().domain_names(), "other-task", data(), dirs, nullptr, o);
  EXPECT_EQ(cross.train_task, "other-task");
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    EXPECT_EQ(cross.rows[i].mean_r, direct.rows[i].mean_r);
    EXPECT_EQ(cross.rows[i].groups, direct.rows[i].groups);
  }
  auto names = data().domain_names();
  std::swap(names[0], names[1]);
  expect_error(ErrorCode::DomainSetMismatch,
               [&] { cross_task_evaluation(identity_model(), names, "x", data(), dirs, nullptr, o); });
}

TEST(Reports, CsvJsonAndTable) {
  TempDir dir;
  auto r = evaluate_transfers(identity_model(), data(), canonical_directions(), nullptr, {});
  r.model = "identity";
  const auto csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "source,target,n,mean_r,se_r,mean_mse,se_mse,initial_r,initial_mse");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto [c, j] = write_report(r, dir.path / "rep");
  EXPECT_EQ(read_file(c), csv);
  const auto parsed = nlohmann::json::parse(read_file(j));
  EXPECT_EQ(parsed.at("directions").size(), 4u);
  const MetricReport reps[] = {r};
  const auto table = format_table(reps);
  EXPECT_NE(table.find("Initial"), std::string::npos);
  EXPECT_NE(table.find("identity"), std::string::npos);
  EXPECT_NE(table.find("fsl-1->spm-0"), std::string::npos);
}

TEST(LayerCorrelation, IdenticalPipelinesAreOne) {
  const auto clf = small_classifier(2);
  const Direction pairs[] = {{"fsl-1", "fsl-1"}, {"fsl-1", "spm-0"}};
  const auto t = layerwise_feature_correlation(clf, data(), pairs, 5);
  EXPECT_EQ(t.layers, 4);
  ASSERT_EQ(t.r.size(), 2u);
  for (int l = 0; l < 3; ++l) EXPECT_NEAR(t.r[0][l], 100.0, 1e-6);
  EXPECT_EQ(t.r[0][3], 0.0);  // stage 4 is a single voxel at 16^3
  for (int l = 0; l < 3; ++l) {
    const double v = t.r[1][l];
    EXPECT_LT(v, 100.0);
    EXPECT_GT(v, -100.0);
  }
  const auto csv = layer_table_csv(t);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "source,target,layer1,layer2,layer3,layer4");
}
