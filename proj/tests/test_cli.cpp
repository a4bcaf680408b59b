#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(STYLEMAP_BIN) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "run_record.json") {
      m[fs::relative(e.path(), root).string()] = read_file(e.path());
    }
  }
  return m;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

/// One generated dataset and a few tiny checkpoints shared by the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    const auto r = run("generate-data --out " + (root() / "data").string() +
                           " --n-groups 6 --shape 16,16,16 --seed 3 --task-id taskA",
                       root());
    ASSERT_EQ(r.code, 0) << r.err;
    manifest_ = trim(r.out);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static fs::path root() { return dir_->path; }
  static fs::path out_dir() { return root() / "out"; }

  static fs::path config(const std::string& name, const json& model) {
    const auto p = root() / (name + ".json");
    write_json(p, {{"data", {{"manifest", manifest_}}}, {"model", model}, {"seed", 1}, {"output_dir", out_dir()}});
    return p;
  }

  static json classifier_model(int epochs) {
    return {{"kind", "classifier"}, {"channels", {2, 2, 2, 2, 2}}, {"epochs", epochs}, {"batch", 4}};
  }

  static json ddpm_model(const std::string& cond) {
    return {{"kind", "ddpm"}, {"T", 10}, {"base_channels", 8}, {"epochs", 1}, {"batch", 4}, {"cond_kind", cond}};
  }

  static std::string volume(const std::string& domain) {
    const auto m = json::parse(read_file(manifest_));
    for (const auto& e : m.at("entries")) {
      if (e.at("domain") == domain) return (fs::path(manifest_).parent_path() / e.at("path").get<std::string>()).string();
    }
    return {};
  }

  static const std::string& classifier_ckpt() {
    static const std::string p = [] {
      const auto r = run("train --config " + config("clf", classifier_model(1)).string() + " --name clf", root());
      EXPECT_EQ(r.code, 0) << r.err;
      return trim(r.out);
    }();
    return p;
  }

  static const std::string& ddpm_ckpt() {
    static const std::string p = [] {
      const auto r = run("train --config " + config("dm", ddpm_model("one-hot")).string() + " --name dm", root());
      EXPECT_EQ(r.code, 0) << r.err;
      return trim(r.out);
    }();
    return p;
  }

  static TempDir* dir_;
  static std::string manifest_;
};

TempDir* Cli::dir_ = nullptr;
std::string Cli::manifest_;

}  // namespace

TEST_F(Cli, GenerateWritesManifest) {
  ASSERT_TRUE(fs::exists(manifest_));
  const auto m = json::parse(read_file(manifest_));
  EXPECT_EQ(m.at("entries").size(), 24u);
  EXPECT_EQ(m.at("task_id"), "taskA");
  EXPECT_TRUE(fs::exists(root() / "data" / "run_record.json"));
}

TEST_F(Cli, GenerateIsReproducible) {
  TempDir other;
  const auto r = run("generate-data --out " + (other.path / "data").string() +
                         " --n-groups 6 --shape 16,16,16 --seed 3 --task-id taskA",
                     other.path);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(tree_contents(other.path / "data"), tree_contents(root() / "data"));
}

TEST_F(Cli, GenerateUnwritableOutputFails) {
  const auto r = run("generate-data --out /proc/forbidden/data --n-groups 2 --shape 8,8,8", root());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("IoFailure"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownKindNamesField) {
  const auto r = run("train --config " + config("bad", {{"kind", "vae"}}).string(), root());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("ConfigInvalid"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("model.kind"), std::string::npos) << r.err;
}

TEST_F(Cli, ZeroEpochClassifierCheckpoint) {
  const auto r = run("train --config " + config("clf0", classifier_model(0)).string() + " --name clf0", root());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ckpt = json::parse(read_file(trim(r.out)));
  EXPECT_EQ(ckpt.at("task_id"), "taskA");
  EXPECT_TRUE(ckpt.at("trained").get<bool>());
  EXPECT_EQ(read_file(out_dir() / "logs" / "clf0_loss.csv"), "epoch,batch,loss\n");
  EXPECT_TRUE(fs::exists(out_dir() / "logs" / "train_clf0.json"));
}

TEST_F(Cli, LossRowsPerStep) {
  const auto ckpt = classifier_ckpt();
  ASSERT_TRUE(fs::exists(ckpt));
  const auto split = json::parse(read_file(out_dir() / "checkpoints" / "clf_split.json"));
  const std::size_t n_train = 4 * split.at("train_groups").size();
  std::size_t expected = (n_train + 3) / 4;
  if (n_train % 4 == 1) --expected;
  const auto csv = read_file(out_dir() / "logs" / "clf_loss.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), expected + 1);
}

TEST_F(Cli, EpochOverrideWins) {
  const auto r = run("train --config " + config("clf_o", classifier_model(3)).string() + " --epochs 0 --name clf_o",
                     root());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(out_dir() / "logs" / "clf_o_loss.csv"), "epoch,batch,loss\n");
}

TEST_F(Cli, DiffusionTransferWritesVolume) {
  const auto ckpt = ddpm_ckpt();
  ASSERT_FALSE(ckpt.empty());
  const auto r = run("transfer --checkpoint " + ckpt + " --source " + volume("fsl-1") +
                         " --target spm-0 --t-start 5 --output-dir " + out_dir().string(),
                     root());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto path = trim(r.out);
  ASSERT_TRUE(fs::exists(path));
  EXPECT_NE(read_file(path).find("spm-0"), std::string::npos);
}

TEST_F(Cli, CondKindMismatch) {
  const auto r = run("transfer --checkpoint " + ddpm_ckpt() + " --source " + volume("fsl-1") +
                         " --target spm-0 --cond latent --output-dir " + out_dir().string(),
                     root());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("CondKindMismatch"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownTargetDomain) {
  const auto r = run("transfer --checkpoint " + ddpm_ckpt() + " --source " + volume("fsl-1") +
                         " --target afni --output-dir " + out_dir().string(),
                     root());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("UnknownDomain"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("spm-0"), std::string::npos) << r.err;
}

TEST_F(Cli, LatentTransferChecksPoolSize) {
  const auto r = run("train --config " + config("dml", ddpm_model("latent")).string() + " --classifier " +
                         classifier_ckpt() + " --name dml",
                     root());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ckpt = trim(r.out);
  const std::string base = "transfer --checkpoint " + ckpt + " --source " + volume("fsl-1") +
                           " --target spm-0 --t-start 3 --output-dir " + out_dir().string();
  const auto big = run(base + " --pool " + manifest_ + " --n-targets 1000", root());
  EXPECT_NE(big.code, 0);
  EXPECT_NE(big.err.find("NTooLarge"), std::string::npos) << big.err;
  const auto nopool = run(base, root());
  EXPECT_NE(nopool.code, 0);
  EXPECT_NE(nopool.err.find("EmptyPool"), std::string::npos) << nopool.err;
  const auto ok = run(base + " --pool " + manifest_ + " --n-targets 2", root());
  EXPECT_EQ(ok.code, 0) << ok.err;
}

TEST_F(Cli, IdentityEvaluationMatchesInitial) {
  const auto r = run("evaluate --identity --manifest " + manifest_ + " --classifier " + classifier_ckpt() +
                         " --n-images 3 --name ident --output-dir " + out_dir().string(),
                     root());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Initial"), std::string::npos);
  std::istringstream csv(read_file(out_dir() / "reports" / "ident.csv"));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 9u);
    EXPECT_EQ(f[3], f[7]);
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}

TEST_F(Cli, EvaluateNeedsClassifier) {
  const auto r = run("evaluate --identity --manifest " + manifest_ + " --n-images 3 --output-dir " +
                         out_dir().string(),
                     root());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("missing --classifier"), std::string::npos) << r.err;
}

TEST_F(Cli, LayerCorrelationTable) {
  const auto r = run("evaluate --layer-corr --manifest " + manifest_ + " --classifier " + classifier_ckpt() +
                         " --name lc --output-dir " + out_dir().string(),
                     root());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(out_dir() / "reports" / "lc_layers.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "source,target,layer1,layer2,layer3,layer4");
}

TEST_F(Cli, MissingRequiredOption) {
  const auto r = run("transfer --checkpoint x.json", root());
  EXPECT_NE(r.code, 0);
}
