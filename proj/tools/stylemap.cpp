#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stylemap/classifier.hpp"
#include "stylemap/dataset.hpp"
#include "stylemap/diffusion.hpp"
#include "stylemap/eval.hpp"
#include "stylemap/experiment.hpp"
#include "stylemap/gan.hpp"
#include "stylemap/rng.hpp"
#include "stylemap/synthetic.hpp"
#include "stylemap/tensor_utils.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stylemap;

namespace {

Shape parse_shape(const std::string& s) {
  Shape out;
  char c1 = 0, c2 = 0;
  std::istringstream is(s);
  if (!(is >> out.nx >> c1 >> out.ny >> c2 >> out.nz) || c1 != ',' || c2 != ',' || !out.positive()) {
    throw Error(ErrorCode::ConfigInvalid, "shape '" + s + "' must look like nx,ny,nz");
  }
  return out;
}

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return read_json_file(path);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path + ": " + e.what());
  }
}

Dataset load_data(const ExperimentConfig& cfg) {
  if (cfg.manifest) return load_dataset(*cfg.manifest);
  if (cfg.synthetic) return make_synthetic_dataset(*cfg.synthetic);
  throw Error(ErrorCode::ConfigInvalid, "field 'data': no manifest or synthetic config given");
}

std::uint64_t split_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, "data"); }

fs::path output_root(const ExperimentConfig& cfg) {
  return cfg.output_dir.empty() ? default_output_root() : fs::path(cfg.output_dir);
}

const DomainLabel& find_domain(const std::vector<DomainLabel>& domains, const std::string& name) {
  for (const auto& d : domains) {
    if (d.name == name) return d;
  }
  std::string valid;
  for (const auto& d : domains) valid += (valid.empty() ? "" : ", ") + d.name;
  throw Error(ErrorCode::UnknownDomain, "unknown domain '" + name + "' (valid: " + valid + ")");
}

void stamp_task(const fs::path& manifest, const std::string& task_id) {
  auto j = read_json_file(manifest);
  j["task_id"] = task_id;
  write_json_atomic(j, manifest);
}

std::string checkpoint_kind(const fs::path& manifest) {
  const auto j = read_json_file(manifest);
  if (!j.contains("kind") || !j.at("kind").is_string()) {
    throw Error(ErrorCode::FormatError, manifest.string() + " has no 'kind'");
  }
  return j.at("kind").get<std::string>();
}

TargetCount parse_n_targets(const std::string& s) {
  if (s == "all") return std::nullopt;
  try {
    std::size_t pos = 0;
    const int n = std::stoi(s, &pos);
    if (pos == s.size()) return n;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidRange, "--n-targets must be an integer or 'all', got '" + s + "'");
}

/// Flags shared by transfer and evaluate for diffusion checkpoints.
struct DmFlags {
  std::string cond;
  std::string n_targets = "all";
  std::optional<double> guidance;
  std::optional<int> t_start;
  std::string pool;
  bool any_given(const CLI::App& app) const {
    return app.count("--cond") || app.count("--n-targets") || app.count("--guidance") || app.count("--t-start");
  }
};

void add_dm_flags(CLI::App* cmd, DmFlags& f) {
  cmd->add_option("--cond", f.cond, "Condition kind for diffusion checkpoints (one-hot|latent)");
  cmd->add_option("--n-targets", f.n_targets, "Target images averaged into a latent condition (N or all)");
  cmd->add_option("--guidance", f.guidance, "Guidance scale w");
  cmd->add_option("--t-start", f.t_start, "Diffusion step the source is noised to (default T)");
  cmd->add_option("--pool", f.pool, "Dataset manifest providing target-domain maps for latent conditions");
}

void apply_dm_flags(DiffusionModel& model, const DmFlags& f) {
  if (!f.cond.empty() && cond_kind_from_string(f.cond) != model.cond_kind()) {
    throw Error(ErrorCode::CondKindMismatch, "--cond " + f.cond + " on a " + to_string(model.cond_kind()) +
                                                 "-trained diffusion model");
  }
  auto& g = model.mutable_config().guidance;
  if (f.guidance) g.w = *f.guidance;
  if (f.t_start) g.t_start = *f.t_start;
  g.validate(model.config().T);
}

std::optional<Classifier> dm_classifier(const DiffusionModel& model, const fs::path& ckpt, const std::string& flag) {
  if (model.cond_kind() != CondKind::Latent) return std::nullopt;
  fs::path p = flag;
  if (p.empty() && !model.classifier_path.empty()) {
    p = model.classifier_path;
    if (p.is_relative()) p = ckpt.parent_path() / p;
  }
  if (p.empty()) throw Error(ErrorCode::NoWeights, "latent conditions need --classifier");
  return Classifier::load(p);
}

// ------------------------------------------------------------ generate-data

struct GenerateArgs {
  std::string config;
  std::string out;
  std::optional<int> n_groups, K, n_blobs;
  std::optional<std::string> shape, task_id;
  std::optional<std::uint64_t> seed, style_seed, content_seed;
};

int cmd_generate(const GenerateArgs& a) {
  RunRecord rec;
  rec.command = "generate-data";
  json j = read_config_file(a.config);
  if (j.contains("data") && j.at("data").contains("synthetic")) j = j.at("data").at("synthetic");
  auto c = synthetic_config_from_json(j);
  if (a.seed) c.style_seed = c.content_seed = *a.seed;
  if (a.style_seed) c.style_seed = *a.style_seed;
  if (a.content_seed) c.content_seed = *a.content_seed;
  if (a.n_groups) c.n_groups = *a.n_groups;
  if (a.K) c.K = *a.K;
  if (a.n_blobs) c.n_blobs = *a.n_blobs;
  if (a.shape) c.shape = parse_shape(*a.shape);
  if (a.task_id) c.task_id = *a.task_id;
  c = synthetic_config_from_json(to_json(c));
  const fs::path out = a.out.empty() ? default_output_root() / "data" : fs::path(a.out);
  const auto manifest = generate_dataset(c, out);
  rec.config = to_json(c);
  rec.artifacts = {manifest.string()};
  rec.write(out / "run_record.json");
  std::cout << manifest.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------- import

struct ImportArgs {
  std::string list;
  std::string out;
  std::string task = "task";
  std::optional<std::string> resample;
};

int cmd_import(const ImportArgs& a) {
  RunRecord rec;
  rec.command = "import";
  std::ifstream in(a.list);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + a.list);
  const fs::path base = fs::path(a.list).parent_path();
  std::vector<ManifestEntry> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 3) throw Error(ErrorCode::FormatError, a.list + ": rows must be group_id,domain,path");
    if (f[0] == "group_id") continue;
    rows.push_back({f[0], f[1], f[2]});
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, a.list + " lists no volumes");

  Dataset data;
  data.task_id = a.task;
  for (const auto& r : rows) {
    if (std::none_of(data.domains.begin(), data.domains.end(), [&](const auto& d) { return d.name == r.domain; })) {
      data.domains.push_back({static_cast<int>(data.domains.size()), r.domain});
    }
  }
  if (data.domains.size() < 2) throw Error(ErrorCode::SingleDomainDataset, "import needs >= 2 domains");
  const std::optional<Shape> target = a.resample ? std::optional(parse_shape(*a.resample)) : std::nullopt;
  std::vector<StatMap> raw;
  for (const auto& r : rows) {
    fs::path p = r.path;
    if (p.is_relative()) p = base / p;
    auto m = import_nifti(p, data.domain(r.domain), r.group_id, a.task);
    if (target) {
      const auto d = m.domain;
      m = resample(m, *target);
      m.domain = d;
      m.group_id = r.group_id;
      m.task_id = a.task;
    }
    if (!raw.empty() && !(raw.front().shape == m.shape)) {
      throw Error(ErrorCode::ShapeMismatch, p.string() + " is " + to_string(m.shape) + ", expected " +
                                                to_string(raw.front().shape) + " (use --resample)");
    }
    raw.push_back(std::move(m));
  }
  data.mask = intersection_mask(raw);
  for (auto& m : raw) {
    auto [norm, params] = minmax_normalize(apply_mask(std::move(m), data.mask), data.mask);
    norm.normalized = true;
    norm.norm_params = params;
    data.maps.push_back(std::move(norm));
  }
  data.reindex();
  const auto manifest = write_dataset(data, a.out, {{"source", "import"}});
  rec.config = {{"list", a.list}, {"task", a.task}, {"resample", a.resample ? json(*a.resample) : json(nullptr)}};
  rec.artifacts = {manifest.string()};
  rec.write(fs::path(a.out) / "run_record.json");
  std::cout << manifest.string() << "\n";
  return 0;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::optional<std::string> kind, manifest, output_dir, classifier, source, target;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::string name;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(8);
  os << v;
  return os.str();
}

int cmd_train(const TrainArgs& a) {
  RunRecord rec;
  rec.command = "train";
  json j = read_config_file(a.config);
  if (a.kind) j["model"]["kind"] = *a.kind;
  if (a.epochs) j["model"]["epochs"] = *a.epochs;
  if (a.source) j["model"]["source_domain"] = *a.source;
  if (a.target) j["model"]["target_domain"] = *a.target;
  if (a.manifest) {
    const double frac = j.contains("data") ? j["data"].value("train_fraction", 0.8) : 0.8;
    j["data"] = {{"manifest", *a.manifest}, {"train_fraction", frac}};
  }
  if (a.seed) j["seed"] = *a.seed;
  if (a.output_dir) j["output_dir"] = *a.output_dir;
  if (a.classifier) j["classifier"] = *a.classifier;
  if (!j.contains("model")) throw Error(ErrorCode::ConfigInvalid, "field 'model.kind' is required");
  auto cfg = experiment_config_from_json(j);
  if (!cfg.model.contains("seed")) cfg.model["seed"] = cfg.seed;

  const auto data = load_data(cfg);
  const auto [train, test] = split_dataset(data, cfg.train_fraction, split_seed(cfg));
  const auto layout = OutputLayout::create(output_root(cfg));
  const std::string name = a.name.empty() ? to_string(cfg.kind) : a.name;
  const auto ckpt = layout.checkpoints() / (name + ".json");
  const auto loss_path = layout.logs() / (name + "_loss.csv");

  write_json_atomic({{"seed", split_seed(cfg)},
                     {"train_fraction", cfg.train_fraction},
                     {"train_groups", train.groups()},
                     {"test_groups", test.groups()}},
                    layout.checkpoints() / (name + "_split.json"));

  json resolved_model;
  switch (cfg.kind) {
    case ModelKind::Classifier: {
      const auto hp = classifier_hparams_from_json(cfg.model, cfg.seed);
      const auto arch = classifier_arch_from_json(cfg.model, data.shape(), data.K());
      Classifier clf(arch, data.domains, hp.seed);
      LossCsv csv(loss_path, "epoch,batch,loss");
      const auto m = train_classifier(clf, train, &test, hp, [&](int e, int b, double l) {
        csv.row(std::to_string(e) + "," + std::to_string(b) + "," + fmt(l));
      });
      clf.save(ckpt);
      std::cerr << "classifier: train accuracy " << m.train_accuracy << ", test accuracy " << m.val_accuracy << "\n";
      resolved_model = {{"epochs", hp.epochs}, {"lr", hp.lr}, {"batch", hp.batch}, {"seed", hp.seed},
                        {"channels", arch.channels}, {"leaky_slope", arch.leaky_slope},
                        {"normalize_latent", arch.normalize_latent}};
      break;
    }
    case ModelKind::Pix2Pix:
    case ModelKind::CycleGan:
    case ModelKind::StarGan: {
      auto gc = gan_config_from_json(cfg.model);
      GanModel model(gc, data.domains, data.shape());
      LossCsv csv(loss_path, "epoch,batch,g_loss,d_loss,aux_loss");
      train_gan(model, train, [&](const GanLossRecord& r) {
        csv.row(std::to_string(r.epoch) + "," + std::to_string(r.batch) + "," + fmt(r.g_total) + "," +
                fmt(r.d_total) + "," + fmt(r.rec_or_cyc));
      });
      model.save(ckpt);
      resolved_model = to_json(gc);
      break;
    }
    case ModelKind::Ddpm: {
      auto dc = diffusion_config_from_json(cfg.model);
      std::optional<Classifier> clf;
      std::int64_t cond_dim = data.K();
      if (dc.cond_kind == CondKind::Latent) {
        if (cfg.classifier.empty()) {
          throw Error(ErrorCode::ConfigInvalid, "field 'classifier' (or --classifier) is required for latent conditions");
        }
        clf = Classifier::load(cfg.classifier);
        cond_dim = clf->arch().latent_dim();
      }
      DiffusionModel model(dc, data.domains, data.shape(), cond_dim);
      if (clf) model.classifier_path = fs::absolute(cfg.classifier).string();
      LossCsv csv(loss_path, "epoch,batch,loss");
      train_diffusion(model, train, clf ? &*clf : nullptr, [&](int e, int b, double l) {
        csv.row(std::to_string(e) + "," + std::to_string(b) + "," + fmt(l));
      });
      model.save(ckpt);
      resolved_model = to_json(dc);
      break;
    }
  }
  stamp_task(ckpt, data.task_id);
  resolved_model["kind"] = to_string(cfg.kind);
  rec.config = to_json(cfg);
  rec.config["model"] = resolved_model;
  rec.artifacts = {ckpt.string(), loss_path.string()};
  rec.write(layout.logs() / ("train_" + name + ".json"));
  std::cout << ckpt.string() << "\n";
  return 0;
}

// ----------------------------------------------------------------- transfer

struct TransferArgs {
  std::string checkpoint, source, target, classifier, mask, output_dir, out;
  std::uint64_t seed = 0;
  DmFlags dm;
};

int cmd_transfer(const TransferArgs& a, const CLI::App& app) {
  RunRecord rec;
  rec.command = "transfer";
  auto src = read_volume(a.source);
  std::optional<Mask> mask;
  if (!a.mask.empty()) mask = read_mask(a.mask);
  if (!src.normalized) {
    if (!mask) throw Error(ErrorCode::NotNormalized, a.source + " is not normalized; pass --mask to normalize it");
    auto [n, p] = minmax_normalize(apply_mask(src, *mask), *mask);
    n.normalized = true;
    n.norm_params = p;
    src = std::move(n);
  }
  const Mask* mp = mask ? &*mask : nullptr;
  const StatMap* sp = &src;
  std::vector<StatMap> out;
  json resolved{{"checkpoint", a.checkpoint}, {"source", a.source}, {"target", a.target}, {"seed", a.seed}};

  const auto kind = checkpoint_kind(a.checkpoint);
  if (kind == "gan") {
    if (a.dm.any_given(app)) {
      std::cerr << "warning: --cond/--n-targets/--guidance/--t-start only apply to diffusion checkpoints; ignored\n";
    }
    auto model = GanModel::load(a.checkpoint);
    const auto& target = find_domain(model.domains(), a.target);
    out = model.transfer(std::span<const StatMap* const>(&sp, 1), target, mp);
    resolved["framework"] = to_string(model.kind());
  } else if (kind == "ddpm") {
    auto model = DiffusionModel::load(a.checkpoint);
    apply_dm_flags(model, a.dm);
    const auto& target = find_domain(model.domains(), a.target);
    const int K = static_cast<int>(model.domains().size());
    ConditionVector cond;
    if (model.cond_kind() == CondKind::OneHot) {
      cond = one_hot_condition(target, K);
    } else {
      if (a.dm.pool.empty()) throw Error(ErrorCode::EmptyPool, "latent conditions need --pool");
      const auto pool = load_dataset(a.dm.pool);
      auto clf = dm_classifier(model, a.checkpoint, a.classifier);
      std::vector<const StatMap*> maps;
      for (const auto& m : pool.maps) {
        if (m.domain.name == target.name) maps.push_back(&m);
      }
      std::mt19937_64 rng(derive_seed(a.seed, "cond:" + src.group_id));
      cond = make_condition(target, K, CondKind::Latent, parse_n_targets(a.dm.n_targets), maps, &*clf, rng);
    }
    out = model.transfer(std::span<const StatMap* const>(&sp, 1), std::span<const ConditionVector>(&cond, 1), target,
                         derive_seed(a.seed, "sampling"), mp);
    resolved["diffusion"] = to_json(model.config());
    resolved["condition"] = cond.source;
  } else {
    throw Error(ErrorCode::ConfigInvalid, a.checkpoint + " is a '" + kind + "' checkpoint, not a transfer model");
  }

  const fs::path root = a.output_dir.empty() ? default_output_root() : fs::path(a.output_dir);
  const auto layout = OutputLayout::create(root);
  const std::string stem = (src.group_id.empty() ? "volume" : src.group_id) + "_" + a.target;
  const fs::path dst = a.out.empty() ? layout.volumes() / (stem + ".json") : fs::path(a.out);
  out.front().group_id = src.group_id;
  out.front().task_id = src.task_id;
  write_volume(out.front(), dst);
  rec.config = resolved;
  rec.artifacts = {dst.string()};
  rec.write(layout.logs() / ("transfer_" + stem + ".json"));
  std::cout << dst.string() << "\n";
  return 0;
}

// ----------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string config, checkpoint, manifest, pred, truth, classifier, output_dir, name, train_task;
  std::vector<std::string> directions;
  std::optional<int> n_images;
  std::optional<std::uint64_t> seed;
  bool identity = false, cross_task = false, layer_corr = false, whole_volume = false, denormalized = false;
  DmFlags dm;
};

TransferModel lookup_model(const Dataset& pred) {
  return [&pred](std::span<const StatMap* const> sources, const DomainLabel& target, std::uint64_t) {
    std::vector<StatMap> out;
    for (const auto* s : sources) {
      const auto* m = pred.find(s->group_id, pred.domain(target.name).index);
      if (!m) {
        throw Error(ErrorCode::InsufficientTestData,
                    "no generated map for group " + s->group_id + " in domain " + target.name);
      }
      out.push_back(*m);
      out.back().domain = target;
    }
    return out;
  };
}

int cmd_evaluate(const EvaluateArgs& a, const CLI::App& app) {
  RunRecord rec;
  rec.command = "evaluate";
  json j = read_config_file(a.config);
  if (!a.manifest.empty()) j["data"] = {{"manifest", a.manifest}};
  if (!a.truth.empty()) j["data"] = {{"manifest", a.truth}};
  if (!a.classifier.empty()) j["classifier"] = a.classifier;
  if (!a.directions.empty()) j["eval"]["directions"] = a.directions;
  if (a.n_images) j["eval"]["n_images"] = *a.n_images;
  if (a.whole_volume) j["eval"]["in_mask"] = false;
  if (a.denormalized) j["eval"]["denormalized"] = true;
  if (a.seed) j["seed"] = *a.seed;
  if (!a.output_dir.empty()) j["output_dir"] = a.output_dir;
  if (j.contains("model") && !j["model"].contains("kind")) j.erase("model");
  auto cfg = experiment_config_from_json(j);
  if (cfg.classifier.empty()) {
    throw Error(ErrorCode::ConfigInvalid, "missing --classifier (classifier checkpoint used for accuracy and IS)");
  }
  const int sources = !a.checkpoint.empty() + a.identity + !a.pred.empty();
  if (sources > 1) throw Error(ErrorCode::ConfigInvalid, "give only one of --checkpoint, --identity, --pred");
  if (sources == 0 && !a.layer_corr) {
    throw Error(ErrorCode::ConfigInvalid, "nothing to evaluate: give --checkpoint, --identity, --pred or --layer-corr");
  }
  if (!a.pred.empty() && a.truth.empty()) throw Error(ErrorCode::ConfigInvalid, "--pred needs --truth");

  const auto clf = Classifier::load(cfg.classifier);
  const auto data = load_data(cfg);
  // A config-driven run evaluates the held-out split; an explicit manifest is used whole.
  const bool use_split = !a.cross_task && a.manifest.empty() && a.truth.empty();
  Dataset train, test;
  if (use_split) {
    std::tie(train, test) = split_dataset(data, cfg.train_fraction, split_seed(cfg));
  } else {
    test = data;
  }
  if (!a.dm.pool.empty()) train = load_dataset(a.dm.pool);

  const auto layout = OutputLayout::create(output_root(cfg));
  const std::string name = a.name.empty() ? "report" : a.name;
  rec.config = to_json(cfg);

  if (sources == 1) {
    EvalOptions opts{cfg.n_images, cfg.seed, cfg.in_mask, cfg.denormalized};
    std::optional<GanModel> gan;
    std::optional<DiffusionModel> dm;
    std::optional<Classifier> dm_clf;
    std::optional<Dataset> pred;
    TransferModel model;
    std::string label, train_task = test.task_id;
    std::vector<std::string> model_domains = test.domain_names();
    if (a.identity) {
      model = identity_model();
      label = "identity";
    } else if (!a.pred.empty()) {
      pred = load_dataset(a.pred);
      model = lookup_model(*pred);
      label = "pred:" + a.pred;
    } else {
      const auto kind = checkpoint_kind(a.checkpoint);
      const auto cj = read_json_file(a.checkpoint);
      train_task = cj.value("task_id", std::string());
      if (kind == "gan") {
        if (a.dm.any_given(app)) {
          std::cerr << "warning: --cond/--n-targets/--guidance/--t-start only apply to diffusion checkpoints; ignored\n";
        }
        gan.emplace(GanModel::load(a.checkpoint));
        model = gan_transfer_model(*gan, &test.mask);
        label = to_string(gan->kind());
        model_domains.clear();
        for (const auto& d : gan->domains()) model_domains.push_back(d.name);
      } else if (kind == "ddpm") {
        dm.emplace(DiffusionModel::load(a.checkpoint));
        apply_dm_flags(*dm, a.dm);
        dm_clf = dm_classifier(*dm, a.checkpoint, "");
        const bool latent = dm->cond_kind() == CondKind::Latent;
        if (latent && train.maps.empty()) throw Error(ErrorCode::EmptyPool, "latent conditions need --pool");
        const auto n = parse_n_targets(a.dm.n_targets);
        model = diffusion_transfer_model(*dm, latent ? &train : nullptr, dm_clf ? &*dm_clf : nullptr, n, &test.mask);
        label = latent ? "ddpm-latent-" + a.dm.n_targets : "ddpm-one-hot";
        model_domains.clear();
        for (const auto& d : dm->domains()) model_domains.push_back(d.name);
        rec.config["diffusion"] = to_json(dm->config());
      } else {
        throw Error(ErrorCode::ConfigInvalid, a.checkpoint + " is a '" + kind + "' checkpoint, not a transfer model");
      }
    }
    if (!a.train_task.empty()) train_task = a.train_task;
    MetricReport report;
    if (a.cross_task) {
      report = cross_task_evaluation(model, model_domains, train_task, test, cfg.directions, &clf, opts);
    } else {
      if (model_domains != test.domain_names()) {
        throw Error(ErrorCode::DomainSetMismatch, "model and dataset domain lists differ");
      }
      report = evaluate_transfers(model, test, cfg.directions, &clf, opts);
      report.train_task = train_task;
    }
    report.model = label;
    const auto [csv, js] = write_report(report, layout.reports() / name);
    rec.artifacts.push_back(csv.string());
    rec.artifacts.push_back(js.string());
    std::cout << format_table(std::span<const MetricReport>(&report, 1));
    std::cout << csv.string() << "\n" << js.string() << "\n";
  }

  if (a.layer_corr) {
    const auto table = layerwise_feature_correlation(clf, test, cfg.directions);
    const auto path = layout.reports() / (name + "_layers.csv");
    std::ofstream out(path, std::ios::trunc);
    out << layer_table_csv(table);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    rec.artifacts.push_back(path.string());
    std::cout << path.string() << "\n";
  }
  rec.write(layout.logs() / ("evaluate_" + name + ".json"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pipeline style transfer for statistic maps"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Write a seeded synthetic multi-pipeline dataset");
  g->add_option("--config", gen.config, "JSON synthetic config (bare or under data.synthetic)");
  g->add_option("--out", gen.out, "Output directory (default $STYLEMAP_OUTPUT_ROOT/data)");
  g->add_option("--seed", gen.seed, "Sets both style and content seeds");
  g->add_option("--style-seed", gen.style_seed);
  g->add_option("--content-seed", gen.content_seed);
  g->add_option("--n-groups", gen.n_groups);
  g->add_option("--K", gen.K, "Number of pipelines");
  g->add_option("--n-blobs", gen.n_blobs);
  g->add_option("--shape", gen.shape, "nx,ny,nz");
  g->add_option("--task-id", gen.task_id);

  ImportArgs imp;
  auto* i = app.add_subcommand("import", "Import NIfTI maps listed in a group_id,domain,path CSV");
  i->add_option("--list", imp.list, "CSV of group_id,domain,path rows")->required();
  i->add_option("--out", imp.out, "Output dataset directory")->required();
  i->add_option("--task", imp.task, "Task id stored with every map");
  i->add_option("--resample", imp.resample, "Resample every map to nx,ny,nz");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a classifier, GAN or diffusion model");
  t->add_option("--config", tr.config, "Experiment config JSON");
  t->add_option("--kind", tr.kind, "classifier|pix2pix|cyclegan|stargan|ddpm");
  t->add_option("--manifest", tr.manifest, "Dataset manifest (overrides data in the config)");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--seed", tr.seed);
  t->add_option("--output-dir", tr.output_dir);
  t->add_option("--classifier", tr.classifier, "Classifier checkpoint for latent diffusion conditions");
  t->add_option("--source", tr.source, "Source domain of one-to-one GANs");
  t->add_option("--target", tr.target, "Target domain of one-to-one GANs");
  t->add_option("--name", tr.name, "Checkpoint stem (default: the kind)");

  TransferArgs tf;
  auto* x = app.add_subcommand("transfer", "Transfer one volume to a target pipeline");
  x->add_option("--checkpoint", tf.checkpoint, "GAN or diffusion checkpoint manifest")->required();
  x->add_option("--source", tf.source, "Source volume header")->required();
  x->add_option("--target", tf.target, "Target domain name")->required();
  x->add_option("--classifier", tf.classifier, "Classifier for latent conditions (default: the one used in training)");
  x->add_option("--mask", tf.mask, "Mask header; zeroes output voxels outside it");
  x->add_option("--seed", tf.seed);
  x->add_option("--output-dir", tf.output_dir);
  x->add_option("--out", tf.out, "Output volume header path");
  add_dm_flags(x, tf.dm);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score transfers against same-group truths");
  e->add_option("--config", ev.config, "Experiment config JSON (data, eval and classifier sections)");
  e->add_option("--checkpoint", ev.checkpoint, "GAN or diffusion checkpoint manifest");
  e->add_option("--manifest", ev.manifest, "Test dataset manifest, used whole");
  e->add_option("--pred", ev.pred, "Manifest of generated maps (group ids match the truths)");
  e->add_option("--truth", ev.truth, "Manifest of true maps");
  e->add_option("--classifier", ev.classifier, "Classifier checkpoint manifest");
  e->add_option("--directions", ev.directions, "source->target pairs (default: the four canonical ones)");
  e->add_option("--n-images", ev.n_images);
  e->add_option("--seed", ev.seed);
  e->add_option("--output-dir", ev.output_dir);
  e->add_option("--name", ev.name, "Report stem (default: report)");
  e->add_option("--train-task", ev.train_task, "Task the model was trained on (default: from the checkpoint)");
  e->add_flag("--identity", ev.identity, "Evaluate the identity transfer");
  e->add_flag("--cross-task", ev.cross_task, "Evaluate on a foreign task");
  e->add_flag("--layer-corr", ev.layer_corr, "Emit the per-stage feature correlation table");
  e->add_flag("--whole-volume", ev.whole_volume, "Score every voxel instead of the mask");
  e->add_flag("--denormalized", ev.denormalized, "Score in original units");
  add_dm_flags(e, ev.dm);

  CLI11_PARSE(app, argc, argv);
  try {
    if (g->parsed()) return cmd_generate(gen);
    if (i->parsed()) return cmd_import(imp);
    if (t->parsed()) return cmd_train(tr);
    if (x->parsed()) return cmd_transfer(tf, *x);
    if (e->parsed()) return cmd_evaluate(ev, *e);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
