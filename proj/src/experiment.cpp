#include "stylemap/experiment.hpp"

#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <map>
#include <memory>
#include <random>
#include <sstream>

#include "stylemap/rng.hpp"
#include "stylemap/tensor_utils.hpp"

namespace stylemap {

namespace {

template <typename T>
void get_field(const nlohmann::json& j, const char* name, const std::string& path, T& dst) {
  if (!j.contains(name)) return;
  try {
    j.at(name).get_to(dst);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::ConfigInvalid, "field '" + path + name + "' has the wrong type");
  }
}

std::string iso_time(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Classifier: return "classifier";
    case ModelKind::Pix2Pix: return "pix2pix";
    case ModelKind::CycleGan: return "cyclegan";
    case ModelKind::StarGan: return "stargan";
    case ModelKind::Ddpm: return "ddpm";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  for (auto k : {ModelKind::Classifier, ModelKind::Pix2Pix, ModelKind::CycleGan, ModelKind::StarGan, ModelKind::Ddpm}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::ConfigInvalid,
              "field 'model.kind': unknown kind '" + s + "' (classifier, pix2pix, cyclegan, stargan, ddpm)");
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
  ExperimentConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (d.contains("manifest") == d.contains("synthetic")) {
      throw Error(ErrorCode::ConfigInvalid, "field 'data': give exactly one of 'manifest' or 'synthetic'");
    }
    if (d.contains("manifest")) {
      std::string m;
      get_field(d, "manifest", "data.", m);
      c.manifest = m;
    } else {
      c.synthetic = synthetic_config_from_json(d.at("synthetic"));
    }
    get_field(d, "train_fraction", "data.", c.train_fraction);
  }
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigInvalid, "field 'data.train_fraction' must be in (0, 1)");
  }
  if (j.contains("model")) {
    c.model = j.at("model");
    if (!c.model.is_object()) throw Error(ErrorCode::ConfigInvalid, "field 'model' must be an object");
    std::string kind;
    get_field(c.model, "kind", "model.", kind);
    if (kind.empty()) throw Error(ErrorCode::ConfigInvalid, "field 'model.kind' is required");
    c.kind = model_kind_from_string(kind);
  }
  get_field(j, "classifier", "", c.classifier);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("directions")) {
      std::vector<std::string> dirs;
      get_field(e, "directions", "eval.", dirs);
      c.directions.clear();
      for (const auto& s : dirs) c.directions.push_back(parse_direction(s));
    }
    get_field(e, "n_images", "eval.", c.n_images);
    get_field(e, "in_mask", "eval.", c.in_mask);
    get_field(e, "denormalized", "eval.", c.denormalized);
  }
  if (c.n_images < 2) throw Error(ErrorCode::ConfigInvalid, "field 'eval.n_images' must be >= 2");
  get_field(j, "seed", "", c.seed);
  get_field(j, "output_dir", "", c.output_dir);
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json data{{"train_fraction", c.train_fraction}};
  if (c.manifest) data["manifest"] = *c.manifest;
  if (c.synthetic) data["synthetic"] = to_json(*c.synthetic);
  std::vector<std::string> dirs;
  for (const auto& d : c.directions) dirs.push_back(d.label());
  auto model = c.model;
  model["kind"] = to_string(c.kind);
  return {{"data", data},
          {"model", model},
          {"classifier", c.classifier},
          {"eval", {{"directions", dirs}, {"n_images", c.n_images}, {"in_mask", c.in_mask},
                    {"denormalized", c.denormalized}}},
          {"seed", c.seed},
          {"output_dir", c.output_dir}};
}

ClassifierHParams classifier_hparams_from_json(const nlohmann::json& j, std::uint64_t seed) {
  ClassifierHParams hp;
  hp.seed = seed;
  get_field(j, "epochs", "model.", hp.epochs);
  get_field(j, "lr", "model.", hp.lr);
  get_field(j, "batch", "model.", hp.batch);
  get_field(j, "seed", "model.", hp.seed);
  if (hp.epochs < 0) throw Error(ErrorCode::ConfigInvalid, "field 'model.epochs' must be >= 0");
  if (hp.batch < 1) throw Error(ErrorCode::ConfigInvalid, "field 'model.batch' must be >= 1");
  if (!(hp.lr > 0)) throw Error(ErrorCode::ConfigInvalid, "field 'model.lr' must be > 0");
  return hp;
}

ClassifierArch classifier_arch_from_json(const nlohmann::json& j, const Shape& input, int K) {
  ClassifierArch a;
  a.input_shape = input;
  a.K = K;
  get_field(j, "channels", "model.", a.channels);
  get_field(j, "leaky_slope", "model.", a.leaky_slope);
  get_field(j, "normalize_latent", "model.", a.normalize_latent);
  if (a.channels.empty()) throw Error(ErrorCode::ConfigInvalid, "field 'model.channels' must not be empty");
  return a;
}

OutputLayout OutputLayout::create(const std::filesystem::path& root) {
  OutputLayout l{root};
  std::error_code ec;
  for (const auto& d : {l.checkpoints(), l.volumes(), l.reports(), l.logs()}) {
    std::filesystem::create_directories(d, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + d.string() + ": " + ec.message());
  }
  return l;
}

std::filesystem::path default_output_root() {
  if (const char* env = std::getenv("STYLEMAP_OUTPUT_ROOT"); env && *env) return env;
  return "outputs";
}

void RunRecord::write(const std::filesystem::path& path) const {
  const auto finished = std::chrono::system_clock::now();
  const double wall = std::chrono::duration<double>(finished - started).count();
  write_json_atomic({{"command", command},
                     {"version", kVersion},
                     {"config", config},
                     {"started", iso_time(started)},
                     {"finished", iso_time(finished)},
                     {"wall_seconds", wall},
                     {"artifacts", artifacts}},
                    path);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double train_fraction, std::uint64_t seed) {
  const auto groups = data.groups();
  const auto split = split_groups(groups, train_fraction, seed);
  return {data.subset(split.train_groups), data.subset(split.test_groups)};
}

TransferModel diffusion_transfer_model(DiffusionModel& model, const Dataset* pool, const Classifier* classifier,
                                       TargetCount n_targets, const Mask* mask) {
  auto cache = std::make_shared<std::map<int, std::vector<std::vector<float>>>>();
  return [&model, pool, classifier, n_targets, mask, cache](std::span<const StatMap* const> sources,
                                                            const DomainLabel& target, std::uint64_t seed) {
    const int K = static_cast<int>(model.domains().size());
    std::vector<ConditionVector> conds;
    if (model.cond_kind() == CondKind::OneHot) {
      for (std::size_t i = 0; i < sources.size(); ++i) conds.push_back(one_hot_condition(target, K));
    } else {
      if (!pool) throw Error(ErrorCode::EmptyPool, "latent conditions need a target pool");
      if (!classifier || !classifier->trained()) {
        throw Error(ErrorCode::NoWeights, "latent conditions need a trained classifier");
      }
      auto it = cache->find(target.index);
      if (it == cache->end()) {
        std::vector<const StatMap*> maps;
        for (const auto& m : pool->maps) {
          if (m.domain.index == target.index) maps.push_back(&m);
        }
        std::vector<std::vector<float>> lat;
        for (std::size_t s = 0; s < maps.size(); s += 32) {
          auto part = classifier->latents(
              std::span<const StatMap* const>(maps).subspan(s, std::min<std::size_t>(32, maps.size() - s)));
          for (auto& l : part) lat.push_back(std::move(l));
        }
        it = cache->emplace(target.index, std::move(lat)).first;
      }
      for (const auto* s : sources) {
        std::mt19937_64 rng(derive_seed(seed, "cond:" + s->group_id));
        conds.push_back(make_condition(target, K, CondKind::Latent, n_targets, it->second, rng));
      }
    }
    return model.transfer(sources, conds, target, derive_seed(seed, "sampling"), mask);
  };
}

TransferModel gan_transfer_model(GanModel& model, const Mask* mask) {
  return [&model, mask](std::span<const StatMap* const> sources, const DomainLabel& target, std::uint64_t) {
    return model.transfer(sources, target, mask);
  };
}

LossCsv::LossCsv(const std::filesystem::path& path, const std::string& header) : out_(path, std::ios::trunc) {
  if (!out_) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out_ << header << "\n";
}

void LossCsv::row(const std::string& line) {
  out_ << line << "\n";
  ++rows_;
}

}  // namespace stylemap
