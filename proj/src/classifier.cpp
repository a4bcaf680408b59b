#include "stylemap/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stylemap/rng.hpp"
#include "stylemap/tensor_utils.hpp"

namespace stylemap {

namespace {

constexpr std::int64_t kInferenceChunk = 32;

std::int64_t ceil_halvings(std::int64_t n, int times) {
  for (int i = 0; i < times; ++i) n = (n + 1) / 2;
  return n;
}

}  // namespace

std::int64_t classifier_latent_dim(const Shape& input, std::int64_t last_channels, int stages) {
  return last_channels * ceil_halvings(input.nx, stages) * ceil_halvings(input.ny, stages) *
         ceil_halvings(input.nz, stages);
}

std::int64_t ClassifierArch::latent_dim() const {
  return classifier_latent_dim(input_shape, channels.back(), static_cast<int>(channels.size()));
}

PipelineClassifierImpl::PipelineClassifierImpl(const ClassifierArch& arch) : arch_(arch) {
  std::int64_t in = 1;
  for (std::size_t i = 0; i < arch.channels.size(); ++i) {
    const auto out = arch.channels[i];
    torch::nn::Sequential stage(
        torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).stride(2).padding(1)),
        torch::nn::BatchNorm3d(out),
        torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(arch.leaky_slope)));
    stages_.push_back(register_module("stage" + std::to_string(i + 1), stage));
    in = out;
  }
  head_ = register_module("head", torch::nn::Linear(arch.latent_dim(), arch.K));
}

ClassifierOutput PipelineClassifierImpl::forward(const torch::Tensor& x) {
  ClassifierOutput out;
  auto h = channels_last(x);
  for (auto& stage : stages_) {
    h = stage->forward(h);
    out.stages.push_back(h);
  }
  out.latent = h.flatten(1);
  out.logits = head_->forward(out.latent);
  if (arch_.normalize_latent) {
    out.latent = torch::nn::functional::normalize(
        out.latent, torch::nn::functional::NormalizeFuncOptions().dim(1));
  }
  return out;
}

std::string to_string(CondKind kind) { return kind == CondKind::OneHot ? "one_hot" : "latent"; }

CondKind cond_kind_from_string(const std::string& s) {
  if (s == "one_hot" || s == "one-hot") return CondKind::OneHot;
  if (s == "latent") return CondKind::Latent;
  throw Error(ErrorCode::ConfigInvalid, "cond kind must be one-hot or latent, got '" + s + "'");
}

ConditionVector one_hot_condition(const DomainLabel& target, int K) {
  if (target.index < 0 || target.index >= K) {
    throw Error(ErrorCode::UnknownLabel, "domain index " + std::to_string(target.index) +
                                             " outside [0, " + std::to_string(K) + ")");
  }
  ConditionVector c;
  c.kind = CondKind::OneHot;
  c.payload.assign(K, 0.0f);
  c.payload[target.index] = 1.0f;
  c.source = "domain:" + target.name;
  return c;
}

Classifier::Classifier(ClassifierArch arch, std::vector<DomainLabel> domains, std::uint64_t init_seed)
    : arch_(std::move(arch)), domains_(std::move(domains)), seed_(init_seed) {
  if (static_cast<int>(domains_.size()) != arch_.K) {
    throw Error(ErrorCode::InvalidK, "classifier K does not match the domain list");
  }
  if (arch_.K < 2) throw Error(ErrorCode::InvalidK, "classifier needs K >= 2");
  torch::manual_seed(derive_seed(init_seed, "init"));
  net_ = PipelineClassifier(arch_);
  use_channels_last(*net_);
  net_->eval();
}

void Classifier::mark_trained(ClassifierMetrics metrics) {
  trained_ = true;
  metrics_ = std::move(metrics);
}

void Classifier::check_input(const Shape& shape) const {
  if (!(shape == arch_.input_shape)) {
    throw Error(ErrorCode::ShapeMismatch, "classifier expects " + to_string(arch_.input_shape) +
                                              ", got " + to_string(shape));
  }
}

ClassifierOutput Classifier::forward(const torch::Tensor& batch) const {
  if (batch.dim() != 5 || batch.size(2) != arch_.input_shape.nz ||
      batch.size(3) != arch_.input_shape.ny || batch.size(4) != arch_.input_shape.nx) {
    throw Error(ErrorCode::ShapeMismatch, "classifier expects [B,1," + to_string(arch_.input_shape) + "]");
  }
  torch::NoGradGuard no_grad;
  net_->eval();
  if (batch.size(0) <= kInferenceChunk) return net_->forward(batch);
  ClassifierOutput out;
  std::vector<torch::Tensor> logits, latents;
  std::vector<std::vector<torch::Tensor>> stages;
  for (std::int64_t s = 0; s < batch.size(0); s += kInferenceChunk) {
    auto part = net_->forward(batch.slice(0, s, std::min(s + kInferenceChunk, batch.size(0))));
    logits.push_back(part.logits);
    latents.push_back(part.latent);
    stages.push_back(part.stages);
  }
  out.logits = torch::cat(logits);
  out.latent = torch::cat(latents);
  for (std::size_t i = 0; i < stages.front().size(); ++i) {
    std::vector<torch::Tensor> parts;
    for (auto& s : stages) parts.push_back(s[i]);
    out.stages.push_back(torch::cat(parts));
  }
  return out;
}

ClassifierOutput Classifier::forward(const StatMap& map) const {
  check_input(map.shape);
  return forward(to_tensor(map).unsqueeze(0));
}

std::vector<LabelDistribution> Classifier::predict(std::span<const StatMap* const> maps) const {
  if (!trained_) throw Error(ErrorCode::NoWeights, "classifier has no trained weights");
  if (maps.empty()) return {};
  for (const auto* m : maps) check_input(m->shape);
  const auto logits = forward(stack_maps(maps)).logits.to(torch::kFloat64).contiguous();
  std::vector<LabelDistribution> out;
  for (std::int64_t i = 0; i < logits.size(0); ++i) {
    const auto row = logits[i];
    out.push_back(softmax(std::span<const double>(row.data_ptr<double>(), row.numel())));
  }
  return out;
}

std::pair<DomainLabel, LabelDistribution> Classifier::predict_domain(const StatMap& map) const {
  const StatMap* one[] = {&map};
  auto dist = predict(one).front();
  return {domains_.at(dist.argmax()), std::move(dist)};
}

std::vector<std::vector<float>> Classifier::latents(std::span<const StatMap* const> maps) const {
  if (maps.empty()) return {};
  for (const auto* m : maps) check_input(m->shape);
  const auto lat = forward(stack_maps(maps)).latent.contiguous();
  std::vector<std::vector<float>> out;
  for (std::int64_t i = 0; i < lat.size(0); ++i) {
    const float* p = lat[i].data_ptr<float>();
    out.emplace_back(p, p + lat.size(1));
  }
  return out;
}

ConditionVector Classifier::extract_latent(const StatMap& map) const {
  const StatMap* one[] = {&map};
  ConditionVector c;
  c.kind = CondKind::Latent;
  c.payload = latents(one).front();
  c.source = "latent:" + map.group_id + "/" + map.domain.name;
  return c;
}

nlohmann::json Classifier::manifest() const {
  std::vector<std::string> names;
  for (const auto& d : domains_) names.push_back(d.name);
  return {{"kind", "classifier"},
          {"arch",
           {{"stages", arch_.channels.size()},
            {"channels", arch_.channels},
            {"kernel", 3},
            {"stride", 2},
            {"norm", "batchnorm3d"},
            {"activation", "leaky_relu"},
            {"leaky_slope", arch_.leaky_slope},
            {"normalize_latent", arch_.normalize_latent}}},
          {"K", arch_.K},
          {"D", arch_.latent_dim()},
          {"input_shape", {arch_.input_shape.nx, arch_.input_shape.ny, arch_.input_shape.nz}},
          {"domains", names},
          {"seed", seed_},
          {"trained", trained_},
          {"metrics",
           {{"epochs", metrics_.epochs_trained},
            {"train_accuracy", metrics_.train_accuracy},
            {"val_accuracy", metrics_.val_accuracy},
            {"epoch_loss", metrics_.epoch_loss}}}};
}

void Classifier::save(const std::filesystem::path& manifest_path) const {
  auto weights = manifest_path;
  weights.replace_extension(".pt");
  save_module(*net_, weights);
  auto j = manifest();
  j["weights"] = weights.filename().string();
  write_json_atomic(j, manifest_path);
}

Classifier Classifier::load(const std::filesystem::path& manifest_path) {
  const auto j = read_json_file(manifest_path);
  try {
    if (j.at("kind").get<std::string>() != "classifier") {
      throw Error(ErrorCode::ConfigInvalid, manifest_path.string() + " is not a classifier checkpoint");
    }
    ClassifierArch arch;
    arch.channels = j.at("arch").at("channels").get<std::vector<std::int64_t>>();
    arch.leaky_slope = j.at("arch").at("leaky_slope").get<double>();
    arch.normalize_latent = j.at("arch").value("normalize_latent", false);
    arch.K = j.at("K").get<int>();
    const auto s = j.at("input_shape").get<std::vector<int>>();
    arch.input_shape = {s.at(0), s.at(1), s.at(2)};
    std::vector<DomainLabel> domains;
    const auto names = j.at("domains").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < names.size(); ++i) domains.push_back({static_cast<int>(i), names[i]});
    Classifier clf(arch, domains, j.at("seed").get<std::uint64_t>());
    load_module(*clf.net_, manifest_path.parent_path() / j.at("weights").get<std::string>());
    clf.net_->eval();
    if (j.at("trained").get<bool>()) {
      ClassifierMetrics m;
      m.epochs_trained = j.at("metrics").value("epochs", 0);
      m.train_accuracy = j.at("metrics").value("train_accuracy", 0.0);
      m.val_accuracy = j.at("metrics").value("val_accuracy", 0.0);
      m.epoch_loss = j.at("metrics").value("epoch_loss", std::vector<double>{});
      clf.mark_trained(std::move(m));
    }
    return clf;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, manifest_path.string() + ": " + e.what());
  }
}

double classifier_accuracy(const Classifier& clf, std::span<const StatMap* const> maps) {
  if (maps.empty()) throw Error(ErrorCode::EmptySet, "accuracy over no maps");
  const auto pred = clf.forward(stack_maps(maps)).logits.argmax(1).contiguous();
  const auto* p = pred.data_ptr<std::int64_t>();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) hits += p[i] == maps[i]->domain.index;
  return static_cast<double>(hits) / maps.size();
}

ClassifierMetrics train_classifier(Classifier& clf, const Dataset& train, const Dataset* val,
                                   const ClassifierHParams& hp, const LossLogger& log) {
  std::vector<const StatMap*> pool;
  for (const auto& m : train.maps) pool.push_back(&m);
  {
    std::vector<int> seen;
    for (const auto* m : pool) {
      if (std::find(seen.begin(), seen.end(), m->domain.index) == seen.end()) seen.push_back(m->domain.index);
    }
    if (seen.size() < 2) {
      throw Error(ErrorCode::SingleDomainDataset, "classifier training needs at least 2 domains");
    }
  }
  if (hp.batch < 1) throw Error(ErrorCode::ConfigInvalid, "batch must be >= 1");

  ClassifierMetrics metrics;
  auto& net = clf.net();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(hp.lr));
  std::mt19937_64 rng(derive_seed(hp.seed, "batching"));
  torch::manual_seed(derive_seed(hp.seed, "train"));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    net->train();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    const int n_batches = batches_per_epoch(order.size(), hp.batch);
    for (int b = 0; b < n_batches; ++b) {
      std::vector<const StatMap*> batch;
      std::vector<std::int64_t> labels;
      for (std::size_t i = b * static_cast<std::size_t>(hp.batch);
           i < std::min(order.size(), (b + 1) * static_cast<std::size_t>(hp.batch)); ++i) {
        batch.push_back(pool[order[i]]);
        labels.push_back(pool[order[i]]->domain.index);
      }
      const auto x = stack_maps(batch);
      const auto y = torch::tensor(labels, torch::kLong);
      opt.zero_grad();
      auto loss = torch::nn::functional::cross_entropy(net->forward(x).logits, y);
      loss.backward();
      opt.step();
      const double l = loss.item<double>();
      if (log) log(epoch, batches, l);
      total += l;
      ++batches;
    }
    metrics.epoch_loss.push_back(batches ? total / batches : 0.0);
  }
  net->eval();
  metrics.epochs_trained = hp.epochs;
  metrics.train_accuracy = classifier_accuracy(clf, pool);
  if (val && !val->maps.empty()) {
    std::vector<const StatMap*> vpool;
    for (const auto& m : val->maps) vpool.push_back(&m);
    metrics.val_accuracy = classifier_accuracy(clf, vpool);
  }
  clf.mark_trained(metrics);
  return metrics;
}

}  // namespace stylemap
