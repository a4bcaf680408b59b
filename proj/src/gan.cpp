#include "stylemap/gan.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "stylemap/rng.hpp"
#include "stylemap/tensor_utils.hpp"

namespace stylemap {

namespace F = torch::nn::functional;

namespace {

torch::Tensor bce(const torch::Tensor& logits, double target) {
  return F::binary_cross_entropy_with_logits(logits, torch::full_like(logits, target));
}

torch::Tensor lsgan(const torch::Tensor& pred, double target) {
  return torch::mse_loss(pred, torch::full_like(pred, target));
}

torch::Tensor mae(const torch::Tensor& a, const torch::Tensor& b) { return torch::l1_loss(a, b); }

void check_labels(const torch::Tensor& labels, int K) {
  if (labels.numel() == 0) return;
  const auto lo = labels.min().item<std::int64_t>();
  const auto hi = labels.max().item<std::int64_t>();
  if (lo < 0 || hi >= K) {
    throw Error(ErrorCode::UnknownLabel, "label outside [0, " + std::to_string(K) + "): " +
                                             std::to_string(lo < 0 ? lo : hi));
  }
}

std::optional<int> index_of(const std::vector<DomainLabel>& domains, const std::string& name) {
  for (const auto& d : domains) {
    if (d.name == name) return d.index;
  }
  return std::nullopt;
}

}  // namespace

std::string to_string(GanKind kind) {
  switch (kind) {
    case GanKind::Pix2Pix: return "pix2pix";
    case GanKind::CycleGan: return "cyclegan";
    case GanKind::StarGan: return "stargan";
  }
  return "?";
}

GanKind gan_kind_from_string(const std::string& s) {
  if (s == "pix2pix") return GanKind::Pix2Pix;
  if (s == "cyclegan") return GanKind::CycleGan;
  if (s == "stargan") return GanKind::StarGan;
  throw Error(ErrorCode::ConfigInvalid, "field 'kind': unknown GAN kind '" + s + "'");
}

bool is_one_to_one(GanKind kind) { return kind != GanKind::StarGan; }

nlohmann::json GanArch::to_json() const {
  return {{"ngf", ngf},
          {"ndf", ndf},
          {"unet_depth", unet_depth},
          {"res_blocks", res_blocks},
          {"patch_layers", patch_layers},
          {"star_d_layers", star_d_layers},
          {"residual", residual}};
}

GanArch GanArch::from_json(const nlohmann::json& j) {
  GanArch a;
  a.ngf = j.value("ngf", a.ngf);
  a.ndf = j.value("ndf", a.ndf);
  a.unet_depth = j.value("unet_depth", a.unet_depth);
  a.res_blocks = j.value("res_blocks", a.res_blocks);
  a.patch_layers = j.value("patch_layers", a.patch_layers);
  a.star_d_layers = j.value("star_d_layers", a.star_d_layers);
  a.residual = j.value("residual", a.residual);
  return a;
}

double pix2pix_total(double adv, double rec, double lambda_rec) { return adv + lambda_rec * rec; }

double cyclegan_total(double adv_a, double adv_b, double cyc, double lambda_cyc) {
  return adv_a + adv_b + lambda_cyc * cyc;
}

double stargan_total(double adv, double cls_real, double cls_fake, double cyc, const StarGanLambdas& l) {
  return adv + l.cls * (cls_real + cls_fake) + l.cyc * cyc;
}

Pix2PixLosses pix2pix_losses(const GeneratorFn& G, const DiscriminatorFn& D, const PairedBatch& batch,
                             double lambda_rec) {
  if (batch.source_groups.size() != batch.target_groups.size() ||
      batch.source_groups.size() != static_cast<std::size_t>(batch.source.size(0))) {
    throw Error(ErrorCode::UnpairedData, "pair lists differ in length");
  }
  for (std::size_t i = 0; i < batch.source_groups.size(); ++i) {
    if (batch.source_groups[i] != batch.target_groups[i]) {
      throw Error(ErrorCode::UnpairedData,
                  "pair " + std::to_string(i) + " mixes groups " + batch.source_groups[i] + " and " +
                      batch.target_groups[i]);
    }
  }
  const auto fake = G(batch.source);
  Pix2PixLosses l;
  l.adv = bce(D(torch::cat({batch.source, fake}, 1)), 1.0);
  l.rec = mae(fake, batch.target);
  l.total = l.adv + lambda_rec * l.rec;
  l.d = 0.5 * (bce(D(torch::cat({batch.source, batch.target}, 1)), 1.0) +
               bce(D(torch::cat({batch.source, fake.detach()}, 1)), 0.0));
  return l;
}

CycleGanLosses cyclegan_losses(const GeneratorFn& G_ab, const GeneratorFn& G_ba, const DiscriminatorFn& D_a,
                               const DiscriminatorFn& D_b, const torch::Tensor& a, const torch::Tensor& b,
                               double lambda_cyc) {
  const auto fake_b = G_ab(a);
  const auto fake_a = G_ba(b);
  CycleGanLosses l;
  l.adv_b = lsgan(D_b(fake_b), 1.0);
  l.adv_a = lsgan(D_a(fake_a), 1.0);
  l.cyc = mae(G_ba(fake_b), a) + mae(G_ab(fake_a), b);
  l.total = l.adv_a + l.adv_b + lambda_cyc * l.cyc;
  l.d_a = 0.5 * (lsgan(D_a(a), 1.0) + lsgan(D_a(fake_a.detach()), 0.0));
  l.d_b = 0.5 * (lsgan(D_b(b), 1.0) + lsgan(D_b(fake_b.detach()), 0.0));
  return l;
}

torch::Tensor gradient_penalty(const StarDiscriminatorFn& D, const torch::Tensor& real, const torch::Tensor& fake,
                               torch::Generator* gen) {
  std::vector<std::int64_t> shape(real.dim(), 1);
  shape[0] = real.size(0);
  const auto a = gen ? torch::rand(shape, *gen, real.options()) : torch::rand(shape, real.options());
  const auto x_hat = (a * real.detach() + (1 - a) * fake.detach()).requires_grad_(true);
  const auto out = D(x_hat).src;
  const auto grad = torch::autograd::grad({out}, {x_hat}, {torch::ones_like(out)}, true, true)[0];
  return (grad.flatten(1).norm(2, 1) - 1).pow(2).mean();
}

torch::Tensor stargan_d_loss(const StarDiscriminatorFn& D, const torch::Tensor& x, const torch::Tensor& fake,
                             const torch::Tensor& source_label, const StarGanLambdas& lambdas, torch::Generator* gen) {
  const auto d_real = D(x);
  const auto cls_real = F::cross_entropy(d_real.cls, source_label.to(torch::kLong));
  const auto fake_src = D(fake.detach()).src;
  if (lambdas.gp > 0) {
    return -d_real.src.mean() + fake_src.mean() + lambdas.gp * gradient_penalty(D, x, fake, gen) +
           lambdas.cls * cls_real;
  }
  return lsgan(d_real.src, 1.0) + lsgan(fake_src, 0.0) + lambdas.cls * cls_real;
}

StarGanLosses stargan_losses(const LabelGeneratorFn& G, const StarDiscriminatorFn& D, const torch::Tensor& x,
                             const torch::Tensor& source_label, const torch::Tensor& target_label, int K,
                             const StarGanLambdas& lambdas, torch::Generator* gen) {
  if (K < 2) throw Error(ErrorCode::InvalidK, "StarGAN needs K >= 2");
  check_labels(source_label, K);
  check_labels(target_label, K);
  const auto src = source_label.to(torch::kLong);
  const auto tgt = target_label.to(torch::kLong);
  const auto fake = G(x, tgt);
  StarGanLosses l;
  const auto d_fake = D(fake);
  l.adv = lambdas.gp > 0 ? -d_fake.src.mean() : lsgan(d_fake.src, 1.0);
  l.cls_fake = F::cross_entropy(d_fake.cls, tgt);
  l.cyc = mae(G(fake, src), x);
  l.cls_real = F::cross_entropy(D(x).cls, src);
  l.g = l.adv + lambdas.cls * l.cls_fake + lambdas.cyc * l.cyc;
  l.total = l.adv + lambdas.cls * (l.cls_real.detach() + l.cls_fake) + lambdas.cyc * l.cyc;
  l.d = stargan_d_loss(D, x, fake, src, lambdas, gen);
  return l;
}

void GanFrameworkConfig::validate() const {
  if (n_critic < 1) throw Error(ErrorCode::ConfigInvalid, "field 'n_critic' must be >= 1");
  if (lambda_rec < 0 || lambda_cyc < 0 || lambda_cls < 0 || lambda_gp < 0) {
    throw Error(ErrorCode::ConfigInvalid, "field 'lambda_*': loss weights must be >= 0");
  }
  if (epochs < 0) throw Error(ErrorCode::ConfigInvalid, "field 'epochs' must be >= 0");
  if (!(lr > 0)) throw Error(ErrorCode::ConfigInvalid, "field 'lr' must be > 0");
  if (batch < 1) throw Error(ErrorCode::ConfigInvalid, "field 'batch' must be >= 1");
  if (is_one_to_one(kind) && (source_domain.empty() || target_domain.empty())) {
    throw Error(ErrorCode::ConfigInvalid, "field 'source_domain'/'target_domain' required for " + to_string(kind));
  }
  if (is_one_to_one(kind) && source_domain == target_domain) {
    throw Error(ErrorCode::ConfigInvalid, "field 'target_domain' must differ from 'source_domain'");
  }
}

nlohmann::json to_json(const GanFrameworkConfig& c) {
  nlohmann::json j{{"kind", to_string(c.kind)},
                   {"lambda_rec", c.lambda_rec},
                   {"lambda_cyc", c.lambda_cyc},
                   {"lambda_cls", c.lambda_cls},
                   {"lambda_gp", c.lambda_gp},
                   {"n_critic", c.n_critic},
                   {"epochs", c.epochs},
                   {"lr", c.lr},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"batch", c.batch},
                   {"seed", c.seed},
                   {"arch", c.arch.to_json()}};
  if (is_one_to_one(c.kind)) {
    j["source_domain"] = c.source_domain;
    j["target_domain"] = c.target_domain;
  }
  return j;
}

GanFrameworkConfig gan_config_from_json(const nlohmann::json& j) {
  GanFrameworkConfig c;
  auto field = [&](const char* name, auto& dst) {
    if (!j.contains(name)) return;
    try {
      j.at(name).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::ConfigInvalid, std::string("field '") + name + "' has the wrong type");
    }
  };
  std::string kind = to_string(c.kind);
  field("kind", kind);
  c.kind = gan_kind_from_string(kind);
  field("lambda_rec", c.lambda_rec);
  field("lambda_cyc", c.lambda_cyc);
  field("lambda_cls", c.lambda_cls);
  field("lambda_gp", c.lambda_gp);
  field("n_critic", c.n_critic);
  field("epochs", c.epochs);
  field("lr", c.lr);
  field("beta1", c.beta1);
  field("beta2", c.beta2);
  field("batch", c.batch);
  field("seed", c.seed);
  field("source_domain", c.source_domain);
  field("target_domain", c.target_domain);
  if (j.contains("arch")) c.arch = GanArch::from_json(j.at("arch"));
  c.validate();
  return c;
}

GanModel::GanModel(GanFrameworkConfig config, std::vector<DomainLabel> domains, Shape input_shape)
    : config_(std::move(config)), domains_(std::move(domains)), input_shape_(input_shape) {
  config_.validate();
  if (domains_.size() < 2) throw Error(ErrorCode::InvalidK, "GAN needs >= 2 domains");
  if (is_one_to_one(config_.kind)) {
    source_index();
    target_index();
  }
  const auto& a = config_.arch;
  torch::manual_seed(derive_seed(config_.seed, "init"));
  root_ = std::make_shared<torch::nn::Module>();
  switch (config_.kind) {
    case GanKind::Pix2Pix:
      unet_g = root_->register_module("g", UNetGenerator3d(1, 1, a.ngf, a.unet_depth, a.residual));
      patch_d = root_->register_module("d", PatchDiscriminator3d(2, a.ndf, a.patch_layers, NormKind::Batch));
      break;
    case GanKind::CycleGan:
      g_ab = root_->register_module("g_ab", ResnetGenerator3d(1, 1, a.ngf, a.res_blocks, false, a.residual));
      g_ba = root_->register_module("g_ba", ResnetGenerator3d(1, 1, a.ngf, a.res_blocks, false, a.residual));
      d_a = root_->register_module("d_a", PatchDiscriminator3d(1, a.ndf, a.patch_layers, NormKind::Instance));
      d_b = root_->register_module("d_b", PatchDiscriminator3d(1, a.ndf, a.patch_layers, NormKind::Instance));
      break;
    case GanKind::StarGan:
      star_g = root_->register_module("g", ResnetGenerator3d(1 + K(), 1, a.ngf, a.res_blocks, true, a.residual));
      star_d = root_->register_module("d", StarDiscriminator3d(input_shape_, a.ndf, a.star_d_layers, K()));
      break;
  }
  use_channels_last(*root_);
  root_->eval();
}

int GanModel::source_index() const {
  auto i = index_of(domains_, config_.source_domain);
  if (!i) throw Error(ErrorCode::UnknownDomain, "unknown source domain '" + config_.source_domain + "'");
  return *i;
}

int GanModel::target_index() const {
  auto i = index_of(domains_, config_.target_domain);
  if (!i) throw Error(ErrorCode::UnknownDomain, "unknown target domain '" + config_.target_domain + "'");
  return *i;
}

std::vector<StatMap> GanModel::transfer(std::span<const StatMap* const> sources, const DomainLabel& target,
                                        const Mask* mask) {
  if (target.index < 0 || target.index >= K() || domains_[target.index].name != target.name) {
    throw Error(ErrorCode::UnknownDomain, "target '" + target.name + "' is not a domain of this model");
  }
  if (sources.empty()) return {};
  ResnetGenerator3d* resnet = nullptr;
  if (is_one_to_one(config_.kind)) {
    for (const auto* s : sources) {
      const bool forward = s->domain.name == config_.source_domain && target.name == config_.target_domain;
      const bool backward = config_.kind == GanKind::CycleGan && s->domain.name == config_.target_domain &&
                            target.name == config_.source_domain;
      if (!forward && !backward) {
        throw Error(ErrorCode::DirectionMismatch, to_string(config_.kind) + " trained for " + config_.source_domain +
                                                      " -> " + config_.target_domain + ", asked " + s->domain.name +
                                                      " -> " + target.name);
      }
      if (config_.kind == GanKind::CycleGan) {
        auto* g = forward ? &g_ab : &g_ba;
        if (resnet && resnet != g) throw Error(ErrorCode::DirectionMismatch, "mixed source domains in one batch");
        resnet = g;
      }
    }
  }
  torch::NoGradGuard no_grad;
  root_->eval();
  std::vector<StatMap> out;
  const auto m = mask ? mask_tensor(*mask) : torch::Tensor();
  constexpr std::size_t kChunk = 16;
  for (std::size_t s = 0; s < sources.size(); s += kChunk) {
    const auto part = sources.subspan(s, std::min(kChunk, sources.size() - s));
    const auto x = stack_maps(part);
    torch::Tensor y;
    switch (config_.kind) {
      case GanKind::Pix2Pix: y = unet_g->forward(x); break;
      case GanKind::CycleGan: y = (*resnet)->forward(x); break;
      case GanKind::StarGan:
        y = star_g->forward(support_label_channels(x, torch::full({x.size(0)}, target.index, torch::kLong), K()));
        break;
    }
    y = y.clamp(-1.0, 1.0);
    if (mask) y = y * m;
    for (std::size_t i = 0; i < part.size(); ++i) {
      StatMap g = from_tensor(y[static_cast<std::int64_t>(i)], *part[i]);
      g.domain = target;
      g.norm_params.reset();
      out.push_back(std::move(g));
    }
  }
  return out;
}

nlohmann::json GanModel::manifest() const {
  std::vector<std::string> names;
  for (const auto& d : domains_) names.push_back(d.name);
  nlohmann::json j{{"kind", "gan"},
                   {"framework", to_string(config_.kind)},
                   {"K", K()},
                   {"domains", names},
                   {"lambdas",
                    {{"rec", config_.lambda_rec},
                     {"cyc", config_.lambda_cyc},
                     {"cls", config_.lambda_cls},
                     {"gp", config_.lambda_gp}}},
                   {"n_critic", config_.n_critic},
                   {"epochs", config_.epochs},
                   {"lr", config_.lr},
                   {"betas", {config_.beta1, config_.beta2}},
                   {"batch", config_.batch},
                   {"seed", config_.seed},
                   {"arch", config_.arch.to_json()},
                   {"input_shape", {input_shape_.nx, input_shape_.ny, input_shape_.nz}}};
  if (is_one_to_one(config_.kind)) {
    j["direction"] = {{"source", config_.source_domain}, {"target", config_.target_domain}};
  } else {
    j["direction"] = nullptr;
  }
  return j;
}

void GanModel::save(const std::filesystem::path& manifest_path) const {
  auto weights = manifest_path;
  weights.replace_extension(".pt");
  save_module(*root_, weights);
  auto j = manifest();
  j["weights"] = weights.filename().string();
  write_json_atomic(j, manifest_path);
}

GanModel GanModel::load(const std::filesystem::path& manifest_path) {
  const auto j = read_json_file(manifest_path);
  try {
    if (j.at("kind").get<std::string>() != "gan") {
      throw Error(ErrorCode::ConfigInvalid, manifest_path.string() + " is not a GAN checkpoint");
    }
    GanFrameworkConfig c;
    c.kind = gan_kind_from_string(j.at("framework").get<std::string>());
    c.lambda_rec = j.at("lambdas").at("rec").get<double>();
    c.lambda_cyc = j.at("lambdas").at("cyc").get<double>();
    c.lambda_cls = j.at("lambdas").at("cls").get<double>();
    c.lambda_gp = j.at("lambdas").value("gp", 0.0);
    c.n_critic = j.value("n_critic", 1);
    c.epochs = j.at("epochs").get<int>();
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("betas").at(0).get<double>();
    c.beta2 = j.at("betas").at(1).get<double>();
    c.batch = j.at("batch").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.arch = GanArch::from_json(j.at("arch"));
    if (j.at("direction").is_object()) {
      c.source_domain = j.at("direction").at("source").get<std::string>();
      c.target_domain = j.at("direction").at("target").get<std::string>();
    }
    std::vector<DomainLabel> domains;
    const auto names = j.at("domains").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < names.size(); ++i) domains.push_back({static_cast<int>(i), names[i]});
    const auto s = j.at("input_shape").get<std::vector<int>>();
    GanModel model(c, domains, {s.at(0), s.at(1), s.at(2)});
    load_module(*model.root_, manifest_path.parent_path() / j.at("weights").get<std::string>());
    model.root_->eval();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, manifest_path.string() + ": " + e.what());
  }
}

std::vector<std::pair<const StatMap*, const StatMap*>> paired_examples(const Dataset& data, int source, int target) {
  std::vector<std::pair<const StatMap*, const StatMap*>> out;
  for (const auto& g : data.groups()) {
    const auto* s = data.find(g, source);
    const auto* t = data.find(g, target);
    if (s && t) out.emplace_back(s, t);
  }
  if (out.empty()) {
    throw Error(ErrorCode::PairingUnavailable, "no group has both " + data.domains.at(source).name + " and " +
                                                   data.domains.at(target).name + " maps");
  }
  return out;
}

GanTrainResult train_gan(GanModel& model, const Dataset& train, const GanLossLogger& log) {
  const auto& cfg = model.config();
  if (train.domain_names() != [&] {
        std::vector<std::string> n;
        for (const auto& d : model.domains()) n.push_back(d.name);
        return n;
      }()) {
    throw Error(ErrorCode::DomainSetMismatch, "training data domains differ from the model's");
  }
  GanTrainResult result;
  std::mt19937_64 rng(derive_seed(cfg.seed, "batching"));
  auto gen = make_generator(derive_seed(cfg.seed, "train"));
  torch::manual_seed(derive_seed(cfg.seed, "train"));
  const auto adam = [&](std::vector<torch::Tensor> params) {
    return torch::optim::Adam(std::move(params),
                              torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}));
  };
  const std::size_t b = static_cast<std::size_t>(cfg.batch);
  const auto batch_of = [&](const std::vector<const StatMap*>& pool, const std::vector<std::size_t>& order,
                            std::size_t k) {
    std::vector<const StatMap*> maps;
    for (std::size_t i = k * b; i < std::min(order.size(), (k + 1) * b); ++i) maps.push_back(pool[order[i]]);
    return maps;
  };
  auto emit = [&](int epoch, int k, double g, double d, double aux) {
    if (log) log({epoch, k, g, d, aux});
  };
  // Generated maps are masked like the real ones.
  const auto mask_t = mask_tensor(train.mask);

  if (cfg.kind == GanKind::Pix2Pix) {
    const auto pairs = paired_examples(train, model.source_index(), model.target_index());
    std::vector<const StatMap*> src, tgt;
    for (const auto& [s, t] : pairs) {
      src.push_back(s);
      tgt.push_back(t);
    }
    auto& G = model.unet_g;
    auto& D = model.patch_d;
    auto opt_g = adam(G->parameters());
    auto opt_d = adam(D->parameters());
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      model.all().train();
      std::shuffle(order.begin(), order.end(), rng);
      double tg = 0, td = 0, ta = 0;
      const int n = batches_per_epoch(order.size(), cfg.batch);
      for (int k = 0; k < n; ++k) {
        const auto s = batch_of(src, order, k);
        const auto t = batch_of(tgt, order, k);
        PairedBatch pb{stack_maps(s), stack_maps(t), {}, {}};
        for (std::size_t i = 0; i < s.size(); ++i) {
          pb.source_groups.push_back(s[i]->group_id);
          pb.target_groups.push_back(t[i]->group_id);
        }
        auto l = pix2pix_losses([&](const torch::Tensor& x) { return G->forward(x) * mask_t; },
                                [&](const torch::Tensor& x) { return D->forward(x); }, pb, cfg.lambda_rec);
        opt_g.zero_grad();
        l.total.backward();
        opt_g.step();
        opt_d.zero_grad();
        l.d.backward();
        opt_d.step();
        const double g = l.total.item<double>(), d = l.d.item<double>(), a = l.rec.item<double>();
        emit(epoch, k, g, d, a);
        tg += g, td += d, ta += a;
        ++result.steps;
      }
      result.epoch_g_loss.push_back(n ? tg / n : 0);
      result.epoch_d_loss.push_back(n ? td / n : 0);
      result.epoch_aux_loss.push_back(n ? ta / n : 0);
    }
  } else if (cfg.kind == GanKind::CycleGan) {
    std::vector<const StatMap*> pa, pb;
    for (const auto& m : train.maps) {
      if (m.domain.index == model.source_index()) pa.push_back(&m);
      if (m.domain.index == model.target_index()) pb.push_back(&m);
    }
    if (pa.empty() || pb.empty()) {
      throw Error(ErrorCode::PairingUnavailable, "CycleGAN needs maps of both " + cfg.source_domain + " and " +
                                                     cfg.target_domain);
    }
    auto params = model.g_ab->parameters();
    for (auto& p : model.g_ba->parameters()) params.push_back(p);
    auto opt_g = adam(params);
    auto dparams = model.d_a->parameters();
    for (auto& p : model.d_b->parameters()) dparams.push_back(p);
    auto opt_d = adam(dparams);
    std::vector<std::size_t> oa(pa.size()), ob(pb.size());
    std::iota(oa.begin(), oa.end(), 0);
    std::iota(ob.begin(), ob.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      model.all().train();
      std::shuffle(oa.begin(), oa.end(), rng);
      std::shuffle(ob.begin(), ob.end(), rng);
      double tg = 0, td = 0, ta = 0;
      const int n = batches_per_epoch(oa.size(), cfg.batch);
      for (int k = 0; k < n; ++k) {
        const auto xa = batch_of(pa, oa, k);
        std::vector<const StatMap*> xb;
        for (std::size_t i = 0; i < xa.size(); ++i) xb.push_back(pb[ob[(k * b + i) % ob.size()]]);
        auto l = cyclegan_losses([&](const torch::Tensor& x) { return model.g_ab->forward(x) * mask_t; },
                                 [&](const torch::Tensor& x) { return model.g_ba->forward(x) * mask_t; },
                                 [&](const torch::Tensor& x) { return model.d_a->forward(x); },
                                 [&](const torch::Tensor& x) { return model.d_b->forward(x); }, stack_maps(xa),
                                 stack_maps(xb), cfg.lambda_cyc);
        opt_g.zero_grad();
        l.total.backward();
        opt_g.step();
        opt_d.zero_grad();
        auto d = l.d_a + l.d_b;
        d.backward();
        opt_d.step();
        const double g = l.total.item<double>(), dv = d.item<double>(), a = l.cyc.item<double>();
        emit(epoch, k, g, dv, a);
        tg += g, td += dv, ta += a;
        ++result.steps;
      }
      result.epoch_g_loss.push_back(n ? tg / n : 0);
      result.epoch_d_loss.push_back(n ? td / n : 0);
      result.epoch_aux_loss.push_back(n ? ta / n : 0);
    }
  } else {
    std::vector<const StatMap*> pool;
    std::vector<int> seen;
    for (const auto& m : train.maps) {
      pool.push_back(&m);
      if (std::find(seen.begin(), seen.end(), m.domain.index) == seen.end()) seen.push_back(m.domain.index);
    }
    if (seen.size() < 2) throw Error(ErrorCode::PairingUnavailable, "StarGAN needs labeled maps of >= 2 domains");
    const int K = model.K();
    auto& G = model.star_g;
    auto& D = model.star_d;
    auto opt_g = adam(G->parameters());
    auto opt_d = adam(D->parameters());
    const StarGanLambdas lambdas{cfg.lambda_cls, cfg.lambda_cyc, cfg.lambda_gp};
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      model.all().train();
      std::shuffle(order.begin(), order.end(), rng);
      double tg = 0, td = 0, ta = 0;
      int g_steps = 0;
      const int n = batches_per_epoch(order.size(), cfg.batch);
      for (int k = 0; k < n; ++k) {
        const auto maps = batch_of(pool, order, k);
        std::vector<std::int64_t> src;
        for (const auto* p : maps) src.push_back(p->domain.index);
        const auto src_t = torch::tensor(src, torch::kLong);
        const auto tgt_t = torch::randint(0, K, {static_cast<std::int64_t>(maps.size())}, gen, torch::kLong);
        const auto x = stack_maps(maps);
        const auto G_fn = [&](const torch::Tensor& in, const torch::Tensor& lab) {
          return G->forward(support_label_channels(in, lab, K)) * mask_t;
        };
        const auto D_fn = [&](const torch::Tensor& in) { return D->forward(in); };
        if (k % cfg.n_critic != 0) {
          torch::Tensor fake;
          {
            torch::NoGradGuard no_grad;
            fake = G_fn(x, tgt_t);
          }
          const auto d = stargan_d_loss(D_fn, x, fake, src_t, lambdas, &gen);
          opt_d.zero_grad();
          d.backward();
          opt_d.step();
          td += d.item<double>();
          continue;
        }
        auto l = stargan_losses(G_fn, D_fn, x, src_t, tgt_t, K, lambdas, &gen);
        opt_g.zero_grad();
        l.g.backward();
        opt_g.step();
        opt_d.zero_grad();
        l.d.backward();
        opt_d.step();
        const double g = l.g.item<double>(), d = l.d.item<double>(), a = l.cyc.item<double>();
        emit(epoch, k, g, d, a);
        tg += g, td += d, ta += a;
        ++g_steps;
        ++result.steps;
      }
      result.epoch_g_loss.push_back(g_steps ? tg / g_steps : 0);
      result.epoch_d_loss.push_back(n ? td / n : 0);
      result.epoch_aux_loss.push_back(g_steps ? ta / g_steps : 0);
    }
  }
  model.all().eval();
  return result;
}

StatMap gan_transfer(GanModel& model, const StatMap& source, const DomainLabel& target) {
  const StatMap* one[] = {&source};
  return model.transfer(one, target).front();
}

}  // namespace stylemap
