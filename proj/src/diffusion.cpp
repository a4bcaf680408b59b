#include "stylemap/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stylemap/rng.hpp"
#include "stylemap/tensor_utils.hpp"

namespace stylemap {

namespace {

constexpr std::int64_t kTransferChunk = 20;

torch::Tensor per_row(const std::vector<double>& table, const torch::Tensor& t, const torch::Tensor& like) {
  auto values = torch::tensor(table, torch::kFloat64).index_select(0, t.to(torch::kLong) - 1);
  std::vector<std::int64_t> shape(like.dim(), 1);
  shape[0] = t.size(0);
  return values.to(like.scalar_type()).view(shape);
}

torch::Tensor expand_cond(const torch::Tensor& cond, std::int64_t batch) {
  if (cond.dim() == 1) return cond.unsqueeze(0).expand({batch, cond.size(0)});
  if (cond.size(0) == 1 && batch > 1) return cond.expand({batch, cond.size(1)});
  return cond;
}

ConditionVector mean_latent(std::span<const std::vector<float>> latents, const std::vector<std::size_t>& chosen,
                            std::string source) {
  const std::size_t D = latents[chosen.front()].size();
  std::vector<double> acc(D, 0.0);
  for (auto i : chosen) {
    if (latents[i].size() != D) throw Error(ErrorCode::ShapeMismatch, "latents of different lengths");
    for (std::size_t d = 0; d < D; ++d) acc[d] += latents[i][d];
  }
  ConditionVector c;
  c.kind = CondKind::Latent;
  c.payload.resize(D);
  for (std::size_t d = 0; d < D; ++d) c.payload[d] = static_cast<float>(acc[d] / chosen.size());
  c.source = std::move(source);
  return c;
}

}  // namespace

void DiffusionSchedule::check_t(int t) const {
  if (t < 1 || t > T) {
    throw Error(ErrorCode::OutOfRangeT, "timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }
}

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw Error(ErrorCode::InvalidRange, "schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw Error(ErrorCode::InvalidRange, "need 0 < beta_start < beta_end < 1");
  }
  DiffusionSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  double abar = 1.0;
  for (int i = 1; i <= T; ++i) {
    const double b = beta_start + static_cast<double>(i - 1) / (T - 1) * (beta_end - beta_start);
    const double prev = abar;
    abar *= 1.0 - b;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(abar);
    s.posterior_var.push_back((1.0 - prev) / (1.0 - abar) * b);
  }
  return s;
}

std::string to_string(SamplingVariance v) { return v == SamplingVariance::Posterior ? "posterior" : "beta"; }

SamplingVariance sampling_variance_from_string(const std::string& s) {
  if (s == "posterior") return SamplingVariance::Posterior;
  if (s == "beta") return SamplingVariance::Beta;
  throw Error(ErrorCode::ConfigInvalid, "variance must be posterior or beta, got '" + s + "'");
}

void GuidanceConfig::validate(int T) const {
  if (!(w >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "guidance w must be >= 0");
  if (!(p_uncond >= 0.0 && p_uncond < 1.0)) throw Error(ErrorCode::ConfigInvalid, "p_uncond must be in [0, 1)");
  if (t_start < 0 || t_start > T) {
    throw Error(ErrorCode::OutOfRangeT, "t_start " + std::to_string(t_start) + " outside [1, " + std::to_string(T) + "]");
  }
}

NoiseSample draw_noise(const Shape& shape, std::uint64_t seed) {
  auto gen = make_generator(seed);
  return {torch::randn({1, shape.nz, shape.ny, shape.nx}, gen, torch::kFloat32), seed};
}

torch::Tensor forward_diffuse(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                              const DiffusionSchedule& schedule) {
  if (!x0.sizes().equals(eps.sizes())) throw Error(ErrorCode::ShapeMismatch, "noise shape differs from x0");
  if (t.numel() != x0.size(0)) throw Error(ErrorCode::ShapeMismatch, "one timestep per batch row expected");
  const auto tmin = t.min().item<std::int64_t>();
  const auto tmax = t.max().item<std::int64_t>();
  schedule.check_t(static_cast<int>(tmin));
  schedule.check_t(static_cast<int>(tmax));
  const auto abar = per_row(schedule.alpha_bar, t, x0);
  return torch::sqrt(abar) * x0 + torch::sqrt(1.0 - abar) * eps;
}

torch::Tensor forward_diffuse(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                              const DiffusionSchedule& schedule) {
  schedule.check_t(t);
  if (!x0.sizes().equals(eps.sizes())) throw Error(ErrorCode::ShapeMismatch, "noise shape differs from x0");
  const double abar = schedule.alpha_bar_at(t);
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

NoisyVolume forward_diffuse(const StatMap& x0, int t, const NoiseSample& eps, const DiffusionSchedule& schedule) {
  if (!x0.normalized) throw Error(ErrorCode::NotNormalized, "forward_diffuse needs a normalized map");
  schedule.check_t(t);
  const auto x = to_tensor(x0);
  if (eps.eps.numel() != x.numel()) throw Error(ErrorCode::ShapeMismatch, "noise shape differs from the map");
  return {from_tensor(forward_diffuse(x, t, eps.eps.reshape(x.sizes()), schedule), x0), t};
}

TrainingStepResult training_step(NoisePredictor& model, const torch::Tensor& x0, const torch::Tensor& cond,
                                 CondKind cond_kind, const DiffusionSchedule& schedule,
                                 const GuidanceConfig& guidance, torch::Generator& gen) {
  if (cond_kind != model.cond_kind()) {
    throw Error(ErrorCode::CondKindMismatch, "model expects " + to_string(model.cond_kind()) + " conditions, got " +
                                                 to_string(cond_kind));
  }
  const auto B = x0.size(0);
  const auto c = expand_cond(cond, B);
  if (c.size(1) != model.cond_dim()) {
    throw Error(ErrorCode::CondKindMismatch, "condition length " + std::to_string(c.size(1)) + " != " +
                                                 std::to_string(model.cond_dim()));
  }
  auto t = torch::randint(1, schedule.T + 1, {B}, gen, torch::kLong);
  auto eps = torch::randn(x0.sizes(), gen, x0.scalar_type());
  auto null_mask = torch::rand({B}, gen) < guidance.p_uncond;
  const auto x_t = forward_diffuse(x0, t, eps, schedule);
  const auto eps_hat = model.predict(x_t, t, c, null_mask);
  TrainingStepResult r;
  r.loss = torch::mse_loss(eps_hat, eps);
  r.n_null = static_cast<int>(null_mask.sum().item<std::int64_t>());
  return r;
}

torch::Tensor guided_noise(NoisePredictor& model, const torch::Tensor& x_t, int t,
                           const std::optional<torch::Tensor>& cond, double w) {
  const auto B = x_t.size(0);
  if (!cond) {
    auto dummy = torch::zeros({B, model.cond_dim()}, x_t.options());
    return model.predict(x_t, torch::full({B}, t, torch::kLong), dummy, torch::ones({B}, torch::kBool));
  }
  const auto c = expand_cond(*cond, B).to(x_t.scalar_type());
  if (w == 0.0) {
    return model.predict(x_t, torch::full({B}, t, torch::kLong), c, torch::zeros({B}, torch::kBool));
  }
  const auto both = model.predict(torch::cat({x_t, x_t}), torch::full({2 * B}, t, torch::kLong), torch::cat({c, c}),
                                  torch::cat({torch::zeros({B}, torch::kBool), torch::ones({B}, torch::kBool)}));
  const auto e_cond = both.slice(0, 0, B);
  const auto e_null = both.slice(0, B, 2 * B);
  return (1.0 + w) * e_cond - w * e_null;
}

torch::Tensor reverse_step(const torch::Tensor& x_t, int t, const torch::Tensor& eps_hat,
                           const DiffusionSchedule& schedule, torch::Generator& gen, SamplingVariance variance) {
  schedule.check_t(t);
  const double a = schedule.alpha_at(t);
  const double b = schedule.beta_at(t);
  const double abar = schedule.alpha_bar_at(t);
  auto mean = (x_t - (b / std::sqrt(1.0 - abar)) * eps_hat) / std::sqrt(a);
  if (t == 1) return mean;
  const double var = variance == SamplingVariance::Posterior ? schedule.posterior_var_at(t) : b;
  return mean + std::sqrt(var) * torch::randn(x_t.sizes(), gen, x_t.scalar_type());
}

torch::Tensor ancestral_sample(NoisePredictor& model, torch::Tensor x, int t_from,
                               const std::optional<torch::Tensor>& cond, double w,
                               const DiffusionSchedule& schedule, torch::Generator& gen, SamplingVariance variance) {
  schedule.check_t(t_from);
  torch::NoGradGuard no_grad;
  for (int t = t_from; t >= 1; --t) {
    x = reverse_step(x, t, guided_noise(model, x, t, cond, w), schedule, gen, variance);
  }
  return x;
}

torch::Tensor sample_transfer(NoisePredictor& model, const torch::Tensor& source, const torch::Tensor& cond,
                              const GuidanceConfig& guidance, const DiffusionSchedule& schedule,
                              torch::Generator& gen, SamplingVariance variance) {
  guidance.validate(schedule.T);
  const int t_start = guidance.resolved_t_start(schedule.T);
  torch::NoGradGuard no_grad;
  const auto eps = torch::randn(source.sizes(), gen, source.scalar_type());
  auto x = forward_diffuse(source, t_start, eps, schedule);
  x = ancestral_sample(model, x, t_start, cond, guidance.w, schedule, gen, variance);
  return x.clamp(-1.0, 1.0);
}

StatMap sample_transfer(NoisePredictor& model, const StatMap& source, const ConditionVector& cond,
                        const DomainLabel& target, const GuidanceConfig& guidance,
                        const DiffusionSchedule& schedule, torch::Generator& gen, SamplingVariance variance) {
  if (!source.normalized) throw Error(ErrorCode::NotNormalized, "transfer needs a normalized source");
  if (cond.kind != model.cond_kind()) {
    throw Error(ErrorCode::CondKindMismatch, "model expects " + to_string(model.cond_kind()) + " conditions");
  }
  const ConditionVector one[] = {cond};
  const auto out = sample_transfer(model, to_tensor(source).unsqueeze(0), stack_conditions(one), guidance, schedule,
                                   gen, variance);
  StatMap m = from_tensor(out, source);
  m.domain = target;
  m.norm_params.reset();
  return m;
}

ConditionVector make_condition(const DomainLabel& target, int K, CondKind mode, TargetCount n_targets,
                               std::span<const std::vector<float>> pool_latents, std::mt19937_64& rng) {
  if (mode == CondKind::OneHot) return one_hot_condition(target, K);
  if (pool_latents.empty()) throw Error(ErrorCode::EmptyPool, "no target-domain images for " + target.name);
  const std::size_t pool = pool_latents.size();
  std::vector<std::size_t> chosen(pool);
  std::iota(chosen.begin(), chosen.end(), 0);
  std::string source = "latent-all:" + target.name;
  if (n_targets) {
    if (*n_targets < 1) throw Error(ErrorCode::InvalidRange, "n_targets must be >= 1");
    if (static_cast<std::size_t>(*n_targets) > pool) {
      throw Error(ErrorCode::NTooLarge, "n_targets " + std::to_string(*n_targets) + " exceeds pool of " +
                                            std::to_string(pool) + " for " + target.name);
    }
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(*n_targets);
    source = "latent-" + std::to_string(*n_targets) + ":" + target.name;
  }
  return mean_latent(pool_latents, chosen, source);
}

ConditionVector make_condition(const DomainLabel& target, int K, CondKind mode, TargetCount n_targets,
                               std::span<const StatMap* const> pool, const Classifier* classifier,
                               std::mt19937_64& rng) {
  if (mode == CondKind::OneHot) return one_hot_condition(target, K);
  if (!classifier || !classifier->trained()) {
    throw Error(ErrorCode::NoWeights, "latent conditions need a trained classifier");
  }
  if (pool.empty()) throw Error(ErrorCode::EmptyPool, "no target-domain images for " + target.name);
  std::vector<const StatMap*> chosen(pool.begin(), pool.end());
  if (n_targets) {
    if (*n_targets < 1) throw Error(ErrorCode::InvalidRange, "n_targets must be >= 1");
    if (static_cast<std::size_t>(*n_targets) > pool.size()) {
      throw Error(ErrorCode::NTooLarge, "n_targets " + std::to_string(*n_targets) + " exceeds pool of " +
                                            std::to_string(pool.size()) + " for " + target.name);
    }
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.clear();
    for (int i = 0; i < *n_targets; ++i) chosen.push_back(pool[idx[i]]);
  }
  const auto lat = classifier->latents(chosen);
  std::vector<std::size_t> all(lat.size());
  std::iota(all.begin(), all.end(), 0);
  return mean_latent(lat, all, n_targets ? "latent-" + std::to_string(*n_targets) + ":" + target.name
                                         : "latent-all:" + target.name);
}

torch::Tensor stack_conditions(std::span<const ConditionVector> conds) {
  if (conds.empty()) throw Error(ErrorCode::EmptyInput, "no conditions");
  const auto D = static_cast<std::int64_t>(conds.front().payload.size());
  auto t = torch::empty({static_cast<std::int64_t>(conds.size()), D}, torch::kFloat32);
  auto* p = t.data_ptr<float>();
  for (const auto& c : conds) {
    if (static_cast<std::int64_t>(c.payload.size()) != D) {
      throw Error(ErrorCode::ShapeMismatch, "conditions of different lengths");
    }
    std::copy(c.payload.begin(), c.payload.end(), p);
    p += D;
  }
  return t;
}

nlohmann::json to_json(const DiffusionConfig& c) {
  return {{"T", c.T},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"cond_kind", to_string(c.cond_kind)},
          {"w", c.guidance.w},
          {"p_uncond", c.guidance.p_uncond},
          {"t_start", c.guidance.resolved_t_start(c.T)},
          {"variance", to_string(c.variance)},
          {"base_channels", c.base_channels},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"max_steps", c.max_steps},
          {"seed", c.seed}};
}

DiffusionConfig diffusion_config_from_json(const nlohmann::json& j) {
  DiffusionConfig c;
  auto field = [&](const char* name, auto& dst) {
    if (!j.contains(name)) return;
    try {
      j.at(name).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::ConfigInvalid, std::string("diffusion config field '") + name + "' has the wrong type");
    }
  };
  field("T", c.T);
  field("beta_start", c.beta_start);
  field("beta_end", c.beta_end);
  std::string kind = to_string(c.cond_kind);
  field("cond_kind", kind);
  c.cond_kind = cond_kind_from_string(kind);
  field("w", c.guidance.w);
  field("p_uncond", c.guidance.p_uncond);
  field("t_start", c.guidance.t_start);
  std::string var = to_string(c.variance);
  field("variance", var);
  c.variance = sampling_variance_from_string(var);
  field("base_channels", c.base_channels);
  field("epochs", c.epochs);
  field("batch", c.batch);
  field("lr", c.lr);
  field("max_steps", c.max_steps);
  field("seed", c.seed);
  if (c.T < 2) throw Error(ErrorCode::ConfigInvalid, "diffusion config field 'T' must be >= 2");
  if (c.epochs < 0) throw Error(ErrorCode::ConfigInvalid, "diffusion config field 'epochs' must be >= 0");
  if (c.batch < 1) throw Error(ErrorCode::ConfigInvalid, "diffusion config field 'batch' must be >= 1");
  if (!(c.lr > 0)) throw Error(ErrorCode::ConfigInvalid, "diffusion config field 'lr' must be > 0");
  if (c.base_channels < 1) throw Error(ErrorCode::ConfigInvalid, "diffusion config field 'base_channels' must be >= 1");
  c.guidance.validate(c.T);
  return c;
}

DiffusionModel::DiffusionModel(DiffusionConfig config, std::vector<DomainLabel> domains, Shape input_shape,
                               std::int64_t cond_dim)
    : config_(std::move(config)),
      domains_(std::move(domains)),
      input_shape_(input_shape),
      cond_dim_(cond_dim),
      schedule_(make_schedule(config_.T, config_.beta_start, config_.beta_end)) {
  config_.guidance.validate(config_.T);
  if (cond_dim_ < 1) throw Error(ErrorCode::ConfigInvalid, "condition dimension must be >= 1");
  if (config_.cond_kind == CondKind::OneHot && cond_dim_ != static_cast<std::int64_t>(domains_.size())) {
    throw Error(ErrorCode::CondKindMismatch, "one-hot conditions need cond_dim == K");
  }
  UNetArch arch;
  arch.base_channels = config_.base_channels;
  arch.cond_dim = cond_dim_;
  arch.max_timestep = config_.T;
  torch::manual_seed(derive_seed(config_.seed, "init"));
  net_ = UNet3d(arch);
  use_channels_last(*net_);
}

torch::Tensor DiffusionModel::predict(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& cond,
                                      const torch::Tensor& null_mask) {
  if (cond.size(-1) != cond_dim_) {
    throw Error(ErrorCode::CondKindMismatch, "condition length " + std::to_string(cond.size(-1)) + " != " +
                                                 std::to_string(cond_dim_));
  }
  return net_->forward(x_t, t, expand_cond(cond, x_t.size(0)), null_mask);
}

std::vector<StatMap> DiffusionModel::transfer(std::span<const StatMap* const> sources,
                                              std::span<const ConditionVector> conds, const DomainLabel& target,
                                              std::uint64_t seed, const Mask* mask) {
  if (sources.size() != conds.size()) throw Error(ErrorCode::ShapeMismatch, "one condition per source expected");
  for (const auto& c : conds) {
    if (c.kind != config_.cond_kind) {
      throw Error(ErrorCode::CondKindMismatch, "model expects " + to_string(config_.cond_kind) + " conditions, got " +
                                                   to_string(c.kind));
    }
  }
  for (const auto* s : sources) {
    if (!s->normalized) throw Error(ErrorCode::NotNormalized, "transfer needs normalized sources");
  }
  net_->eval();
  auto gen = make_generator(seed);
  const auto m = mask ? mask_tensor(*mask) : torch::Tensor();
  std::vector<StatMap> out;
  for (std::size_t s = 0; s < sources.size(); s += kTransferChunk) {
    const std::size_t e = std::min(sources.size(), s + static_cast<std::size_t>(kTransferChunk));
    const auto x0 = stack_maps(sources.subspan(s, e - s));
    const auto c = stack_conditions(conds.subspan(s, e - s));
    auto y = sample_transfer(*this, x0, c, config_.guidance, schedule_, gen, config_.variance);
    if (mask) y = y * m;
    for (std::size_t i = s; i < e; ++i) {
      StatMap g = from_tensor(y[static_cast<std::int64_t>(i - s)], *sources[i]);
      g.domain = target;
      g.norm_params.reset();
      out.push_back(std::move(g));
    }
  }
  return out;
}

nlohmann::json DiffusionModel::manifest() const {
  std::vector<std::string> names;
  for (const auto& d : domains_) names.push_back(d.name);
  auto arch = net_->arch().to_json();
  auto j = to_json(config_);
  j["kind"] = "ddpm";
  j["cond_dim"] = cond_dim_;
  j["arch"] = arch;
  j["domains"] = names;
  j["input_shape"] = {input_shape_.nx, input_shape_.ny, input_shape_.nz};
  j["classifier"] = classifier_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(classifier_path);
  return j;
}

void DiffusionModel::save(const std::filesystem::path& manifest_path) const {
  auto weights = manifest_path;
  weights.replace_extension(".pt");
  save_module(*net_, weights);
  auto j = manifest();
  j["weights"] = weights.filename().string();
  write_json_atomic(j, manifest_path);
}

DiffusionModel DiffusionModel::load(const std::filesystem::path& manifest_path) {
  const auto j = read_json_file(manifest_path);
  try {
    if (j.at("kind").get<std::string>() != "ddpm") {
      throw Error(ErrorCode::ConfigInvalid, manifest_path.string() + " is not a diffusion checkpoint");
    }
    auto config = diffusion_config_from_json(j);
    config.base_channels = j.at("arch").at("base_channels").get<std::int64_t>();
    std::vector<DomainLabel> domains;
    const auto names = j.at("domains").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < names.size(); ++i) domains.push_back({static_cast<int>(i), names[i]});
    const auto s = j.at("input_shape").get<std::vector<int>>();
    DiffusionModel model(config, domains, {s.at(0), s.at(1), s.at(2)}, j.at("cond_dim").get<std::int64_t>());
    if (j.contains("classifier") && j.at("classifier").is_string()) {
      model.classifier_path = j.at("classifier").get<std::string>();
    }
    load_module(*model.net_, manifest_path.parent_path() / j.at("weights").get<std::string>());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, manifest_path.string() + ": " + e.what());
  }
}

DiffusionTrainResult train_diffusion(DiffusionModel& model, const Dataset& train, const Classifier* classifier,
                                     const LossLogger& log) {
  const auto& cfg = model.config();
  if (train.maps.empty()) throw Error(ErrorCode::EmptyInput, "no training maps");
  std::vector<const StatMap*> pool;
  for (const auto& m : train.maps) pool.push_back(&m);

  std::vector<ConditionVector> conds;
  if (cfg.cond_kind == CondKind::OneHot) {
    for (const auto* m : pool) conds.push_back(one_hot_condition(m->domain, train.K()));
  } else {
    if (!classifier || !classifier->trained()) {
      throw Error(ErrorCode::NoWeights, "latent conditioning needs a trained classifier");
    }
    for (std::size_t s = 0; s < pool.size(); s += 32) {
      const auto part = std::span<const StatMap* const>(pool).subspan(s, std::min<std::size_t>(32, pool.size() - s));
      for (auto& l : classifier->latents(part)) conds.push_back({CondKind::Latent, std::move(l), "own"});
    }
  }
  const auto cond_all = stack_conditions(conds);

  DiffusionTrainResult result;
  auto& net = model.net();
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.lr));
  std::mt19937_64 rng(derive_seed(cfg.seed, "batching"));
  auto gen = make_generator(derive_seed(cfg.seed, "train"));
  std::vector<std::int64_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t b = static_cast<std::size_t>(cfg.batch);
  bool done = cfg.max_steps > 0 && result.steps >= cfg.max_steps;

  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const int n_batches = batches_per_epoch(order.size(), cfg.batch);
    double total = 0.0;
    int count = 0;
    for (int k = 0; k < n_batches; ++k) {
      const std::size_t s = k * b;
      const std::size_t e = std::min(order.size(), s + b);
      std::vector<const StatMap*> batch;
      for (std::size_t i = s; i < e; ++i) batch.push_back(pool[order[i]]);
      const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + s, order.begin() + e), torch::kLong);
      opt.zero_grad();
      auto step = training_step(model, stack_maps(batch), cond_all.index_select(0, idx), cfg.cond_kind,
                                model.schedule(), cfg.guidance, gen);
      step.loss.backward();
      opt.step();
      const double l = step.loss.item<double>();
      if (log) log(epoch, k, l);
      result.step_loss.push_back(l);
      total += l;
      ++count;
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    result.epoch_loss.push_back(count ? total / count : 0.0);
  }
  net->eval();
  return result;
}

}  // namespace stylemap
