#include "stylemap/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "stylemap/rng.hpp"
#include "stylemap/tensor_utils.hpp"

namespace stylemap {

namespace {

std::span<const float> values(const StatMap& m) { return {m.voxels.data(), m.voxels.size()}; }

StatMap in_units(const StatMap& m, const std::optional<NormParams>& params, bool denormalized) {
  if (!denormalized) return m;
  if (!params) throw Error(ErrorCode::InvalidRange, "no normalization parameters for " + m.group_id);
  return denormalize(m, *params);
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::vector<Direction> canonical_directions() {
  return {{"fsl-1", "spm-0"}, {"spm-0", "fsl-1"}, {"fsl-1", "spm-1"}, {"fsl-1", "fsl-0"}};
}

Direction parse_direction(const std::string& s) {
  for (const std::string sep : {"->", ":"}) {
    const auto p = s.find(sep);
    if (p != std::string::npos && p > 0 && p + sep.size() < s.size()) {
      return {s.substr(0, p), s.substr(p + sep.size())};
    }
  }
  throw Error(ErrorCode::ConfigInvalid, "direction must look like source->target, got '" + s + "'");
}

DomainPredictor classifier_predictor(const Classifier& clf) {
  return [&clf](std::span<const StatMap* const> maps) {
    std::vector<int> out;
    for (const auto& d : clf.predict(maps)) out.push_back(d.argmax());
    return out;
  };
}

double transfer_accuracy(std::span<const TransferCase> cases, const DomainPredictor& predict) {
  if (cases.empty()) throw Error(ErrorCode::EmptySet, "transfer accuracy over no cases");
  std::vector<const StatMap*> maps;
  for (const auto& c : cases) maps.push_back(&c.generated);
  const auto pred = predict(maps);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) hits += pred.at(i) == cases[i].target_domain.index;
  return static_cast<double>(hits) / cases.size();
}

double inception_score(std::span<const StatMap* const> maps, const Classifier& clf) {
  if (maps.empty()) throw Error(ErrorCode::EmptySet, "inception score over no maps");
  const auto dists = clf.predict(maps);
  return inception_score(std::span<const LabelDistribution>(dists));
}

TransferModel identity_model() {
  return [](std::span<const StatMap* const> sources, const DomainLabel& target, std::uint64_t) {
    std::vector<StatMap> out;
    for (const auto* s : sources) {
      StatMap m = *s;
      m.domain = target;
      out.push_back(std::move(m));
    }
    return out;
  };
}

TransferModel oracle_model(const Dataset& truth) {
  return [&truth](std::span<const StatMap* const> sources, const DomainLabel& target, std::uint64_t) {
    std::vector<StatMap> out;
    for (const auto* s : sources) {
      const auto* t = truth.find(s->group_id, target.index);
      if (!t) throw Error(ErrorCode::InsufficientTestData, "no truth for " + s->group_id + "/" + target.name);
      out.push_back(*t);
    }
    return out;
  };
}

MetricReport evaluate_transfers(const TransferModel& model, const Dataset& test, std::span<const Direction> directions,
                                const Classifier* classifier, const EvalOptions& options,
                                std::vector<TransferCase>* cases_out) {
  if (options.n_images < 2) throw Error(ErrorCode::ConfigInvalid, "n_images must be >= 2");
  MetricReport report;
  report.options = options;
  report.train_task = test.task_id;
  report.eval_task = test.task_id;
  const Mask* mask = options.in_mask ? &test.mask : nullptr;
  const auto groups = test.groups();

  std::vector<TransferCase> all_cases;
  for (const auto& dir : directions) {
    const auto& sd = test.domain(dir.source);
    const auto& td = test.domain(dir.target);
    std::vector<std::string> eligible;
    for (const auto& g : groups) {
      if (test.find(g, sd.index) && test.find(g, td.index)) eligible.push_back(g);
    }
    if (eligible.size() < static_cast<std::size_t>(options.n_images)) {
      throw Error(ErrorCode::InsufficientTestData,
                  dir.label() + ": " + std::to_string(eligible.size()) + " test groups, need " +
                      std::to_string(options.n_images));
    }
    std::mt19937_64 rng(derive_seed(options.seed, "eval-groups:" + dir.label()));
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(options.n_images);

    std::vector<const StatMap*> sources;
    for (const auto& g : eligible) sources.push_back(test.find(g, sd.index));
    const auto generated = model(sources, td, derive_seed(options.seed, "sample:" + dir.label()));
    if (generated.size() != sources.size()) {
      throw Error(ErrorCode::ShapeMismatch, "model returned " + std::to_string(generated.size()) + " maps for " +
                                                std::to_string(sources.size()) + " sources");
    }

    DirectionMetrics row;
    row.direction = dir;
    row.n = options.n_images;
    row.groups = eligible;
    std::vector<double> r, e, r0, e0;
    std::vector<TransferCase> cases;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const auto* truth = test.find(eligible[i], td.index);
      const auto tu = in_units(*truth, truth->norm_params, options.denormalized);
      const auto gu = in_units(generated[i], generated[i].norm_params ? generated[i].norm_params : truth->norm_params,
                               options.denormalized);
      const auto su = in_units(*sources[i], sources[i]->norm_params, options.denormalized);
      r.push_back(100.0 * pearson(values(gu), values(tu), mask));
      e.push_back(mse(values(gu), values(tu), mask));
      r0.push_back(100.0 * pearson(values(su), values(tu), mask));
      e0.push_back(mse(values(su), values(tu), mask));
      cases.push_back({sd, td, *sources[i], *truth, generated[i]});
    }
    row.mean_r = mean(r);
    row.se_r = standard_error(r);
    row.mean_mse = mean(e);
    row.se_mse = standard_error(e);
    row.initial_r = mean(r0);
    row.initial_se_r = standard_error(r0);
    row.initial_mse = mean(e0);
    row.initial_se_mse = standard_error(e0);
    if (classifier) row.accuracy = transfer_accuracy(cases, classifier_predictor(*classifier));
    report.rows.push_back(std::move(row));
    for (auto& c : cases) all_cases.push_back(std::move(c));
  }

  if (classifier && !all_cases.empty()) {
    std::vector<const StatMap*> gen, src;
    for (const auto& c : all_cases) {
      gen.push_back(&c.generated);
      src.push_back(&c.source);
    }
    report.inception_score = inception_score(gen, *classifier);
    report.initial_inception_score = inception_score(src, *classifier);
    report.target_class_accuracy = transfer_accuracy(all_cases, classifier_predictor(*classifier));
  }
  if (cases_out) *cases_out = std::move(all_cases);
  return report;
}

MetricReport cross_task_evaluation(const TransferModel& model, const std::vector<std::string>& model_domains,
                                   const std::string& train_task, const Dataset& test,
                                   std::span<const Direction> directions, const Classifier* classifier,
                                   const EvalOptions& options) {
  if (model_domains != test.domain_names()) {
    std::string a, b;
    for (const auto& d : model_domains) a += (a.empty() ? "" : ",") + d;
    for (const auto& d : test.domain_names()) b += (b.empty() ? "" : ",") + d;
    throw Error(ErrorCode::DomainSetMismatch, "model domains [" + a + "] vs test domains [" + b + "]");
  }
  auto report = evaluate_transfers(model, test, directions, classifier, options);
  report.train_task = train_task;
  report.eval_task = test.task_id;
  return report;
}

std::string report_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "source,target,n,mean_r,se_r,mean_mse,se_mse,initial_r,initial_mse\n";
  for (const auto& row : report.rows) {
    os << row.direction.source << ',' << row.direction.target << ',' << row.n << ',' << fixed(row.mean_r) << ','
       << fixed(row.se_r) << ',' << fixed(row.mean_mse, 8) << ',' << fixed(row.se_mse, 8) << ','
       << fixed(row.initial_r) << ',' << fixed(row.initial_mse, 8) << '\n';
  }
  return os.str();
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row{{"source", r.direction.source},
                       {"target", r.direction.target},
                       {"n", r.n},
                       {"mean_r", r.mean_r},
                       {"se_r", r.se_r},
                       {"mean_mse", r.mean_mse},
                       {"se_mse", r.se_mse},
                       {"initial_r", r.initial_r},
                       {"initial_se_r", r.initial_se_r},
                       {"initial_mse", r.initial_mse},
                       {"initial_se_mse", r.initial_se_mse},
                       {"groups", r.groups}};
    row["accuracy"] = r.accuracy >= 0 ? nlohmann::json(r.accuracy) : nlohmann::json(nullptr);
    rows.push_back(row);
  }
  auto opt = [](double v) { return v >= 0 ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"model", report.model},
          {"train_task", report.train_task},
          {"eval_task", report.eval_task},
          {"n_images", report.options.n_images},
          {"seed", report.options.seed},
          {"in_mask", report.options.in_mask},
          {"denormalized", report.options.denormalized},
          {"directions", rows},
          {"inception_score", opt(report.inception_score)},
          {"initial_inception_score", opt(report.initial_inception_score)},
          {"target_class_accuracy", opt(report.target_class_accuracy)}};
}

std::string format_table(std::span<const MetricReport> reports) {
  if (reports.empty()) return {};
  const auto& dirs = reports.front().rows;
  auto cell = [](double r, double se) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << r << " (" << se << ")";
    return os.str();
  };
  std::size_t name_w = 7;
  for (const auto& rep : reports) name_w = std::max(name_w, rep.model.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "Model";
  for (const auto& d : dirs) os << " | " << std::setw(16) << d.direction.label();
  os << " | IS\n";
  os << std::setw(static_cast<int>(name_w)) << "Initial";
  for (const auto& d : dirs) os << " | " << std::setw(16) << cell(d.initial_r, d.initial_se_r);
  os << " | " << (reports.front().initial_inception_score >= 0 ? fixed(reports.front().initial_inception_score, 2) : "-")
     << "\n";
  for (const auto& rep : reports) {
    os << std::setw(static_cast<int>(name_w)) << rep.model;
    for (const auto& d : rep.rows) os << " | " << std::setw(16) << cell(d.mean_r, d.se_r);
    os << " | " << (rep.inception_score >= 0 ? fixed(rep.inception_score, 2) : "-") << "\n";
  }
  return os.str();
}

std::pair<std::filesystem::path, std::filesystem::path> write_report(const MetricReport& report,
                                                                     const std::filesystem::path& stem) {
  auto csv = stem;
  csv += ".csv";
  auto json = stem;
  json += ".json";
  {
    std::ofstream out(csv, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + csv.string());
    out << report_csv(report);
    if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + csv.string());
  }
  write_json_atomic(to_json(report), json);
  return {csv, json};
}

LayerCorrelationTable layerwise_feature_correlation(const Classifier& clf, const Dataset& data,
                                                    std::span<const Direction> pairs, int max_groups) {
  LayerCorrelationTable table;
  const int stages = static_cast<int>(clf.arch().channels.size());
  table.layers = std::min(4, stages);
  for (const auto& p : pairs) {
    const auto& a = data.domain(p.source);
    const auto& b = data.domain(p.target);
    std::vector<const StatMap*> ma, mb;
    for (const auto& g : data.groups()) {
      const auto* x = data.find(g, a.index);
      const auto* y = data.find(g, b.index);
      if (x && y) {
        ma.push_back(x);
        mb.push_back(y);
      }
      if (static_cast<int>(ma.size()) >= max_groups) break;
    }
    if (ma.empty()) throw Error(ErrorCode::EmptySet, "no group holds both " + p.source + " and " + p.target);
    const auto fa = clf.forward(stack_maps(ma));
    const auto fb = clf.forward(stack_maps(mb));
    std::vector<double> per_layer;
    for (int l = 0; l < table.layers; ++l) {
      const auto xa = fa.stages[l].contiguous();
      const auto xb = fb.stages[l].contiguous();
      double sum = 0;
      int count = 0;
      for (std::int64_t g = 0; g < xa.size(0); ++g) {
        for (std::int64_t c = 0; c < xa.size(1); ++c) {
          const auto ta = xa[g][c].flatten().contiguous();
          const auto tb = xb[g][c].flatten().contiguous();
          try {
            sum += pearson(std::span<const float>(ta.data_ptr<float>(), ta.numel()),
                           std::span<const float>(tb.data_ptr<float>(), tb.numel()));
            ++count;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::ConstantInput && e.code() != ErrorCode::EmptyInput) throw;
          }
        }
      }
      per_layer.push_back(count ? 100.0 * sum / count : 0.0);
    }
    table.pairs.push_back(p);
    table.r.push_back(std::move(per_layer));
  }
  return table;
}

std::string layer_table_csv(const LayerCorrelationTable& table) {
  std::ostringstream os;
  os << "source,target";
  for (int l = 1; l <= table.layers; ++l) os << ",layer" << l;
  os << "\n";
  for (std::size_t i = 0; i < table.pairs.size(); ++i) {
    os << table.pairs[i].source << ',' << table.pairs[i].target;
    for (double v : table.r[i]) os << ',' << fixed(v, 4);
    os << "\n";
  }
  return os.str();
}

}  // namespace stylemap
