#include "stylemap/dataset.hpp"

#include <fstream>
#include <set>

namespace stylemap {

const DomainLabel& Dataset::domain(std::string_view name) const {
  for (const auto& d : domains) {
    if (d.name == name) return d;
  }
  std::string valid;
  for (const auto& d : domains) valid += (valid.empty() ? "" : ", ") + d.name;
  throw Error(ErrorCode::UnknownDomain,
              "'" + std::string(name) + "' is not a domain of this dataset (valid: " + valid + ")");
}

std::vector<std::string> Dataset::domain_names() const {
  std::vector<std::string> names;
  for (const auto& d : domains) names.push_back(d.name);
  return names;
}

std::vector<std::string> Dataset::groups() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& m : maps) {
    if (seen.insert(m.group_id).second) out.push_back(m.group_id);
  }
  return out;
}

const StatMap* Dataset::find(const std::string& group_id, int domain_index) const {
  auto it = index_.find({group_id, domain_index});
  return it == index_.end() ? nullptr : &maps[it->second];
}

std::vector<const StatMap*> Dataset::select(std::span<const std::string> group_ids,
                                            int domain_index) const {
  std::vector<const StatMap*> out;
  for (const auto& g : group_ids) {
    for (const auto& d : domains) {
      if (domain_index >= 0 && d.index != domain_index) continue;
      if (const auto* m = find(g, d.index)) out.push_back(m);
    }
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::string> group_ids) const {
  Dataset out;
  out.domains = domains;
  out.mask = mask;
  out.task_id = task_id;
  for (const auto* m : select(group_ids)) out.maps.push_back(*m);
  out.reindex();
  return out;
}

void Dataset::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    index_[{maps[i].group_id, maps[i].domain.index}] = i;
  }
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, manifest_path.string() + ": " + e.what());
  }
  const auto dir = manifest_path.parent_path();
  Dataset data;
  try {
    const auto names = j.at("domains").get<std::vector<std::string>>();
    if (names.size() < 2) throw Error(ErrorCode::InvalidK, "manifest lists fewer than 2 domains");
    for (std::size_t i = 0; i < names.size(); ++i) {
      data.domains.push_back({static_cast<int>(i), names[i]});
    }
    data.task_id = j.value("task_id", std::string{});
    data.mask = read_mask(dir / j.at("mask").get<std::string>());
    for (const auto& e : j.at("entries")) {
      auto map = read_volume(dir / e.at("path").get<std::string>());
      const auto& d = data.domain(e.at("domain").get<std::string>());
      map.domain = d;
      map.group_id = e.at("group_id").get<std::string>();
      if (!(map.shape == data.mask.shape)) {
        throw Error(ErrorCode::ShapeMismatch, "volume " + e.at("path").get<std::string>() +
                                                  " does not match the mask shape");
      }
      if (!map.normalized) map = minmax_normalize(apply_mask(map, data.mask), data.mask).first;
      data.maps.push_back(std::move(map));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, manifest_path.string() + ": " + e.what());
  }
  data.reindex();
  return data;
}

std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir,
                                    const nlohmann::json& extra) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "volumes", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json j = extra;
  j["schema_version"] = 1;
  j["domains"] = data.domain_names();
  j["task_id"] = data.task_id;
  j["mask"] = "mask.json";
  write_mask(data.mask, dir / "mask.json");
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& m : data.maps) {
    const std::string rel = "volumes/" + m.group_id + "_" + m.domain.name + ".json";
    write_volume(m, dir / rel);
    entries.push_back({{"group_id", m.group_id}, {"domain", m.domain.name}, {"path", rel}});
  }
  j["entries"] = std::move(entries);
  const auto manifest = dir / "manifest.json";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + manifest.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + manifest.string());
  return manifest;
}

}  // namespace stylemap
