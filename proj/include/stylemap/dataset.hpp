#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stylemap/volume.hpp"

namespace stylemap {

/// One manifest row.
struct ManifestEntry {
  std::string group_id;
  std::string domain;
  std::string path;  // relative to the manifest directory
};

/// A loaded, masked, normalized multi-pipeline collection. Every map shares the
/// mask shape; `domains` is ordered by index.
class Dataset {
 public:
  std::vector<DomainLabel> domains;
  Mask mask;
  std::vector<StatMap> maps;
  std::string task_id;

  const DomainLabel& domain(std::string_view name) const;
  std::vector<std::string> domain_names() const;
  int K() const { return static_cast<int>(domains.size()); }
  Shape shape() const { return mask.shape; }

  /// Unique group ids in first-seen order.
  std::vector<std::string> groups() const;

  /// nullptr when the (group, domain) map is absent.
  const StatMap* find(const std::string& group_id, int domain_index) const;

  /// Maps restricted to the given groups (and optionally one domain).
  std::vector<const StatMap*> select(std::span<const std::string> group_ids,
                                     int domain_index = -1) const;

  /// Copy holding only the listed groups.
  Dataset subset(std::span<const std::string> group_ids) const;

  /// Rebuilds the lookup index; call after editing `maps` directly.
  void reindex();

 private:
  std::map<std::pair<std::string, int>, std::size_t> index_;
};

/// Reads a manifest and its volumes. Maps that are not yet normalized are
/// masked and min-max normalized on load.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes volumes, mask and manifest under `dir`; `extra` is merged into the
/// manifest (e.g. the generating config and the styles).
std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir,
                                    const nlohmann::json& extra = nlohmann::json::object());

}  // namespace stylemap
