#include "forge/cluster_io.hpp"

#include <algorithm>

#include "forge/csv.hpp"
#include "forge/error.hpp"
#include "forge/ids.hpp"

namespace forge {

nlohmann::json to_json(const SubspaceCluster& cluster) {
  nlohmann::json means = nlohmann::json::object();
  for (const auto& dim : cluster.subspace) means[dim] = cluster.means.at(dim);
  return {{"id", cluster.id},
          {"members", cluster.members},
          {"subspace", cluster.subspace},
          {"means", std::move(means)},
          {"quality", cluster.quality}};
}

SubspaceCluster cluster_from_json(const nlohmann::json& doc) {
  try {
    SubspaceCluster c;
    c.id = doc.at("id").get<std::string>();
    c.members = doc.at("members").get<std::vector<std::string>>();
    natural_sort(c.members);
    const auto& means = doc.at("means");
    for (const auto& [dim, value] : means.items()) c.means[dim] = value.get<double>();
    if (doc.contains("subspace")) {
      c.subspace = doc.at("subspace").get<std::vector<std::string>>();
    } else {
      for (const auto& [dim, value] : c.means) c.subspace.push_back(dim);
    }
    natural_sort(c.subspace);
    if (c.subspace.size() != c.means.size() ||
        !std::all_of(c.subspace.begin(), c.subspace.end(), [&](const std::string& d) { return c.means.contains(d); })) {
      throw ValidationError("cluster '" + c.id + "': means must be given for exactly the subspace dimensions");
    }
    c.quality = doc.value("quality", 0.0);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed cluster JSON: ") + e.what());
  }
}

namespace {

nlohmann::json params_json(const DocParams& p) {
  return {{"w", p.w}, {"alpha", p.alpha}, {"beta", p.beta}, {"seed", p.seed}};
}

nlohmann::json clusters_json(std::span<const SubspaceCluster> clusters) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : clusters) out.push_back(to_json(c));
  return out;
}

}  // namespace

nlohmann::json to_json(const DocRun& run) {
  return {{"params", params_json(run.params)},
          {"r", run.r},
          {"m", run.m},
          {"clusters", clusters_json(run.clusters)},
          {"warnings", run.warnings}};
}

ClusterFile combine_runs(std::span<const DocRun> runs) {
  ClusterFile file;
  if (runs.empty()) return file;
  file.params = params_json(runs.front().params);
  nlohmann::json betas = nlohmann::json::array();
  for (const auto& run : runs) {
    betas.push_back(run.params.beta);
    file.clusters.insert(file.clusters.end(), run.clusters.begin(), run.clusters.end());
    file.warnings.insert(file.warnings.end(), run.warnings.begin(), run.warnings.end());
  }
  if (runs.size() > 1) file.params["beta"] = betas;
  return file;
}

nlohmann::json to_json(const ClusterFile& file) {
  return {{"params", file.params}, {"clusters", clusters_json(file.clusters)}, {"warnings", file.warnings}};
}

ClusterFile cluster_file_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("clusters") || !doc.at("clusters").is_array()) {
    throw ValidationError("cluster file must be an object with a 'clusters' array");
  }
  ClusterFile file;
  file.params = doc.value("params", nlohmann::json::object());
  std::vector<std::string> seen;
  for (const auto& c : doc.at("clusters")) {
    file.clusters.push_back(cluster_from_json(c));
    const auto& id = file.clusters.back().id;
    if (std::find(seen.begin(), seen.end(), id) != seen.end()) {
      throw ValidationError("duplicate cluster id '" + id + "'");
    }
    seen.push_back(id);
  }
  if (doc.contains("warnings")) file.warnings = doc.at("warnings").get<std::vector<std::string>>();
  return file;
}

std::string export_tables_csv(std::span<const SubspaceCluster> clusters, std::span<const Dimension> dims) {
  std::string out;
  csv::Row header{"dimension"};
  csv::Row members{"members"};
  for (const auto& c : clusters) {
    header.push_back(c.id);
    members.push_back(join(c.members, " "));
  }
  out += csv::format_row(header);
  out += csv::format_row(members);
  for (const auto& dim : dims) {
    csv::Row row{dim.id};
    for (const auto& c : clusters) {
      auto it = c.means.find(dim.id);
      row.push_back(it == c.means.end() ? "NA" : format_fixed(it->second, 3));
    }
    out += csv::format_row(row);
  }
  return out;
}

std::vector<SubspaceCluster> select_clusters(std::span<const SubspaceCluster> clusters,
                                             std::span<const std::string> ids) {
  std::vector<SubspaceCluster> out;
  for (const auto& id : ids) {
    auto it = std::find_if(clusters.begin(), clusters.end(), [&](const SubspaceCluster& c) { return c.id == id; });
    if (it == clusters.end()) throw ValidationError("unknown cluster id '" + id + "'");
    out.push_back(*it);
  }
  return out;
}

}  // namespace forge
