#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/dataset.hpp"
#include "forge/doc_engine.hpp"

namespace forge {

nlohmann::json to_json(const SubspaceCluster& cluster);
/// Accepts the output of to_json; `quality` is optional.
SubspaceCluster cluster_from_json(const nlohmann::json& doc);

/// {params:{w,alpha,beta,seed}, r, m, clusters:[...], warnings:[...]}
nlohmann::json to_json(const DocRun& run);

/// Clusters of one or more runs as stored on disk.
struct ClusterFile {
  nlohmann::json params = nlohmann::json::object();
  std::vector<SubspaceCluster> clusters;
  std::vector<std::string> warnings;
};

/// Several runs flattened into one document; `beta` in params becomes a list.
ClusterFile combine_runs(std::span<const DocRun> runs);
nlohmann::json to_json(const ClusterFile& file);
ClusterFile cluster_file_from_json(const nlohmann::json& doc);

/// Dimensions as rows, clusters as columns, NA outside a cluster's subspace,
/// means to three decimals. The second row lists each cluster's members.
std::string export_tables_csv(std::span<const SubspaceCluster> clusters, std::span<const Dimension> dims);

/// Clusters by id, in the order of `ids`. Throws ValidationError for an
/// unknown id.
std::vector<SubspaceCluster> select_clusters(std::span<const SubspaceCluster> clusters,
                                             std::span<const std::string> ids);

}  // namespace forge
