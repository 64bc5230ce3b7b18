#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/dataset.hpp"
#include "forge/doc_engine.hpp"

namespace forge {

// --- similarity ----------------------------------------------------------

/// Dimensions in both subspaces, natural order.
std::vector<std::string> shared_dims(const SubspaceCluster& a, const SubspaceCluster& b);

/// Member means of `c` on `dims`, in the order given. Throws
/// std::invalid_argument when a dimension is outside the subspace.
std::vector<double> cluster_mean_vector(const SubspaceCluster& c, std::span<const std::string> dims);

/// Dice overlap of the subspaces times (1 - mean squared gap between the
/// mean vectors on the shared dimensions). Identical clusters score 1;
/// clusters sharing no dimension, or sitting at opposite extremes on every
/// shared one, score 0.
double similarity(const SubspaceCluster& a, const SubspaceCluster& b);

struct SimilarityMatrix {
  std::vector<std::string> ids;
  /// Row-major, ids.size() squared.
  std::vector<double> values;

  std::size_t size() const { return ids.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * ids.size() + j]; }
};

SimilarityMatrix similarity_matrix(std::span<const SubspaceCluster> clusters, unsigned threads = 1);

std::string export_csv(const SimilarityMatrix& sims);

/// Drops every cluster whose similarity to an earlier (higher quality)
/// kept cluster exceeds `threshold`. Input is assumed quality-ordered.
std::vector<SubspaceCluster> drop_similar(std::span<const SubspaceCluster> clusters, double threshold);

// --- dendrogram ----------------------------------------------------------

enum class Linkage { kAverage, kSingle, kComplete };

Linkage parse_linkage(std::string_view text);
std::string to_string(Linkage linkage);

/// One agglomeration. Node ids follow the usual convention: 0..n-1 are
/// leaves, merge k creates node n+k.
struct DendrogramMerge {
  std::size_t left = 0;
  std::size_t right = 0;
  double height = 0.0;
};

struct Dendrogram {
  std::vector<std::string> leaves;
  std::vector<DendrogramMerge> merges;
};

/// Agglomerative clustering on 1 - similarity. Equal distances resolve to
/// the pair whose smallest leaf indices come first.
Dendrogram build_dendrogram(const SimilarityMatrix& sims, Linkage linkage = Linkage::kAverage);

/// Partition of the leaves after applying every merge with height <= cut.
/// Sets list leaf ids in leaf order; sets are ordered by first leaf.
std::vector<std::vector<std::string>> cut_dendrogram(const Dendrogram& dendrogram, double height);

nlohmann::json to_json(const Dendrogram& dendrogram);
Dendrogram dendrogram_from_json(const nlohmann::json& doc);

// --- merging -------------------------------------------------------------

struct PersonaDimension {
  std::string id;
  double mean = 0.0;
  /// Sample standard deviation across the supporting clusters' means.
  double std_dev = 0.0;
  std::size_t support = 0;
  bool conflicting = false;
};

struct ProtoPersona {
  std::string id;
  std::vector<std::string> source_ids;
  /// Union of member ids, natural order.
  std::vector<std::string> members;
  /// Ordered by support (descending), then dimension id.
  std::vector<PersonaDimension> dims;
  std::string name;
  std::string description;
};

struct MergeOptions {
  /// Std-dev above which a dimension is flagged CONFLICTING.
  double conflict_threshold = 0.15;
  /// Dimensions removed from the result after merging.
  std::vector<std::string> vetoed_dims;
};

/// Keeps dimensions present in the subspace of at least ceil(n/2) of the n
/// clusters; each gets the mean and sample std-dev of the supporting
/// clusters' means.
ProtoPersona merge_clusters(std::span<const SubspaceCluster> clusters, const MergeOptions& options = {});

// --- reporting -----------------------------------------------------------

/// "<name>: <clause> (d47), <clause> (d46) and <clause> (d1)." with one
/// clause per included dimension. Means <= 0.33 take the left extreme,
/// means >= 0.67 the right extreme, anything between gets a mixed phrase.
std::string describe(const ProtoPersona& persona, std::span<const Dimension> labels);

/// Dimension -> value view shared by clusters and proto-personas.
struct Profile {
  std::string id;
  std::map<std::string, double> values;
};

Profile profile_of(const SubspaceCluster& cluster);
Profile profile_of(const ProtoPersona& persona);

/// Radar plot document over the union of both profiles' dimensions. Each
/// axis is labelled with the right extreme (rim = 1, centre = left extreme);
/// a profile without the dimension gets null and a greyed flag.
nlohmann::json radar_data(const Profile& a, const Profile& b, std::span<const Dimension> labels = {});

nlohmann::json to_json(const ProtoPersona& persona);
std::string persona_report_markdown(std::span<const ProtoPersona> personas, std::span<const Dimension> labels);

}  // namespace forge
