#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "forge/dataset.hpp"
#include "forge/doc_engine.hpp"

namespace forge {

// --- co-occurrence -------------------------------------------------------

struct CooccurrenceTable {
  std::vector<std::string> subjects;
  /// Row-major, subjects.size() squared. The diagonal counts memberships.
  std::vector<long> counts;
  /// Exclusion ids that matched a cluster.
  std::vector<std::string> excluded;
  std::vector<std::string> warnings;

  std::size_t size() const { return subjects.size(); }
  long at(std::size_t i, std::size_t j) const { return counts[i * subjects.size() + j]; }
  long at(const std::string& a, const std::string& b) const;
};

/// Counts, for every pair of subjects, the clusters (outside `exclude`)
/// containing both. Subjects default to the union of all members in natural
/// order. Unknown exclusion ids produce a warning.
CooccurrenceTable cooccurrence(std::span<const SubspaceCluster> clusters,
                               const std::set<std::string>& exclude = {},
                               std::vector<std::string> subjects = {});

std::string export_csv(const CooccurrenceTable& table);
nlohmann::json to_json(const CooccurrenceTable& table);

// --- correspondence analysis ---------------------------------------------

struct PerceptualMap {
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;
  /// Principal coordinates, one column per axis.
  Eigen::MatrixXd row_coords;
  Eigen::MatrixXd col_coords;
  Eigen::VectorXd row_masses;
  Eigen::VectorXd col_masses;
  /// Squared singular values, non-increasing.
  std::vector<double> eigenvalues;
  /// Percent of total inertia per axis.
  std::vector<double> inertia_pct;
  double total_inertia = 0.0;
  std::vector<std::string> warnings;

  std::size_t num_axes() const { return eigenvalues.size(); }
};

/// Simple CA of a non-negative table. All-zero rows and columns are dropped
/// with a warning. Each axis is oriented so its largest-magnitude row
/// coordinate is positive.
PerceptualMap correspondence_analysis(const Eigen::MatrixXd& table, std::vector<std::string> row_ids,
                                      std::vector<std::string> col_ids);

PerceptualMap correspondence_analysis(const CooccurrenceTable& table);

/// Complete disjunctive coding of a categorical table. Only observed levels
/// become columns ("<dim>:<level>"); variables with a single observed level
/// are left out and reported in `warnings`.
struct IndicatorMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;
  std::size_t num_variables = 0;
  std::vector<std::string> warnings;
};

IndicatorMatrix indicator_matrix(const CategoricalTable& table);

/// CA of the indicator matrix.
PerceptualMap mca(const CategoricalTable& table);

/// Squared correlation ratio of every variable with the first `axes` axes
/// of a map whose rows are the table's subjects.
struct EtaSquared {
  std::vector<std::string> variables;
  std::size_t axes = 0;
  /// Row-major, variables x axes.
  std::vector<double> values;

  double at(std::size_t variable, std::size_t axis) const { return values[variable * axes + axis]; }
};

EtaSquared variable_axis_correlation(const CategoricalTable& table, const PerceptualMap& map, std::size_t axes);

/// Between-group over total variance of `coords` grouped by `groups`; 0 when
/// the coordinates do not vary.
double correlation_ratio(std::span<const double> coords, std::span<const std::size_t> groups);

/// {rows:[{id,coords}], cols:[{id,coords}], eigenvalues, inertia_pct, total_inertia, warnings}
nlohmann::json to_json(const PerceptualMap& map);
std::string export_csv(const EtaSquared& eta);

}  // namespace forge
