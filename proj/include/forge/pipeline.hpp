#pragma once

// End-to-end batch run: ingest, cluster per beta, similarity, dendrogram,
// cut and merge, describe, co-occurrence and CA, then optionally binning,
// MCA and variable-axis correlation. Every intermediate result is written
// to the output directory.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/correspondence.hpp"
#include "forge/dataset.hpp"
#include "forge/doc_engine.hpp"
#include "forge/persona.hpp"

namespace forge {

struct RunConfig {
  std::filesystem::path input;
  std::filesystem::path output_dir;
  /// nullopt: estimate w from the data and use the rounded suggestion.
  std::optional<double> w = 0.3;
  double alpha = 0.1;
  std::vector<double> betas{0.25};
  std::uint64_t seed = 0;
  std::uint64_t max_trials = kDefaultTrialCap;
  unsigned threads = 1;
  Linkage linkage = Linkage::kAverage;
  double cut_height = 0.5;
  double conflict_threshold = 0.15;
  std::set<std::string> exclude;
  bool run_mca = true;
  BinPolicy bins = BinPolicy::kAuto;
  std::map<std::string, BinPolicy> bins_per_dim;
  std::size_t mca_axes = 2;
};

/// Throws ValidationError when the config cannot describe a run.
void validate(const RunConfig& config);

/// A failed stage; `what()` carries the stage name and the cause.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::exception& cause);

  const std::string& stage() const { return stage_; }
  const std::string& cause() const { return cause_; }
  /// {"stage","type","message"} plus "row"/"column" for cell errors.
  const nlohmann::json& report() const { return report_; }

 private:
  std::string stage_;
  std::string cause_;
  nlohmann::json report_;
};

/// Machine-readable description of any exception.
nlohmann::json error_report(const std::exception& e);

struct PipelineResult {
  /// Relative paths of the files written, in write order.
  std::vector<std::string> artifacts;
  std::vector<std::string> warnings;
};

PipelineResult run_pipeline(const RunConfig& config);

/// Cut sets merged into proto-personas named P1, P2, ... with descriptions.
std::vector<ProtoPersona> personas_from_cut(std::span<const SubspaceCluster> clusters,
                                            const std::vector<std::vector<std::string>>& sets,
                                            std::span<const Dimension> labels, double conflict_threshold);

/// {height, linkage, sets:[[ids]], personas:[...]}
nlohmann::json merge_document(double height, Linkage linkage, const std::vector<std::vector<std::string>>& sets,
                              std::span<const ProtoPersona> personas);
std::vector<ProtoPersona> personas_from_json(const nlohmann::json& doc);

/// Contingency table CSV: header of column ids, first column row ids.
struct LabelledTable {
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;
  Eigen::MatrixXd values;
};
LabelledTable parse_table_csv(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace forge
