#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace forge {

struct Subject {
  std::string id;
  std::string label;
};

/// One visual-analogue scale. A score of 0 sits at the left extreme, 1 at
/// the right extreme.
struct Dimension {
  std::string id;
  std::string label;
  std::string left_extreme;
  std::string right_extreme;
};

/// Subjects x dimensions matrix of optional scores in [0,1]. Immutable once
/// built; the constructor enforces every invariant.
class VasDataSet {
 public:
  VasDataSet() = default;
  /// `values` is row-major, one row per subject. Empty labels default to the id.
  VasDataSet(std::vector<Subject> subjects, std::vector<Dimension> dimensions,
             std::vector<std::optional<double>> values);

  std::size_t num_subjects() const { return subjects_.size(); }
  std::size_t num_dimensions() const { return dimensions_.size(); }

  const std::vector<Subject>& subjects() const { return subjects_; }
  const std::vector<Dimension>& dimensions() const { return dimensions_; }
  const Subject& subject(std::size_t i) const { return subjects_.at(i); }
  const Dimension& dimension(std::size_t k) const { return dimensions_.at(k); }

  std::optional<double> value(std::size_t subject, std::size_t dim) const {
    return values_[subject * dimensions_.size() + dim];
  }
  std::span<const std::optional<double>> row(std::size_t subject) const {
    return {values_.data() + subject * dimensions_.size(), dimensions_.size()};
  }

  std::optional<std::size_t> subject_index(std::string_view id) const;
  std::optional<std::size_t> dimension_index(std::string_view id) const;

  bool operator==(const VasDataSet& other) const;

 private:
  std::vector<Subject> subjects_;
  std::vector<Dimension> dimensions_;
  std::vector<std::optional<double>> values_;
  std::unordered_map<std::string, std::size_t> subject_lookup_;
  std::unordered_map<std::string, std::size_t> dimension_lookup_;
};

/// Reads the score matrix from CSV. The header row names the dimensions; a
/// header cell is either a bare id (`d1`) or `id|label|left|right` with the
/// trailing parts optional. The first column holds subject ids. Empty cells
/// are missing values.
VasDataSet ingest_csv(std::istream& in);
VasDataSet ingest_csv(std::string_view text);

/// Inverse of ingest_csv (full metadata in the header, shortest round-trip
/// numbers).
std::string export_csv(const VasDataSet& data);

/// {subjects:[{id,label}], dimensions:[{id,label,left,right}], values:[[number|null]]}
nlohmann::json to_json(const VasDataSet& data);
VasDataSet dataset_from_json(const nlohmann::json& doc);

// --- categorical binning -------------------------------------------------

enum class BinPolicy { kAuto, kTwo, kThree };

BinPolicy parse_bin_policy(std::string_view text);

struct CategoricalVariable {
  std::string dimension_id;
  /// Substantive category labels (2 or 3 of them).
  std::vector<std::string> categories;
  /// When set, index `categories.size()` is the MISSING category.
  bool has_missing = false;

  std::size_t missing_index() const { return categories.size(); }
  std::size_t num_levels() const { return categories.size() + (has_missing ? 1 : 0); }
  std::string level_label(std::size_t level) const;
};

class CategoricalTable {
 public:
  CategoricalTable() = default;
  CategoricalTable(std::vector<std::string> subjects, std::vector<CategoricalVariable> variables,
                   std::vector<std::size_t> cells);

  std::size_t num_subjects() const { return subjects_.size(); }
  std::size_t num_variables() const { return variables_.size(); }
  const std::vector<std::string>& subjects() const { return subjects_; }
  const std::vector<CategoricalVariable>& variables() const { return variables_; }
  std::size_t cell(std::size_t subject, std::size_t variable) const {
    return cells_[subject * variables_.size() + variable];
  }

 private:
  std::vector<std::string> subjects_;
  std::vector<CategoricalVariable> variables_;
  std::vector<std::size_t> cells_;
};

/// Equal-width bin of a present score: 2 bins split at 0.5, 3 bins at 1/3 and
/// 2/3; boundary values go to the upper bin and 1.0 lands in the top bin.
std::size_t bin_index(double value, int bins);

/// 2 when at least 80% of the values lie in [0,1/3) or (2/3,1], else 3.
int auto_bin_count(std::span<const double> present_values);

/// Bins every dimension (policy defaults to auto when absent from the map).
CategoricalTable bin_to_categories(const VasDataSet& data,
                                   const std::map<std::string, BinPolicy>& policies = {});

std::string export_csv(const CategoricalTable& table);

}  // namespace forge
