#include "forge/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iterator>
#include <sstream>

#include "forge/csv.hpp"
#include "forge/error.hpp"
#include "forge/ids.hpp"

namespace forge {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::string cell_name(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row + 1) + ", column " + std::to_string(col + 1);
}

}  // namespace

VasDataSet::VasDataSet(std::vector<Subject> subjects, std::vector<Dimension> dimensions,
                       std::vector<std::optional<double>> values)
    : subjects_(std::move(subjects)), dimensions_(std::move(dimensions)), values_(std::move(values)) {
  if (values_.size() != subjects_.size() * dimensions_.size()) {
    throw ValidationError("value matrix has " + std::to_string(values_.size()) + " cells, expected " +
                          std::to_string(subjects_.size()) + " x " +
                          std::to_string(dimensions_.size()));
  }
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    if (subjects_[i].id.empty()) throw ValidationError("empty subject id", i);
    if (subjects_[i].label.empty()) subjects_[i].label = subjects_[i].id;
    if (!subject_lookup_.emplace(subjects_[i].id, i).second) {
      throw ValidationError("duplicate subject id '" + subjects_[i].id + "'", i);
    }
  }
  for (std::size_t k = 0; k < dimensions_.size(); ++k) {
    if (dimensions_[k].id.empty()) throw ValidationError("empty dimension id", std::nullopt, k);
    if (dimensions_[k].label.empty()) dimensions_[k].label = dimensions_[k].id;
    if (!dimension_lookup_.emplace(dimensions_[k].id, k).second) {
      throw ValidationError("duplicate dimension id '" + dimensions_[k].id + "'", std::nullopt, k);
    }
  }
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    for (std::size_t k = 0; k < dimensions_.size(); ++k) {
      const auto& v = values_[i * dimensions_.size() + k];
      if (v && !(*v >= 0.0 && *v <= 1.0)) {
        throw ValidationError("value " + format_number(*v) + " at subject '" + subjects_[i].id +
                                  "', dimension '" + dimensions_[k].id + "' is outside [0,1]",
                              i, k);
      }
    }
  }
}

std::optional<std::size_t> VasDataSet::subject_index(std::string_view id) const {
  auto it = subject_lookup_.find(std::string(id));
  if (it == subject_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> VasDataSet::dimension_index(std::string_view id) const {
  auto it = dimension_lookup_.find(std::string(id));
  if (it == dimension_lookup_.end()) return std::nullopt;
  return it->second;
}

bool VasDataSet::operator==(const VasDataSet& other) const {
  auto same_subject = [](const Subject& a, const Subject& b) { return a.id == b.id && a.label == b.label; };
  auto same_dim = [](const Dimension& a, const Dimension& b) {
    return a.id == b.id && a.label == b.label && a.left_extreme == b.left_extreme &&
           a.right_extreme == b.right_extreme;
  };
  return std::equal(subjects_.begin(), subjects_.end(), other.subjects_.begin(), other.subjects_.end(),
                    same_subject) &&
         std::equal(dimensions_.begin(), dimensions_.end(), other.dimensions_.begin(),
                    other.dimensions_.end(), same_dim) &&
         values_ == other.values_;
}

VasDataSet ingest_csv(std::istream& in) {
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return ingest_csv(text);
}

VasDataSet ingest_csv(std::string_view text) {
  const auto rows = csv::parse(text);
  if (rows.empty()) throw ValidationError("empty CSV: a header row is required");

  const auto& header = rows.front();
  std::vector<Dimension> dims;
  for (std::size_t c = 1; c < header.size(); ++c) {
    auto parts = split(trim(header[c]), '|');
    Dimension d;
    d.id = std::string(trim(parts[0]));
    d.label = parts.size() > 1 ? std::string(trim(parts[1])) : d.id;
    if (parts.size() > 2) d.left_extreme = std::string(trim(parts[2]));
    if (parts.size() > 3) d.right_extreme = std::string(trim(parts[3]));
    if (parts.size() > 4) {
      throw ValidationError("header cell '" + header[c] + "' has more than 4 '|' parts", std::nullopt, c - 1);
    }
    dims.push_back(std::move(d));
  }

  std::vector<Subject> subjects;
  std::vector<std::optional<double>> values;
  values.reserve((rows.size() - 1) * dims.size());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t data_row = r - 1;
    if (row.size() != header.size()) {
      throw ValidationError("ragged row " + std::to_string(r + 1) + ": " + std::to_string(row.size()) +
                                " fields, header has " + std::to_string(header.size()),
                            data_row);
    }
    auto parts = split(trim(row[0]), '|');
    Subject s;
    s.id = std::string(trim(parts[0]));
    s.label = parts.size() > 1 ? std::string(trim(parts[1])) : s.id;
    subjects.push_back(std::move(s));

    for (std::size_t c = 1; c < row.size(); ++c) {
      const auto cell = trim(row[c]);
      if (cell.empty() || cell == "NA") {
        values.emplace_back(std::nullopt);
        continue;
      }
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw ValidationError("non-numeric value '" + std::string(cell) + "' at " + cell_name(data_row, c - 1) +
                                  " (subject '" + subjects.back().id + "', dimension '" + dims[c - 1].id + "')",
                              data_row, c - 1);
      }
      if (v < 0.0 || v > 1.0) {
        throw ValidationError("value " + std::string(cell) + " out of range [0,1] at " + cell_name(data_row, c - 1) +
                                  " (subject '" + subjects.back().id + "', dimension '" + dims[c - 1].id + "')",
                              data_row, c - 1);
      }
      values.emplace_back(v);
    }
  }
  return VasDataSet(std::move(subjects), std::move(dims), std::move(values));
}

std::string export_csv(const VasDataSet& data) {
  std::string out;
  csv::Row header{"subject"};
  for (const auto& d : data.dimensions()) {
    std::string cell = d.id;
    if (d.label != d.id || !d.left_extreme.empty() || !d.right_extreme.empty()) {
      cell += "|" + d.label;
      if (!d.left_extreme.empty() || !d.right_extreme.empty()) cell += "|" + d.left_extreme + "|" + d.right_extreme;
    }
    header.push_back(std::move(cell));
  }
  out += csv::format_row(header);
  for (std::size_t i = 0; i < data.num_subjects(); ++i) {
    const auto& s = data.subject(i);
    csv::Row row{s.label != s.id ? s.id + "|" + s.label : s.id};
    for (const auto& v : data.row(i)) row.push_back(v ? format_number(*v) : std::string());
    out += csv::format_row(row);
  }
  return out;
}

nlohmann::json to_json(const VasDataSet& data) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : data.subjects()) subjects.push_back({{"id", s.id}, {"label", s.label}});
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : data.dimensions()) {
    dims.push_back({{"id", d.id}, {"label", d.label}, {"left", d.left_extreme}, {"right", d.right_extreme}});
  }
  nlohmann::json values = nlohmann::json::array();
  for (std::size_t i = 0; i < data.num_subjects(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& v : data.row(i)) {
      if (v) {
        row.push_back(*v);
      } else {
        row.push_back(nullptr);
      }
    }
    values.push_back(std::move(row));
  }
  return {{"subjects", std::move(subjects)}, {"dimensions", std::move(dims)}, {"values", std::move(values)}};
}

VasDataSet dataset_from_json(const nlohmann::json& doc) {
  try {
    std::vector<Subject> subjects;
    for (const auto& s : doc.at("subjects")) {
      Subject subject{s.at("id").get<std::string>(), s.value("label", std::string())};
      if (subject.label.empty()) subject.label = subject.id;
      subjects.push_back(std::move(subject));
    }
    std::vector<Dimension> dims;
    for (const auto& d : doc.at("dimensions")) {
      Dimension dim{d.at("id").get<std::string>(), d.value("label", std::string()), d.value("left", std::string()),
                    d.value("right", std::string())};
      if (dim.label.empty()) dim.label = dim.id;
      dims.push_back(std::move(dim));
    }
    const auto& rows = doc.at("values");
    if (rows.size() != subjects.size()) {
      throw ValidationError("values has " + std::to_string(rows.size()) + " rows, expected " +
                            std::to_string(subjects.size()));
    }
    std::vector<std::optional<double>> values;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != dims.size()) {
        throw ValidationError("ragged values row " + std::to_string(i + 1), i);
      }
      for (const auto& v : rows[i]) {
        if (v.is_null()) {
          values.emplace_back(std::nullopt);
        } else {
          values.emplace_back(v.get<double>());
        }
      }
    }
    return VasDataSet(std::move(subjects), std::move(dims), std::move(values));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed dataset JSON: ") + e.what());
  }
}

// --- categorical binning -------------------------------------------------

BinPolicy parse_bin_policy(std::string_view text) {
  if (text == "auto") return BinPolicy::kAuto;
  if (text == "2") return BinPolicy::kTwo;
  if (text == "3") return BinPolicy::kThree;
  throw ValidationError("bin policy must be 2, 3 or auto, got '" + std::string(text) + "'");
}

std::string CategoricalVariable::level_label(std::size_t level) const {
  if (level < categories.size()) return categories[level];
  return "NA";
}

CategoricalTable::CategoricalTable(std::vector<std::string> subjects, std::vector<CategoricalVariable> variables,
                                   std::vector<std::size_t> cells)
    : subjects_(std::move(subjects)), variables_(std::move(variables)), cells_(std::move(cells)) {
  if (cells_.size() != subjects_.size() * variables_.size()) {
    throw ValidationError("categorical cell count does not match subjects x variables");
  }
  for (const auto& var : variables_) {
    if (var.categories.size() < 2 || var.categories.size() > 3) {
      throw ValidationError("variable '" + var.dimension_id + "' must have 2 or 3 substantive categories");
    }
  }
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    for (std::size_t v = 0; v < variables_.size(); ++v) {
      if (cell(i, v) >= variables_[v].num_levels()) {
        throw ValidationError("cell indexes no category of variable '" + variables_[v].dimension_id + "'", i, v);
      }
    }
  }
}

std::size_t bin_index(double value, int bins) {
  if (bins == 2) return value >= 0.5 ? 1 : 0;
  return std::min<std::size_t>(static_cast<std::size_t>(std::floor(3.0 * value)), 2);
}

int auto_bin_count(std::span<const double> present_values) {
  if (present_values.empty()) return 3;
  const auto outer = std::count_if(present_values.begin(), present_values.end(), [](double v) {
    return v < 1.0 / 3.0 || v > 2.0 / 3.0;
  });
  // 5*outer >= 4*n is the 80% rule without floating-point division
  return 5 * static_cast<std::size_t>(outer) >= 4 * present_values.size() ? 2 : 3;
}

CategoricalTable bin_to_categories(const VasDataSet& data, const std::map<std::string, BinPolicy>& policies) {
  for (const auto& [id, policy] : policies) {
    if (!data.dimension_index(id)) throw ValidationError("bin policy names unknown dimension '" + id + "'");
  }
  const std::size_t n = data.num_subjects();
  const std::size_t q = data.num_dimensions();
  std::vector<CategoricalVariable> variables(q);
  std::vector<std::size_t> cells(n * q);

  for (std::size_t k = 0; k < q; ++k) {
    const auto& dim = data.dimension(k);
    std::vector<double> present;
    bool missing = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (auto v = data.value(i, k)) {
        present.push_back(*v);
      } else {
        missing = true;
      }
    }
    auto it = policies.find(dim.id);
    const BinPolicy policy = it == policies.end() ? BinPolicy::kAuto : it->second;
    const int bins = policy == BinPolicy::kTwo     ? 2
                     : policy == BinPolicy::kThree ? 3
                                                   : auto_bin_count(present);

    auto& var = variables[k];
    var.dimension_id = dim.id;
    var.has_missing = missing;
    const std::string left = dim.left_extreme.empty() ? "low" : dim.left_extreme;
    const std::string right = dim.right_extreme.empty() ? "high" : dim.right_extreme;
    if (bins == 2) {
      var.categories = {left, right};
    } else {
      var.categories = {left, "mid", right};
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = data.value(i, k);
      cells[i * q + k] = v ? bin_index(*v, bins) : var.missing_index();
    }
  }

  std::vector<std::string> ids;
  for (const auto& s : data.subjects()) ids.push_back(s.id);
  return CategoricalTable(std::move(ids), std::move(variables), std::move(cells));
}

std::string export_csv(const CategoricalTable& table) {
  std::string out;
  csv::Row header{"subject"};
  for (const auto& v : table.variables()) header.push_back(v.dimension_id);
  out += csv::format_row(header);
  for (std::size_t i = 0; i < table.num_subjects(); ++i) {
    csv::Row row{table.subjects()[i]};
    for (std::size_t v = 0; v < table.num_variables(); ++v) {
      row.push_back(table.variables()[v].level_label(table.cell(i, v)));
    }
    out += csv::format_row(row);
  }
  return out;
}

}  // namespace forge
