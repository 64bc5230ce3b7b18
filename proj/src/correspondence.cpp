#include "forge/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "forge/csv.hpp"
#include "forge/error.hpp"
#include "forge/ids.hpp"

namespace forge {

namespace {

constexpr double kAxisTolerance = 1e-10;

}  // namespace

long CooccurrenceTable::at(const std::string& a, const std::string& b) const {
  auto ia = std::find(subjects.begin(), subjects.end(), a);
  auto ib = std::find(subjects.begin(), subjects.end(), b);
  if (ia == subjects.end() || ib == subjects.end()) {
    throw std::out_of_range("unknown subject in co-occurrence lookup");
  }
  return at(static_cast<std::size_t>(ia - subjects.begin()), static_cast<std::size_t>(ib - subjects.begin()));
}

CooccurrenceTable cooccurrence(std::span<const SubspaceCluster> clusters, const std::set<std::string>& exclude,
                               std::vector<std::string> subjects) {
  CooccurrenceTable table;
  if (subjects.empty()) {
    std::set<std::string> all;
    for (const auto& c : clusters) all.insert(c.members.begin(), c.members.end());
    subjects.assign(all.begin(), all.end());
    natural_sort(subjects);
  }
  table.subjects = std::move(subjects);
  const std::size_t n = table.subjects.size();
  table.counts.assign(n * n, 0);

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[table.subjects[i]] = i;

  std::set<std::string> matched;
  for (const auto& c : clusters) {
    if (exclude.contains(c.id)) {
      matched.insert(c.id);
      continue;
    }
    std::vector<std::size_t> rows;
    for (const auto& m : c.members) {
      auto it = index.find(m);
      if (it == index.end()) {
        table.warnings.push_back("cluster " + c.id + " member '" + m + "' is not in the subject list");
        continue;
      }
      rows.push_back(it->second);
    }
    for (auto i : rows) {
      for (auto j : rows) ++table.counts[i * n + j];
    }
  }
  for (const auto& id : exclude) {
    if (matched.contains(id)) {
      table.excluded.push_back(id);
    } else {
      table.warnings.push_back("excluded cluster id '" + id + "' does not match any cluster");
    }
  }
  natural_sort(table.excluded);
  return table;
}

std::string export_csv(const CooccurrenceTable& table) {
  std::string out;
  csv::Row header{"subject"};
  header.insert(header.end(), table.subjects.begin(), table.subjects.end());
  out += csv::format_row(header);
  for (std::size_t i = 0; i < table.size(); ++i) {
    csv::Row row{table.subjects[i]};
    for (std::size_t j = 0; j < table.size(); ++j) row.push_back(std::to_string(table.at(i, j)));
    out += csv::format_row(row);
  }
  return out;
}

nlohmann::json to_json(const CooccurrenceTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::vector<long> row(table.counts.begin() + static_cast<std::ptrdiff_t>(i * table.size()),
                          table.counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * table.size()));
    rows.push_back(row);
  }
  return {{"subjects", table.subjects},
          {"counts", std::move(rows)},
          {"excluded", table.excluded},
          {"warnings", table.warnings}};
}

PerceptualMap correspondence_analysis(const Eigen::MatrixXd& table, std::vector<std::string> row_ids,
                                      std::vector<std::string> col_ids) {
  if (static_cast<std::size_t>(table.rows()) != row_ids.size() ||
      static_cast<std::size_t>(table.cols()) != col_ids.size()) {
    throw ValidationError("table shape does not match its row/column ids");
  }
  if ((table.array() < 0.0).any() || !table.allFinite()) {
    throw ValidationError("correspondence analysis needs a finite non-negative table");
  }

  PerceptualMap map;
  std::vector<Eigen::Index> keep_rows;
  std::vector<Eigen::Index> keep_cols;
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    if (table.row(i).sum() > 0.0) {
      keep_rows.push_back(i);
      map.row_ids.push_back(row_ids[static_cast<std::size_t>(i)]);
    } else {
      map.warnings.push_back("dropped all-zero row '" + row_ids[static_cast<std::size_t>(i)] + "'");
    }
  }
  for (Eigen::Index j = 0; j < table.cols(); ++j) {
    if (table.col(j).sum() > 0.0) {
      keep_cols.push_back(j);
      map.col_ids.push_back(col_ids[static_cast<std::size_t>(j)]);
    } else {
      map.warnings.push_back("dropped all-zero column '" + col_ids[static_cast<std::size_t>(j)] + "'");
    }
  }
  const auto nr = static_cast<Eigen::Index>(keep_rows.size());
  const auto nc = static_cast<Eigen::Index>(keep_cols.size());
  map.row_coords.resize(nr, 0);
  map.col_coords.resize(nc, 0);
  if (nr == 0 || nc == 0) return map;

  Eigen::MatrixXd n(nr, nc);
  for (Eigen::Index i = 0; i < nr; ++i) {
    for (Eigen::Index j = 0; j < nc; ++j) n(i, j) = table(keep_rows[i], keep_cols[j]);
  }
  const Eigen::MatrixXd p = n / n.sum();
  map.row_masses = p.rowwise().sum();
  map.col_masses = p.colwise().sum().transpose();
  const Eigen::VectorXd rs = map.row_masses.cwiseSqrt().cwiseInverse();
  const Eigen::VectorXd cs = map.col_masses.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd s =
      rs.asDiagonal() * (p - map.row_masses * map.col_masses.transpose()) * cs.asDiagonal();
  map.total_inertia = s.squaredNorm();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(s, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  Eigen::Index axes = 0;
  while (axes < sigma.size() && sigma(axes) > kAxisTolerance) ++axes;

  Eigen::MatrixXd u = svd.matrixU().leftCols(axes);
  Eigen::MatrixXd v = svd.matrixV().leftCols(axes);
  map.row_coords = rs.asDiagonal() * u * sigma.head(axes).asDiagonal();
  map.col_coords = cs.asDiagonal() * v * sigma.head(axes).asDiagonal();

  for (Eigen::Index k = 0; k < axes; ++k) {
    const double top = map.row_coords.col(k).cwiseAbs().maxCoeff();
    Eigen::Index lead = 0;
    while (std::abs(map.row_coords(lead, k)) < top * (1.0 - 1e-9)) ++lead;
    if (map.row_coords(lead, k) < 0.0) {
      map.row_coords.col(k) *= -1.0;
      map.col_coords.col(k) *= -1.0;
    }
    const double eigenvalue = sigma(k) * sigma(k);
    map.eigenvalues.push_back(eigenvalue);
    map.inertia_pct.push_back(100.0 * eigenvalue / map.total_inertia);
  }
  return map;
}

PerceptualMap correspondence_analysis(const CooccurrenceTable& table) {
  const auto n = static_cast<Eigen::Index>(table.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      m(i, j) = static_cast<double>(table.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
    }
  }
  return correspondence_analysis(m, table.subjects, table.subjects);
}

IndicatorMatrix indicator_matrix(const CategoricalTable& table) {
  IndicatorMatrix ind;
  ind.row_ids = table.subjects();
  const std::size_t ns = table.num_subjects();

  struct Column {
    std::size_t variable;
    std::size_t level;
  };
  std::vector<Column> columns;
  for (std::size_t v = 0; v < table.num_variables(); ++v) {
    const auto& var = table.variables()[v];
    std::vector<std::size_t> counts(var.num_levels(), 0);
    for (std::size_t s = 0; s < ns; ++s) ++counts[table.cell(s, v)];
    const auto observed = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
    if (observed < 2) {
      ind.warnings.push_back("dropped variable '" + var.dimension_id + "' with a single observed category");
      continue;
    }
    ++ind.num_variables;
    for (std::size_t level = 0; level < counts.size(); ++level) {
      if (counts[level] == 0) continue;
      columns.push_back({v, level});
      ind.col_ids.push_back(var.dimension_id + ":" + var.level_label(level));
    }
  }
  ind.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (table.cell(s, columns[c].variable) == columns[c].level) {
        ind.values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c)) = 1.0;
      }
    }
  }
  return ind;
}

PerceptualMap mca(const CategoricalTable& table) {
  if (table.num_subjects() < 2 || table.num_variables() < 2) {
    throw ValidationError("MCA needs at least 2 subjects and 2 variables");
  }
  auto ind = indicator_matrix(table);
  if (ind.num_variables == 0) {
    PerceptualMap empty;
    empty.row_ids = ind.row_ids;
    empty.row_coords.resize(static_cast<Eigen::Index>(ind.row_ids.size()), 0);
    empty.warnings = ind.warnings;
    return empty;
  }
  auto map = correspondence_analysis(ind.values, ind.row_ids, ind.col_ids);
  map.warnings.insert(map.warnings.begin(), ind.warnings.begin(), ind.warnings.end());
  return map;
}

double correlation_ratio(std::span<const double> coords, std::span<const std::size_t> groups) {
  const std::size_t n = coords.size();
  if (n == 0) return 0.0;
  double mean = 0.0;
  for (double x : coords) mean += x;
  mean /= static_cast<double>(n);
  double total = 0.0;
  for (double x : coords) total += (x - mean) * (x - mean);
  if (total <= 1e-24 * static_cast<double>(n)) return 0.0;

  std::map<std::size_t, std::pair<double, std::size_t>> sums;
  for (std::size_t i = 0; i < n; ++i) {
    auto& [sum, count] = sums[groups[i]];
    sum += coords[i];
    ++count;
  }
  double between = 0.0;
  for (const auto& [group, sc] : sums) {
    const double gm = sc.first / static_cast<double>(sc.second);
    between += static_cast<double>(sc.second) * (gm - mean) * (gm - mean);
  }
  return std::clamp(between / total, 0.0, 1.0);
}

EtaSquared variable_axis_correlation(const CategoricalTable& table, const PerceptualMap& map, std::size_t axes) {
  if (axes > map.num_axes()) throw ValidationError("map has fewer axes than requested");
  std::vector<Eigen::Index> map_row(table.num_subjects());
  for (std::size_t s = 0; s < table.num_subjects(); ++s) {
    auto it = std::find(map.row_ids.begin(), map.row_ids.end(), table.subjects()[s]);
    if (it == map.row_ids.end()) {
      throw ValidationError("subject '" + table.subjects()[s] + "' is not a row of the map");
    }
    map_row[s] = it - map.row_ids.begin();
  }

  EtaSquared eta;
  eta.axes = axes;
  std::vector<double> coords(table.num_subjects());
  std::vector<std::size_t> groups(table.num_subjects());
  for (std::size_t v = 0; v < table.num_variables(); ++v) {
    eta.variables.push_back(table.variables()[v].dimension_id);
    for (std::size_t s = 0; s < table.num_subjects(); ++s) groups[s] = table.cell(s, v);
    for (std::size_t k = 0; k < axes; ++k) {
      for (std::size_t s = 0; s < table.num_subjects(); ++s) {
        coords[s] = map.row_coords(map_row[s], static_cast<Eigen::Index>(k));
      }
      eta.values.push_back(correlation_ratio(coords, groups));
    }
  }
  return eta;
}

nlohmann::json to_json(const PerceptualMap& map) {
  auto points = [](const std::vector<std::string>& ids, const Eigen::MatrixXd& coords) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::vector<double> c(static_cast<std::size_t>(coords.cols()));
      for (Eigen::Index k = 0; k < coords.cols(); ++k) c[static_cast<std::size_t>(k)] = coords(static_cast<Eigen::Index>(i), k);
      out.push_back({{"id", ids[i]}, {"coords", c}});
    }
    return out;
  };
  return {{"rows", points(map.row_ids, map.row_coords)},
          {"cols", points(map.col_ids, map.col_coords)},
          {"eigenvalues", map.eigenvalues},
          {"inertia_pct", map.inertia_pct},
          {"total_inertia", map.total_inertia},
          {"warnings", map.warnings}};
}

std::string export_csv(const EtaSquared& eta) {
  std::string out;
  csv::Row header{"dimension"};
  for (std::size_t k = 0; k < eta.axes; ++k) header.push_back("axis" + std::to_string(k + 1));
  out += csv::format_row(header);
  for (std::size_t v = 0; v < eta.variables.size(); ++v) {
    csv::Row row{eta.variables[v]};
    for (std::size_t k = 0; k < eta.axes; ++k) row.push_back(format_number(eta.at(v, k)));
    out += csv::format_row(row);
  }
  return out;
}

}  // namespace forge
