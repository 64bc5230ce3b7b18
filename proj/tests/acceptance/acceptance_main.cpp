// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "forge/cluster_io.hpp"
#include "forge/correspondence.hpp"
#include "forge/csv.hpp"
#include "forge/dataset.hpp"
#include "forge/doc_engine.hpp"
#include "forge/persona.hpp"
#include "forge/pipeline.hpp"
#include "generators.hpp"
#include "test_support.hpp"

namespace {

namespace fs = std::filesystem;
using forge::SubspaceCluster;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome outcome(bool pass, const std::string& detail) { return {pass, detail}; }

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

const std::set<std::string> kReferenceExclusions{"J85", "K85", "L85", "M85"};

// --- parameter formulas ----------------------------------------------------

Outcome parameter_formulas() {
  const std::map<double, std::size_t> expected{{0.25, 2}, {0.45, 3}, {0.65, 4}, {0.85, 5}};
  std::string got;
  bool ok = true;
  for (const auto& [beta, r] : expected) {
    const auto value = forge::discrimination_set_size(47, beta);
    ok = ok && value == r;
    got += (got.empty() ? "" : "/") + std::to_string(value);
  }
  return outcome(ok, "r(47, 0.25/0.45/0.65/0.85) = " + got);
}

// --- co-occurrence -----------------------------------------------------------

Outcome cooccurrence_oracle() {
  const auto table = forge::cooccurrence(forge::testing::reference_clusters(), kReferenceExclusions);
  const auto rows = forge::csv::parse(forge::testing::read_file(forge::testing::fixture_path("cooccurrence_expected.csv")));
  std::size_t cells = 0;
  std::size_t wrong = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    for (std::size_t j = 1; j < rows[i].size(); ++j) {
      ++cells;
      if (table.at(rows[i][0], rows[0][j]) != std::stol(rows[i][j])) ++wrong;
    }
  }
  const bool anchors = table.at("6", "16") == 18 && table.at("16", "16") == 31 && table.at("16", "20") == 24 &&
                       table.at("1", "2") == 0;
  return outcome(wrong == 0 && cells == 400 && anchors,
                 std::to_string(cells - wrong) + "/" + std::to_string(cells) + " cells, anchors " +
                     (anchors ? "ok" : "wrong"));
}

// --- merge -------------------------------------------------------------------

Outcome merge_oracle() {
  const auto clusters = forge::testing::reference_clusters();
  std::vector<SubspaceCluster> set;
  for (const auto* id : {"D65", "E65", "F65", "H65", "J65", "K65"}) {
    set.push_back(forge::testing::find_cluster(clusters, id));
  }
  const auto persona = forge::merge_clusters(set);
  const auto rows = forge::csv::parse(forge::testing::read_file(forge::testing::fixture_path("merge_expected.csv")));
  std::set<std::string> expected_ids;
  std::size_t values_ok = 0;
  double worst = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    expected_ids.insert(rows[i][0]);
    for (const auto& d : persona.dims) {
      if (d.id != rows[i][0]) continue;
      const double dm = std::abs(d.mean - std::stod(rows[i][1]));
      const double ds = std::abs(d.std_dev - std::stod(rows[i][2]));
      worst = std::max({worst, dm, ds});
      values_ok += (dm <= 0.001 ? 1 : 0) + (ds <= 0.001 ? 1 : 0);
    }
  }
  std::set<std::string> got;
  for (const auto& d : persona.dims) got.insert(d.id);
  const std::size_t total = 2 * (rows.size() - 1);
  return outcome(got == expected_ids && values_ok == total && rows.size() - 1 == 18,
                 std::to_string(rows.size() - 1) + " dims, " + std::to_string(values_ok) + "/" + std::to_string(total) +
                     " means and std-devs within 0.001 (worst " +
                     fmt("%.4f", worst) + "), inclusion set " + (got == expected_ids ? "exact" : "differs"));
}

// --- CA structure ------------------------------------------------------------

Outcome ca_structure() {
  const auto map = forge::correspondence_analysis(forge::cooccurrence(forge::testing::reference_clusters(), kReferenceExclusions));
  auto coord = [&](const std::string& id) {
    for (std::size_t i = 0; i < map.row_ids.size(); ++i) {
      if (map.row_ids[i] == id) return map.row_coords(static_cast<Eigen::Index>(i), 0);
    }
    return std::nan("");
  };
  const std::vector<std::string> left{"1", "3", "4", "7", "12", "14", "17"};
  const std::vector<std::string> right{"2", "5", "6", "8", "9", "11", "16", "20"};
  const double sign = coord(left[0]) > 0 ? 1.0 : -1.0;
  bool ok = true;
  for (const auto& id : left) ok = ok && sign * coord(id) > 0;
  for (const auto& id : right) ok = ok && sign * coord(id) < 0;
  return outcome(ok, "axis 1 carries " + fmt("%.1f%%", map.inertia_pct[0]) + ", groups " +
                         (ok ? "on opposite sides" : "not separated"));
}

// --- planted recovery --------------------------------------------------------

bool contains_all(const std::vector<std::string>& have, const std::vector<std::string>& want) {
  const std::set<std::string> s(have.begin(), have.end());
  return std::all_of(want.begin(), want.end(), [&](const std::string& x) { return s.contains(x); });
}

bool recovered(const forge::testing::PlantedData& planted, std::uint64_t seed) {
  forge::DocParams p;
  p.w = 0.3;
  p.alpha = 0.1;
  p.beta = 0.45;
  p.seed = seed;
  p.target = planted.data.subject(planted.members[0]).id;
  const auto c = forge::doc_for_target(planted.data, p);
  std::vector<std::string> members;
  std::vector<std::string> dims;
  for (auto s : planted.members) members.push_back(planted.data.subject(s).id);
  for (auto k : planted.dims) dims.push_back(planted.data.dimension(k).id);
  return contains_all(c.members, members) && contains_all(c.subspace, dims);
}

Outcome planted_recovery() {
  const auto planted = forge::testing::planted_cluster(0);
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) hits += recovered(planted, seed) ? 1 : 0;
  return outcome(hits >= 48, std::to_string(hits) + "/50 DOC seeds recover the planted 4x12 cluster (need >= 95%)");
}

std::string planted_fresh_instances() {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) hits += recovered(forge::testing::planted_cluster(seed), seed + 1) ? 1 : 0;
  return std::to_string(hits) + "/50 fresh planted instances recovered; on the rest a noise subspace outscores the "
                                "planted one under the quality function";
}

// --- brute-force oracle ------------------------------------------------------

Outcome oracle_equivalence() {
  int matched = 0;
  const double betas[] = {0.25, 0.45, 0.65};
  const double alphas[] = {0.1, 0.25};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t n = 4 + seed % 5;
    const std::size_t dims = 2 + (seed / 5) % 5;
    const auto data = forge::testing::small_instance(1000 + seed, n, dims);
    forge::DocParams p;
    p.w = 0.3;
    p.alpha = alphas[seed % 2];
    p.beta = betas[seed % 3];
    p.seed = seed * 13 + 5;
    const std::size_t target = (seed * 7) % n;
    p.target = data.subject(target).id;
    const auto r = forge::discrimination_set_size(dims, p.beta);
    const auto oracle = forge::testing::brute_force_best_quality(data, target, p.w, p.alpha, p.beta, r);
    try {
      const auto c = forge::doc_for_target(data, p);
      if (oracle && std::abs(c.quality - *oracle) <= 1e-9 * *oracle) ++matched;
    } catch (const forge::NoClusterFound&) {
      if (!oracle) ++matched;
    }
  }
  return outcome(matched >= 99, std::to_string(matched) + "/100 runs match the exhaustive optimum (need >= 99)");
}

// --- similarity --------------------------------------------------------------

SubspaceCluster random_cluster(std::mt19937_64& rng, const std::string& id) {
  std::uniform_real_distribution<double> value(0.0, 1.0);
  std::bernoulli_distribution keep(0.5);
  std::uniform_int_distribution<int> size(1, 6);
  SubspaceCluster c;
  c.id = id;
  for (int k = 1; k <= 10; ++k) {
    if (keep(rng)) c.means["d" + std::to_string(k)] = value(rng);
  }
  if (c.means.empty()) c.means["d1"] = value(rng);
  for (const auto& [dim, v] : c.means) c.subspace.push_back(dim);
  forge::natural_sort(c.subspace);
  const int members = size(rng);
  for (int m = 0; m < members; ++m) c.members.push_back(std::to_string(1 + (rng() % 20)));
  forge::natural_sort(c.members);
  c.members.erase(std::unique(c.members.begin(), c.members.end()), c.members.end());
  return c;
}

// Direct evaluation of 2|F|/(|Da|+|Db|) * (1 - sum over F of delta^2 / |F|).
double hand_similarity(const json& a, const json& b) {
  const auto& ma = a.at("means");
  const auto& mb = b.at("means");
  std::size_t f = 0;
  double squared = 0.0;
  for (const auto& [dim, v] : ma.items()) {
    if (!mb.contains(dim)) continue;
    ++f;
    squared += std::pow(mb.at(dim).get<double>() - v.get<double>(), 2);
  }
  if (f == 0) return 0.0;
  return 2.0 * static_cast<double>(f) / static_cast<double>(ma.size() + mb.size()) * (1.0 - squared / static_cast<double>(f));
}

Outcome similarity_properties() {
  std::mt19937_64 rng(2024);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_cluster(rng, "a");
    const auto b = random_cluster(rng, "b");
    const double ab = forge::similarity(a, b);
    if (ab != forge::similarity(b, a) || ab < 0.0 || ab > 1.0) ++violations;
    if (forge::similarity(a, a) != 1.0) ++violations;
    auto relabelled = b;
    for (auto& m : relabelled.members) m = "r" + m;
    std::reverse(relabelled.members.begin(), relabelled.members.end());
    if (forge::similarity(a, relabelled) != ab) ++violations;
    auto disjoint = b;
    disjoint.means.clear();
    for (const auto& dim : b.subspace) disjoint.means["x" + dim] = b.means.at(dim);
    disjoint.subspace.clear();
    for (const auto& [dim, v] : disjoint.means) disjoint.subspace.push_back(dim);
    if (forge::similarity(a, disjoint) != 0.0) ++violations;
    auto extreme = a;
    for (auto& [dim, v] : extreme.means) v = rng() % 2 == 0 ? 0.0 : 1.0;
    auto opposite = extreme;
    for (auto& [dim, v] : opposite.means) v = 1.0 - v;
    if (forge::similarity(extreme, opposite) != 0.0) ++violations;
  }

  const auto fixture = forge::testing::reference_fixture();
  json d65;
  json j65;
  for (const auto& c : fixture.at("clusters")) {
    if (c.at("id") == "D65") d65 = c;
    if (c.at("id") == "J65") j65 = c;
  }
  const double sim = forge::similarity(forge::cluster_from_json(d65), forge::cluster_from_json(j65));
  const double hand = hand_similarity(d65, j65);
  const bool reference_ok = std::abs(sim - hand) <= 1e-6;
  return outcome(violations == 0 && reference_ok,
                 std::to_string(violations) + " property violations over 1000 pairs; sim(D65,J65) = " +
                     fmt("%.6f vs hand %.6f", sim, hand));
}

// --- CA/MCA numerics ---------------------------------------------------------

double chi_square_over_n(const Eigen::MatrixXd& t) {
  const double n = t.sum();
  const Eigen::VectorXd r = t.rowwise().sum();
  const Eigen::VectorXd c = t.colwise().sum().transpose();
  double chi2 = 0.0;
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      const double e = r(i) * c(j) / n;
      chi2 += (t(i, j) - e) * (t(i, j) - e) / e;
    }
  }
  return chi2 / n;
}

// Largest deviation from f_ik = (1/sigma_k) sum_j (p_ij / r_i) g_jk and its column analogue.
double duality_error(const Eigen::MatrixXd& t, const forge::PerceptualMap& map) {
  const Eigen::MatrixXd p = t / t.sum();
  const Eigen::VectorXd r = p.rowwise().sum();
  const Eigen::VectorXd c = p.colwise().sum().transpose();
  double worst = 0.0;
  for (std::size_t k = 0; k < map.num_axes(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double sigma = std::sqrt(map.eigenvalues[k]);
    const Eigen::VectorXd rows = (r.asDiagonal().inverse() * p * map.col_coords.col(kk)) / sigma;
    const Eigen::VectorXd cols = (c.asDiagonal().inverse() * p.transpose() * map.row_coords.col(kk)) / sigma;
    worst = std::max(worst, (rows - map.row_coords.col(kk)).cwiseAbs().maxCoeff());
    worst = std::max(worst, (cols - map.col_coords.col(kk)).cwiseAbs().maxCoeff());
  }
  return worst;
}

std::vector<std::string> labels(std::size_t n, const std::string& prefix) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

Outcome ca_mca_numerics() {
  std::mt19937_64 rng(5);
  double chi_err = 0.0;
  double dual_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = 2 + static_cast<int>(rng() % 9);
    const int cols = 2 + static_cast<int>(rng() % 9);
    Eigen::MatrixXd t(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) t(i, j) = 1.0 + static_cast<double>(rng() % 40);
    }
    const auto map = forge::correspondence_analysis(t, labels(rows, "r"), labels(cols, "c"));
    chi_err = std::max(chi_err, std::abs(map.total_inertia - chi_square_over_n(t)));
    dual_err = std::max(dual_err, duality_error(t, map));
  }

  double jq_err = 0.0;
  bool band = true;
  std::string shares;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = forge::testing::vas_lookalike(seed);
    const auto table = forge::bin_to_categories(data);
    std::size_t j = 0;
    std::size_t q = 0;
    for (std::size_t v = 0; v < table.num_variables(); ++v) {
      std::set<std::size_t> seen;
      for (std::size_t s = 0; s < table.num_subjects(); ++s) seen.insert(table.cell(s, v));
      if (seen.size() < 2) continue;
      j += seen.size();
      ++q;
    }
    const auto map = forge::mca(table);
    jq_err = std::max(jq_err, std::abs(map.total_inertia - static_cast<double>(j - q) / static_cast<double>(q)));
    const auto indicator = forge::indicator_matrix(table);
    dual_err = std::max(dual_err, duality_error(indicator.values, map));
    const double first = map.inertia_pct[0];
    const double second = map.inertia_pct[1];
    band = band && first >= 8.0 && first <= 25.0 && second >= 8.0 && second <= 25.0;
    if (seed == 0) shares = fmt("%.1f%%/%.1f%%", first, second);
  }
  const bool ok = chi_err <= 1e-9 && jq_err <= 1e-9 && dual_err <= 1e-9 && band;
  return outcome(ok, "chi2/n err " + fmt("%.1e", chi_err) + ", (J-Q)/Q err " + fmt("%.1e", jq_err) +
                         ", duality err " + fmt("%.1e", dual_err) + ", look-alike axes " + shares +
                         (band ? " (10/10 in [8%,25%])" : " (outside [8%,25%])"));
}

// --- determinism -------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FORGE_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto other = b / entry.path().filename();
    if (!fs::exists(other) || forge::read_text_file(entry.path()) != forge::read_text_file(other)) return false;
    ++files;
  }
  return files > 0 && std::distance(fs::directory_iterator(b), fs::directory_iterator()) ==
                          static_cast<std::ptrdiff_t>(files);
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / ("forge_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  forge::write_text_file(dir / "data.csv", forge::export_csv(forge::testing::vas_lookalike(3)));
  const std::string data = (dir / "data.csv").string();
  bool ran = true;
  for (const auto& [name, threads] : std::vector<std::pair<std::string, int>>{{"a", 1}, {"b", 1}, {"c", 4}}) {
    ran = ran && run_cli("cluster " + data + " --seed 17 --beta 0.25,0.45 --threads " + std::to_string(threads) +
                         " --out-dir " + (dir / name).string()) == 0;
  }
  std::size_t files = 0;
  const bool repeat = ran && same_tree(dir / "a", dir / "b", files);
  std::size_t files_parallel = 0;
  const bool parallel = ran && same_tree(dir / "a", dir / "c", files_parallel);
  fs::remove_all(dir);
  return outcome(repeat && parallel, std::to_string(files) + " files byte-identical across repeats: " +
                                         (repeat ? "yes" : "no") + "; 1 vs 4 threads identical: " +
                                         (parallel ? "yes" : "no"));
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {"parameter-formulas", 1.0, parameter_formulas},
      {"cooccurrence-oracle", 1.0, cooccurrence_oracle},
      {"merge-oracle", 1.0, merge_oracle},
      {"ca-structure", 1.0, ca_structure},
      {"doc-planted-recovery", 60.0, planted_recovery},
      {"doc-oracle-equivalence", 120.0, oracle_equivalence},
      {"similarity-properties", 5.0, similarity_properties},
      {"ca-mca-numerics", 10.0, ca_mca_numerics},
      {"determinism", 60.0, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome result;
    try {
      result = c.check();
    } catch (const std::exception& e) {
      result = outcome(false, std::string("threw: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= c.budget_seconds;
    const bool pass = result.pass && in_time;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << ": " << result.detail << " ["
              << fmt("%.2f s", seconds) << (in_time ? "" : fmt(", over the %.0f s budget", c.budget_seconds))
              << "]" << std::endl;
  }
  const auto start = std::chrono::steady_clock::now();
  const auto info = planted_fresh_instances();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "INFO doc-planted-fresh-instances: " << info << " [" << fmt("%.2f s", seconds) << "]" << std::endl;
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
