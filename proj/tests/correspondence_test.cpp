#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "forge/correspondence.hpp"
#include "forge/csv.hpp"
#include "test_support.hpp"

namespace {

using forge::testing::reference_clusters;

const std::set<std::string> kReferenceExclusions{"J85", "K85", "L85", "M85"};

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

Eigen::MatrixXd random_table(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_int_distribution<int> cell(1, 30);
  Eigen::MatrixXd t(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) t(i, j) = cell(rng);
  }
  return t;
}

std::vector<std::string> ids(std::size_t n, const std::string& prefix) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

forge::CategoricalTable toy_table() {
  // 5 subjects x 3 variables; the third variable has a missing cell.
  std::vector<forge::CategoricalVariable> vars{{"d1", {"low", "high"}, false},
                                               {"d2", {"low", "mid", "high"}, false},
                                               {"d3", {"low", "high"}, true}};
  std::vector<std::size_t> cells{0, 0, 0,  //
                                 0, 1, 1,  //
                                 1, 2, 2,  //
                                 1, 2, 1,  //
                                 0, 1, 0};
  return {ids(5, "s"), vars, cells};
}

TEST(Cooccurrence, ReproducesReferenceTable) {
  const auto clusters = reference_clusters();
  const auto table = forge::cooccurrence(clusters, kReferenceExclusions);
  const auto rows = forge::csv::parse(forge::testing::read_file(forge::testing::fixture_path("cooccurrence_expected.csv")));
  ASSERT_EQ(table.size(), 20U);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    for (std::size_t j = 1; j < rows[i].size(); ++j) {
      EXPECT_EQ(table.at(rows[i][0], rows[0][j]), std::stol(rows[i][j])) << rows[i][0] << "," << rows[0][j];
    }
  }
  EXPECT_EQ(table.at("6", "16"), 18);
  EXPECT_EQ(table.at("16", "16"), 31);
  EXPECT_EQ(table.at("16", "20"), 24);
  EXPECT_EQ(table.at("1", "2"), 0);
  EXPECT_TRUE(table.warnings.empty());
  EXPECT_EQ(forge::export_csv(table), forge::testing::read_file(forge::testing::fixture_path("cooccurrence_expected.csv")));
}

TEST(Cooccurrence, IncludingM85ChangesTheAnchor) {
  const auto table = forge::cooccurrence(reference_clusters(), {"J85", "K85", "L85"});
  EXPECT_EQ(table.at("6", "16"), 19);
}

TEST(Cooccurrence, InvariantsAndWarnings) {
  const auto table = forge::cooccurrence(reference_clusters(), {"J85", "nope"});
  ASSERT_EQ(table.warnings.size(), 1U);
  EXPECT_EQ(table.excluded, std::vector<std::string>{"J85"});
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t j = 0; j < table.size(); ++j) {
      EXPECT_EQ(table.at(i, j), table.at(j, i));
      EXPECT_LE(table.at(i, j), std::min(table.at(i, i), table.at(j, j)));
    }
  }
  const auto empty = forge::cooccurrence({}, {}, {"1", "2"});
  EXPECT_EQ(empty.counts, std::vector<long>(4, 0));
}

TEST(CorrespondenceAnalysis, ReferenceTableFirstAxisSeparatesGroups) {
  const auto map = forge::correspondence_analysis(forge::cooccurrence(reference_clusters(), kReferenceExclusions));
  ASSERT_GE(map.num_axes(), 2U);
  auto coord = [&](const std::string& id) {
    auto it = std::find(map.row_ids.begin(), map.row_ids.end(), id);
    return map.row_coords(it - map.row_ids.begin(), 0);
  };
  double first_sign = 0.0;
  for (const auto* id : {"1", "3", "4", "7", "12", "14", "17"}) {
    if (first_sign == 0.0) first_sign = std::copysign(1.0, coord(id));
    EXPECT_GT(coord(id) * first_sign, 0.0) << id;
  }
  for (const auto* id : {"2", "5", "6", "8", "9", "11", "16", "20"}) EXPECT_LT(coord(id) * first_sign, 0.0) << id;
  EXPECT_NEAR(map.inertia_pct[0], 41.4, 0.1);
}

TEST(CorrespondenceAnalysis, TotalInertiaIsChiSquareOverN) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_table(rng, 4 + trial % 5, 3 + trial % 4);
    const auto map = forge::correspondence_analysis(t, ids(t.rows(), "r"), ids(t.cols(), "c"));
    EXPECT_NEAR(map.total_inertia, chi_square_over_n(t), 1e-9);
    double sum = 0.0;
    for (double e : map.eigenvalues) sum += e;
    EXPECT_NEAR(sum, map.total_inertia, 1e-9);
    double pct = 0.0;
    for (std::size_t k = 0; k < map.num_axes(); ++k) {
      pct += map.inertia_pct[k];
      if (k > 0) EXPECT_LE(map.inertia_pct[k], map.inertia_pct[k - 1]);
    }
    EXPECT_NEAR(pct, 100.0, 1e-9);
  }
}

TEST(CorrespondenceAnalysis, TransitionFormulasAndCentring) {
  std::mt19937_64 rng(9);
  const auto t = random_table(rng, 7, 5);
  const auto map = forge::correspondence_analysis(t, ids(7, "r"), ids(5, "c"));
  const Eigen::MatrixXd p = t / t.sum();
  for (std::size_t k = 0; k < map.num_axes(); ++k) {
    const double sigma = std::sqrt(map.eigenvalues[k]);
    const auto kk = static_cast<Eigen::Index>(k);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double avg = (p.row(i) / map.row_masses(i)).dot(map.col_coords.col(kk));
      EXPECT_NEAR(map.row_coords(i, kk), avg / sigma, 1e-9);
    }
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double avg = (p.col(j) / map.col_masses(j)).dot(map.row_coords.col(kk));
      EXPECT_NEAR(map.col_coords(j, kk), avg / sigma, 1e-9);
    }
    EXPECT_NEAR(map.row_masses.dot(map.row_coords.col(kk)), 0.0, 1e-9);
    Eigen::Index lead;
    map.row_coords.col(kk).cwiseAbs().maxCoeff(&lead);
    EXPECT_GT(map.row_coords(lead, kk), 0.0);
  }
}

TEST(CorrespondenceAnalysis, TwoByTwoDiagonal) {
  Eigen::MatrixXd t(2, 2);
  t << 10, 0, 0, 10;
  const auto map = forge::correspondence_analysis(t, {"a", "b"}, {"x", "y"});
  ASSERT_EQ(map.num_axes(), 1U);
  EXPECT_NEAR(map.inertia_pct[0], 100.0, 1e-12);
  EXPECT_NEAR(map.total_inertia, 1.0, 1e-12);
  EXPECT_LT(map.row_coords(0, 0) * map.row_coords(1, 0), 0.0);
}

TEST(CorrespondenceAnalysis, IndependenceHasNoInertia) {
  Eigen::VectorXd r(3), c(4);
  r << 1, 2, 3;
  c << 4, 1, 2, 5;
  const Eigen::MatrixXd t = r * c.transpose();
  const auto map = forge::correspondence_analysis(t, ids(3, "r"), ids(4, "c"));
  EXPECT_NEAR(map.total_inertia, 0.0, 1e-12);
  EXPECT_EQ(map.num_axes(), 0U);
}

TEST(CorrespondenceAnalysis, DropsZeroRowsAndColumns) {
  Eigen::MatrixXd t(3, 3);
  t << 1, 0, 2, 0, 0, 0, 3, 0, 1;
  const auto map = forge::correspondence_analysis(t, ids(3, "r"), ids(3, "c"));
  EXPECT_EQ(map.row_ids, (std::vector<std::string>{"r1", "r3"}));
  EXPECT_EQ(map.col_ids, (std::vector<std::string>{"c1", "c3"}));
  EXPECT_EQ(map.warnings.size(), 2U);
  Eigen::MatrixXd negative(1, 1);
  negative << -1;
  EXPECT_THROW(forge::correspondence_analysis(negative, {"r"}, {"c"}), forge::ValidationError);
}

TEST(CorrespondenceAnalysis, RowPermutationEquivariance) {
  std::mt19937_64 rng(13);
  const auto t = random_table(rng, 6, 4);
  const auto base = forge::correspondence_analysis(t, ids(6, "r"), ids(4, "c"));
  std::vector<int> perm{3, 0, 5, 1, 4, 2};
  Eigen::MatrixXd shuffled(6, 4);
  std::vector<std::string> shuffled_ids;
  for (int i = 0; i < 6; ++i) {
    shuffled.row(i) = t.row(perm[static_cast<std::size_t>(i)]);
    shuffled_ids.push_back("r" + std::to_string(perm[static_cast<std::size_t>(i)] + 1));
  }
  const auto moved = forge::correspondence_analysis(shuffled, shuffled_ids, ids(4, "c"));
  for (int i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k < base.num_axes(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      EXPECT_NEAR(moved.row_coords(i, kk), base.row_coords(perm[static_cast<std::size_t>(i)], kk), 1e-9);
    }
  }
}

TEST(Mca, TotalInertiaIdentity) {
  const auto table = toy_table();
  const auto map = forge::mca(table);
  const auto ind = forge::indicator_matrix(table);
  const double j = static_cast<double>(ind.col_ids.size());
  const double q = static_cast<double>(ind.num_variables);
  EXPECT_EQ(ind.col_ids.size(), 2U + 3U + 3U);
  EXPECT_NEAR(map.total_inertia, (j - q) / q, 1e-9);
}

TEST(Mca, MatchesEigenOracleOnIndicatorMatrix) {
  // Independent route: eigen-decomposition of S S^T from the chi-square
  // residuals instead of an SVD.
  const auto table = toy_table();
  const auto map = forge::mca(table);
  Eigen::MatrixXd z(5, 8);
  z.setZero();
  std::vector<int> offsets{0, 2, 5};
  for (int s = 0; s < 5; ++s) {
    for (int v = 0; v < 3; ++v) {
      z(s, offsets[static_cast<std::size_t>(v)] + static_cast<int>(table.cell(static_cast<std::size_t>(s), static_cast<std::size_t>(v)))) = 1.0;
    }
  }
  const double n = z.sum();
  Eigen::MatrixXd s(5, 8);
  for (int i = 0; i < 5; ++i) {
    for (int jj = 0; jj < 8; ++jj) {
      const double e = z.row(i).sum() * z.col(jj).sum() / n;
      s(i, jj) = (z(i, jj) - e) / std::sqrt(e * n);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s * s.transpose());
  std::vector<double> values;
  for (int k = 4; k >= 0; --k) {
    if (eig.eigenvalues()(k) > 1e-10) values.push_back(eig.eigenvalues()(k));
  }
  ASSERT_EQ(values.size(), map.num_axes());
  for (std::size_t k = 0; k < values.size(); ++k) {
    EXPECT_NEAR(map.eigenvalues[k], values[k], 1e-9);
    // Row principal coordinate = eigenvector / sqrt(mass) * sigma, up to sign.
    const Eigen::VectorXd vec = eig.eigenvectors().col(4 - static_cast<int>(k));
    const double sigma = std::sqrt(values[k]);
    double sign = 0.0;
    for (int i = 0; i < 5; ++i) {
      const double expected = vec(i) / std::sqrt(1.0 / 5.0) * sigma;
      if (sign == 0.0 && std::abs(expected) > 1e-6) sign = map.row_coords(i, static_cast<Eigen::Index>(k)) / expected > 0 ? 1.0 : -1.0;
      EXPECT_NEAR(map.row_coords(i, static_cast<Eigen::Index>(k)), sign * expected, 1e-8);
    }
  }
}

TEST(Mca, IdenticalSubjectsShareCoordinates) {
  std::vector<forge::CategoricalVariable> vars{{"d1", {"low", "high"}, false}, {"d2", {"low", "high"}, false}};
  const forge::CategoricalTable table(ids(4, "s"), vars, {0, 1, 0, 1, 1, 0, 1, 1});
  const auto map = forge::mca(table);
  for (std::size_t k = 0; k < map.num_axes(); ++k) {
    EXPECT_NEAR(map.row_coords(0, static_cast<Eigen::Index>(k)), map.row_coords(1, static_cast<Eigen::Index>(k)), 1e-12);
  }
}

TEST(Mca, SingleCategoryVariableIsDropped) {
  std::vector<forge::CategoricalVariable> vars{{"d1", {"low", "high"}, false},
                                               {"d2", {"low", "high"}, false},
                                               {"d3", {"low", "high"}, false}};
  const forge::CategoricalTable table(ids(3, "s"), vars, {0, 1, 0, 1, 0, 0, 1, 1, 0});
  const auto map = forge::mca(table);
  ASSERT_FALSE(map.warnings.empty());
  EXPECT_NE(map.warnings[0].find("d3"), std::string::npos);
  EXPECT_NEAR(map.total_inertia, (4.0 - 2.0) / 2.0, 1e-9);
}

TEST(CorrelationRatio, HandExample) {
  const std::vector<double> coords{-1, 0, 1};
  const std::vector<std::size_t> groups{0, 0, 1};
  EXPECT_NEAR(forge::correlation_ratio(coords, groups), 0.75, 1e-12);
  EXPECT_EQ(forge::correlation_ratio(coords, std::vector<std::size_t>{2, 2, 2}), 0.0);
  EXPECT_NEAR(forge::correlation_ratio(coords, std::vector<std::size_t>{0, 1, 2}), 1.0, 1e-12);
  const std::vector<double> flat{0.5, 0.5, 0.5};
  EXPECT_EQ(forge::correlation_ratio(flat, groups), 0.0);
}

TEST(VariableAxisCorrelation, BoundedAndExported) {
  const auto table = toy_table();
  const auto map = forge::mca(table);
  const auto eta = forge::variable_axis_correlation(table, map, 2);
  ASSERT_EQ(eta.variables.size(), 3U);
  for (double v : eta.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(forge::csv::parse(forge::export_csv(eta)).size(), 4U);
  EXPECT_THROW(forge::variable_axis_correlation(table, map, map.num_axes() + 1), forge::ValidationError);
  const auto json = forge::to_json(map);
  EXPECT_EQ(json.at("rows").size(), 5U);
  EXPECT_EQ(json.at("inertia_pct").size(), map.num_axes());
}

}  // namespace
