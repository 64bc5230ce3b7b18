#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include <json.hpp>

#include "forge/cluster_io.hpp"
#include "forge/dataset.hpp"
#include "forge/doc_engine.hpp"
#include "forge/pipeline.hpp"
#include "generators.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = -1;
  std::string out;
};

// Runs the forge binary; stderr goes to `err_file` when given.
Result run(const std::string& args, const std::string& env = "", const fs::path& err_file = {}) {
  std::string cmd = env + " " + FORGE_BIN + " " + args;
  cmd += err_file.empty() ? " 2>/dev/null" : " 2>" + err_file.string();
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("forge_cli_" + std::to_string(::getpid()) + "_" +
                                         ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    data_ = forge::testing::small_instance(4, 12, 9);
    forge::write_text_file(dir_ / "data.csv", forge::export_csv(data_));
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  forge::VasDataSet data_;
};

TEST_F(CliTest, ClusterOutputMatchesLibrary) {
  const auto r = run("cluster " + path("data.csv") + " --seed 5 --beta 0.25 --stdout");
  ASSERT_EQ(r.code, 0);
  forge::DocParams params;
  params.seed = 5;
  const std::vector<forge::DocRun> runs{forge::doc_full_coverage(data_, params)};
  EXPECT_EQ(json::parse(r.out), forge::to_json(forge::combine_runs(runs)));
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
  ASSERT_EQ(run("run " + path("data.csv") + " --seed 3 --beta 0.25,0.35 --threads 1 --out-dir " + path("a")).code, 0);
  ASSERT_EQ(run("run " + path("data.csv") + " --seed 3 --beta 0.25,0.35 --threads 4 --out-dir " + path("b")).code, 0);
  const auto manifest = json::parse(forge::read_text_file(dir_ / "a" / "manifest.json"));
  ASSERT_GE(manifest.at("artifacts").size(), 10U);
  for (const auto& name : manifest.at("artifacts")) {
    const auto file = name.get<std::string>();
    EXPECT_EQ(forge::read_text_file(dir_ / "a" / file), forge::read_text_file(dir_ / "b" / file)) << file;
  }
}

TEST_F(CliTest, ClusterWritesPerBetaFiles) {
  ASSERT_EQ(run("cluster " + path("data.csv") + " --seed 1 --beta 0.25,0.35 --out-dir " + path("c")).code, 0);
  for (const auto* name : {"clusters_25.json", "clusters_25.csv", "clusters_35.json", "clusters_35.csv", "clusters.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "c" / name)) << name;
  }
  const auto combined = forge::cluster_file_from_json(json::parse(forge::read_text_file(dir_ / "c" / "clusters.json")));
  EXPECT_TRUE(combined.params.at("beta").is_array());
}

TEST_F(CliTest, ConfigFileFillsUnsetFlagsOnly) {
  forge::write_text_file(dir_ / "cfg.json", R"({"seed": 7, "alpha": 0.2, "beta": [0.25, 0.35], "unknown": 1})");
  const auto r = run("cluster " + path("data.csv") + " --config " + path("cfg.json") + " --seed 9 --stdout");
  ASSERT_EQ(r.code, 0);
  const auto params = json::parse(r.out).at("params");
  EXPECT_EQ(params.at("seed"), 9);
  EXPECT_DOUBLE_EQ(params.at("alpha").get<double>(), 0.2);
  EXPECT_EQ(params.at("beta"), json({0.25, 0.35}));
}

TEST_F(CliTest, SeedIsMandatoryUnderCi) {
  const auto err = dir_ / "err.txt";
  EXPECT_EQ(run("cluster " + path("data.csv") + " --stdout", "CI=1", err).code, 2);
  EXPECT_NE(forge::read_text_file(err).find("--seed"), std::string::npos);
  EXPECT_EQ(run("cluster " + path("data.csv") + " --stdout --seed 1", "CI=1").code, 0);
  EXPECT_EQ(run("cluster " + path("data.csv") + " --stdout", "CI=").code, 0);
}

TEST_F(CliTest, ErrorsAreJsonWithExitCodes) {
  const auto err = dir_ / "err.txt";
  forge::write_text_file(dir_ / "bad.csv", "id,d1,d2\ns1,0.5,1.5\n");
  EXPECT_EQ(run("ingest " + path("bad.csv"), "", err).code, 2);
  auto report = json::parse(forge::read_text_file(err)).at("error");
  EXPECT_EQ(report.at("type"), "validation");
  EXPECT_EQ(report.at("row"), 0);
  EXPECT_EQ(report.at("column"), 1);

  EXPECT_EQ(run("cluster " + path("data.csv") + " --alpha 1.5 --stdout", "", err).code, 3);
  report = json::parse(forge::read_text_file(err)).at("error");
  EXPECT_EQ(report.at("type"), "parameter");

  EXPECT_EQ(run("run " + path("data.csv") + " --cut 2 --out-dir " + path("o"), "", err).code, 2);
  report = json::parse(forge::read_text_file(err)).at("error");
  EXPECT_EQ(report.at("stage"), "config");

  EXPECT_EQ(run("ingest " + path("missing.csv"), "", err).code, 5);
  EXPECT_EQ(json::parse(forge::read_text_file(err)).at("error").at("type"), "io");
  EXPECT_EQ(run("no-such-command").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(CliTest, TrialCapFromEnvironment) {
  const auto m = forge::inner_trial_count(0.1, forge::discrimination_set_size(data_.num_dimensions(), 0.25));
  const auto err = dir_ / "err.txt";
  const auto below = std::to_string(m - 1);
  EXPECT_EQ(run("cluster " + path("data.csv") + " --seed 2 --stdout", "FORGE_MAX_TRIALS=" + below, err).code, 3);
  EXPECT_NE(forge::read_text_file(err).find("cap of " + below), std::string::npos);
  const auto roomy = run("cluster " + path("data.csv") + " --seed 2 --stdout", "FORGE_MAX_TRIALS=" + std::to_string(m));
  ASSERT_EQ(roomy.code, 0);
  EXPECT_EQ(json::parse(roomy.out).at("clusters").size(),
            json::parse(run("cluster " + path("data.csv") + " --seed 2 --stdout").out).at("clusters").size());
  EXPECT_EQ(run("cluster " + path("data.csv") + " --seed 2 --stdout", "FORGE_MAX_TRIALS=abc").code, 2);
}

TEST_F(CliTest, AnalysisSubcommandsChain) {
  ASSERT_EQ(run("cluster " + path("data.csv") + " --seed 1 --out-dir " + path("c")).code, 0);
  const auto clusters = path("c/clusters.json");
  const auto sims = run("similarity " + clusters);
  ASSERT_EQ(sims.code, 0);
  EXPECT_EQ(sims.out.rfind("cluster,", 0), 0U);
  const auto dendro = run("dendrogram " + clusters + " --linkage complete");
  ASSERT_EQ(dendro.code, 0);
  EXPECT_EQ(json::parse(dendro.out).at("linkage"), "complete");
  ASSERT_EQ(run("merge " + clusters + " --cut 0.6 --labels " + path("data.csv") + " -o " + path("merge.json")).code, 0);
  const auto merged = json::parse(forge::read_text_file(dir_ / "merge.json"));
  EXPECT_FALSE(merged.at("personas").empty());
  const auto report = run("describe " + path("merge.json") + " --labels " + path("data.csv"));
  ASSERT_EQ(report.code, 0);
  EXPECT_EQ(report.out.rfind("# Proto-personas", 0), 0U);
  EXPECT_EQ(run("cooccur " + clusters).code, 0);
  const auto ca = run("ca " + clusters);
  ASSERT_EQ(ca.code, 0);
  EXPECT_TRUE(json::parse(ca.out).contains("inertia_pct"));
  forge::write_text_file(dir_ / "table.csv", "x,a,b\nr1,10,2\nr2,3,9\n");
  EXPECT_EQ(run("ca " + path("table.csv")).code, 0);
  EXPECT_EQ(run("bin " + path("data.csv") + " --bins 3").code, 0);
  EXPECT_EQ(run("mca " + path("data.csv")).code, 0);
  const auto corr = run("corr " + path("data.csv") + " --axes 2 --bins-for d1=2");
  ASSERT_EQ(corr.code, 0);
  EXPECT_EQ(corr.out.rfind("dimension,axis1,axis2", 0), 0U);
  EXPECT_EQ(run("estimate-w " + path("data.csv")).code, 0);
}

}  // namespace
