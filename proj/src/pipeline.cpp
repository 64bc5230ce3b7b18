#include "forge/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "forge/cluster_io.hpp"
#include "forge/csv.hpp"
#include "forge/error.hpp"
#include "forge/ids.hpp"

namespace forge {

namespace {

std::string beta_tag(double beta) { return std::to_string(static_cast<long>(std::lround(beta * 100.0))); }

template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e);
  }
}

std::string dump(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

}  // namespace

nlohmann::json error_report(const std::exception& e) {
  nlohmann::json report{{"message", e.what()}};
  if (const auto* v = dynamic_cast<const ValidationError*>(&e)) {
    report["type"] = "validation";
    if (v->row()) report["row"] = *v->row();
    if (v->column()) report["column"] = *v->column();
  } else if (dynamic_cast<const ParameterError*>(&e) != nullptr) {
    report["type"] = "parameter";
  } else if (const auto* n = dynamic_cast<const NoClusterFound*>(&e)) {
    report["type"] = "no_cluster_found";
    report["subject"] = n->subject_id();
  } else if (const auto* n = dynamic_cast<const NoSharedDims*>(&e)) {
    report["type"] = "no_shared_dims";
    report["subject"] = n->subject_id();
  } else if (dynamic_cast<const std::filesystem::filesystem_error*>(&e) != nullptr) {
    report["type"] = "io";
  } else {
    report["type"] = "internal";
  }
  return report;
}

StageError::StageError(std::string stage, const std::exception& cause)
    : std::runtime_error("stage '" + stage + "' failed: " + cause.what()),
      stage_(std::move(stage)),
      cause_(cause.what()),
      report_(error_report(cause)) {
  report_["stage"] = stage_;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::filesystem::filesystem_error("cannot read", path, std::make_error_code(std::errc::io_error));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::filesystem::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
  out << content;
  if (!out) throw std::filesystem::filesystem_error("write failed", path, std::make_error_code(std::errc::io_error));
}

void validate(const RunConfig& config) {
  if (config.betas.empty()) throw ValidationError("beta list must not be empty");
  for (double b : config.betas) {
    if (!(b > 0.0 && b < 1.0)) throw ValidationError("every beta must lie in (0,1), got " + format_number(b));
  }
  std::set<std::string> tags;
  for (double b : config.betas) {
    if (!tags.insert(beta_tag(b)).second) throw ValidationError("beta list repeats the label " + beta_tag(b));
  }
  if (!(config.cut_height >= 0.0 && config.cut_height <= 1.0)) {
    throw ValidationError("cut height must lie in [0,1]");
  }
  if (config.input.empty()) throw ValidationError("an input file is required");
  if (config.output_dir.empty()) throw ValidationError("an output directory is required");
}

std::vector<ProtoPersona> personas_from_cut(std::span<const SubspaceCluster> clusters,
                                            const std::vector<std::vector<std::string>>& sets,
                                            std::span<const Dimension> labels, double conflict_threshold) {
  std::vector<ProtoPersona> personas;
  MergeOptions options;
  options.conflict_threshold = conflict_threshold;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto members = select_clusters(clusters, sets[i]);
    auto persona = merge_clusters(members, options);
    persona.id = "P" + std::to_string(i + 1);
    persona.name = persona.id;
    persona.description = describe(persona, labels);
    personas.push_back(std::move(persona));
  }
  return personas;
}

nlohmann::json merge_document(double height, Linkage linkage, const std::vector<std::vector<std::string>>& sets,
                              std::span<const ProtoPersona> personas) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& p : personas) list.push_back(to_json(p));
  return {{"height", height}, {"linkage", to_string(linkage)}, {"sets", sets}, {"personas", std::move(list)}};
}

std::vector<ProtoPersona> personas_from_json(const nlohmann::json& doc) {
  try {
    const auto& list = doc.is_array() ? doc : doc.at("personas");
    std::vector<ProtoPersona> out;
    for (const auto& p : list) {
      ProtoPersona persona;
      persona.id = p.at("id").get<std::string>();
      persona.name = p.value("name", persona.id);
      persona.source_ids = p.value("source_ids", std::vector<std::string>{});
      persona.members = p.value("members", std::vector<std::string>{});
      persona.description = p.value("description", std::string());
      for (const auto& d : p.at("dims")) {
        persona.dims.push_back({d.at("id").get<std::string>(), d.at("mean").get<double>(),
                                d.value("std_dev", 0.0), d.value("support", std::size_t{1}),
                                d.value("conflicting", false)});
      }
      out.push_back(std::move(persona));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed proto-persona JSON: ") + e.what());
  }
}

LabelledTable parse_table_csv(std::string_view text) {
  const auto rows = csv::parse(text);
  if (rows.size() < 2 || rows[0].size() < 2) throw ValidationError("table CSV needs a header and at least one row");
  LabelledTable table;
  table.col_ids.assign(rows[0].begin() + 1, rows[0].end());
  table.values.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(table.col_ids.size()));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ValidationError("ragged table row " + std::to_string(i), i - 1);
    table.row_ids.push_back(rows[i][0]);
    for (std::size_t j = 1; j < rows[i].size(); ++j) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(rows[i][j], &used);
        if (used != rows[i][j].size()) throw std::invalid_argument("trailing text");
      } catch (const std::exception&) {
        throw ValidationError("non-numeric table cell '" + rows[i][j] + "'", i - 1, j - 1);
      }
      table.values(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1)) = v;
    }
  }
  return table;
}

PipelineResult run_pipeline(const RunConfig& config) {
  stage("config", [&] {
    validate(config);
    return 0;
  });
  PipelineResult result;
  auto emit = [&](const std::string& name, std::string_view content) {
    write_text_file(config.output_dir / name, content);
    result.artifacts.push_back(name);
  };

  const auto data = stage("ingest", [&] { return ingest_csv(read_text_file(config.input)); });
  stage("ingest", [&] {
    emit("dataset.json", dump(to_json(data)));
    return 0;
  });

  DocParams params;
  params.alpha = config.alpha;
  params.seed = config.seed;
  params.max_trials = config.max_trials;
  params.threads = config.threads;
  if (config.w) {
    params.w = *config.w;
  } else {
    const auto estimate = stage("estimate-w", [&] { return estimate_w(data); });
    params.w = estimate.suggested;
    stage("estimate-w", [&] {
      emit("w_estimate.json", dump({{"raw", estimate.raw}, {"suggested", estimate.suggested}}));
      return 0;
    });
  }

  std::vector<DocRun> runs;
  for (double beta : config.betas) {
    params.beta = beta;
    auto run = stage("cluster", [&] { return doc_full_coverage(data, params); });
    stage("cluster", [&] {
      emit("clusters_" + beta_tag(beta) + ".json", dump(to_json(run)));
      emit("clusters_" + beta_tag(beta) + ".csv", export_tables_csv(run.clusters, data.dimensions()));
      return 0;
    });
    runs.push_back(std::move(run));
  }
  const auto combined = combine_runs(runs);
  result.warnings = combined.warnings;
  stage("cluster", [&] {
    emit("clusters.json", dump(to_json(combined)));
    emit("clusters.csv", export_tables_csv(combined.clusters, data.dimensions()));
    return 0;
  });
  const auto& clusters = combined.clusters;

  if (clusters.size() >= 2) {
    const auto sims = stage("similarity", [&] { return similarity_matrix(clusters, config.threads); });
    stage("similarity", [&] {
      emit("similarity.csv", export_csv(sims));
      return 0;
    });
    const auto dendrogram = stage("dendrogram", [&] { return build_dendrogram(sims, config.linkage); });
    stage("dendrogram", [&] {
      auto doc = to_json(dendrogram);
      doc["linkage"] = to_string(config.linkage);
      emit("dendrogram.json", dump(doc));
      return 0;
    });
    stage("merge", [&] {
      const auto sets = cut_dendrogram(dendrogram, config.cut_height);
      const auto personas =
          personas_from_cut(clusters, sets, data.dimensions(), config.conflict_threshold);
      emit("merge.json", dump(merge_document(config.cut_height, config.linkage, sets, personas)));
      emit("report.md", persona_report_markdown(personas, data.dimensions()));
      return 0;
    });
  } else {
    result.warnings.push_back("fewer than 2 clusters: similarity, dendrogram and merge skipped");
  }

  stage("cooccur", [&] {
    std::vector<std::string> subjects;
    for (const auto& s : data.subjects()) subjects.push_back(s.id);
    const auto table = cooccurrence(clusters, config.exclude, subjects);
    result.warnings.insert(result.warnings.end(), table.warnings.begin(), table.warnings.end());
    emit("cooccurrence.csv", export_csv(table));
    const auto map = correspondence_analysis(table);
    emit("ca.json", dump(to_json(map)));
    return 0;
  });

  if (config.run_mca) {
    stage("mca", [&] {
      std::map<std::string, BinPolicy> policies;
      for (const auto& dim : data.dimensions()) {
        auto it = config.bins_per_dim.find(dim.id);
        policies[dim.id] = it == config.bins_per_dim.end() ? config.bins : it->second;
      }
      for (const auto& [id, policy] : config.bins_per_dim) {
        if (!data.dimension_index(id)) throw ValidationError("bin policy names unknown dimension '" + id + "'");
      }
      const auto table = bin_to_categories(data, policies);
      emit("categories.csv", export_csv(table));
      const auto map = mca(table);
      emit("mca.json", dump(to_json(map)));
      const auto eta = variable_axis_correlation(table, map, std::min(config.mca_axes, map.num_axes()));
      emit("eta2.csv", export_csv(eta));
      return 0;
    });
  }

  stage("manifest", [&] {
    nlohmann::json manifest{{"artifacts", result.artifacts}, {"warnings", result.warnings}};
    write_text_file(config.output_dir / "manifest.json", dump(manifest));
    return 0;
  });
  result.artifacts.push_back("manifest.json");
  return result;
}

}  // namespace forge
