// forge: batch front end for the persona-clustering library.

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "forge/cluster_io.hpp"
#include "forge/correspondence.hpp"
#include "forge/csv.hpp"
#include "forge/dataset.hpp"
#include "forge/doc_engine.hpp"
#include "forge/error.hpp"
#include "forge/ids.hpp"
#include "forge/persona.hpp"
#include "forge/pipeline.hpp"
#include "forge/service.hpp"

namespace {

using nlohmann::json;

enum ExitCode { kOk = 0, kInternal = 1, kValidation = 2, kParameter = 3, kNoResult = 4, kIo = 5 };

int exit_code_for(const json& report) {
  const auto type = report.value("type", std::string("internal"));
  if (type == "validation") return kValidation;
  if (type == "parameter") return kParameter;
  if (type == "no_cluster_found" || type == "no_shared_dims") return kNoResult;
  if (type == "io") return kIo;
  return kInternal;
}

struct Options {
  std::string input;
  std::string output;
  std::string out_dir = ".";
  bool to_stdout = false;
  std::string w = "0.3";
  double alpha = 0.1;
  std::vector<double> betas{0.25};
  std::uint64_t seed = 0;
  std::string target;
  unsigned threads = std::max(1U, std::thread::hardware_concurrency());
  std::string linkage = "average";
  double cut = 0.5;
  double conflict = 0.15;
  std::vector<std::string> veto;
  std::vector<std::string> exclude;
  std::string bins = "auto";
  std::vector<std::string> bins_for;
  std::size_t axes = 2;
  std::string labels;
  double drop_above = -1.0;
  bool no_mca = false;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "forge-data";
  unsigned workers = 1;
};

std::uint64_t max_trials_from_env() {
  const char* raw = std::getenv("FORGE_MAX_TRIALS");
  if (raw == nullptr || *raw == '\0') return forge::kDefaultTrialCap;
  try {
    std::size_t used = 0;
    const auto value = std::stoull(raw, &used);
    if (used != std::string(raw).size() || value == 0) throw std::invalid_argument("bad");
    return value;
  } catch (const std::exception&) {
    throw forge::ValidationError(std::string("FORGE_MAX_TRIALS must be a positive integer, got '") + raw + "'");
  }
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    forge::write_text_file(path, content);
  }
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

forge::VasDataSet load_dataset(const std::string& path) { return forge::ingest_csv(forge::read_text_file(path)); }

forge::ClusterFile load_clusters(const std::string& path) {
  try {
    return forge::cluster_file_from_json(json::parse(forge::read_text_file(path)));
  } catch (const json::parse_error& e) {
    throw forge::ValidationError(path + " is not valid JSON: " + e.what());
  }
}

std::optional<double> parse_w(const std::string& text) {
  if (text == "auto") return std::nullopt;
  try {
    std::size_t used = 0;
    const double w = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
    return w;
  } catch (const std::exception&) {
    throw forge::ValidationError("--w must be a number or 'auto', got '" + text + "'");
  }
}

std::map<std::string, forge::BinPolicy> parse_bins_for(const std::vector<std::string>& items) {
  std::map<std::string, forge::BinPolicy> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw forge::ValidationError("--bins-for expects dim=2|3|auto, got '" + item + "'");
    out[item.substr(0, eq)] = forge::parse_bin_policy(item.substr(eq + 1));
  }
  return out;
}

std::map<std::string, forge::BinPolicy> bin_policies(const forge::VasDataSet& data, const Options& o) {
  const auto overrides = parse_bins_for(o.bins_for);
  const auto fallback = forge::parse_bin_policy(o.bins);
  std::map<std::string, forge::BinPolicy> out;
  for (const auto& dim : data.dimensions()) out[dim.id] = fallback;
  for (const auto& [id, policy] : overrides) {
    if (!data.dimension_index(id)) throw forge::ValidationError("--bins-for names unknown dimension '" + id + "'");
    out[id] = policy;
  }
  return out;
}

std::string beta_tag(double beta) { return std::to_string(static_cast<long>(std::lround(beta * 100.0))); }

// --- subcommands ---------------------------------------------------------

int cmd_ingest(const Options& o) {
  write_output(o.output, dump(forge::to_json(load_dataset(o.input))));
  return kOk;
}

int cmd_estimate_w(const Options& o) {
  const auto estimate = forge::estimate_w(load_dataset(o.input));
  write_output(o.output, dump({{"raw", estimate.raw}, {"suggested", estimate.suggested}}));
  return kOk;
}

int cmd_cluster(const Options& o) {
  const auto data = load_dataset(o.input);
  forge::DocParams params;
  params.alpha = o.alpha;
  params.seed = o.seed;
  params.threads = o.threads;
  params.max_trials = max_trials_from_env();
  if (auto w = parse_w(o.w)) {
    params.w = *w;
  } else {
    params.w = forge::estimate_w(data).suggested;
  }
  if (o.betas.empty()) throw forge::ValidationError("--beta needs at least one value");

  if (!o.target.empty()) {
    if (o.betas.size() != 1) throw forge::ValidationError("--target runs take a single --beta");
    params.beta = o.betas[0];
    params.target = o.target;
    auto cluster = forge::doc_for_target(data, params);
    cluster.id = forge::cluster_label(0, params.beta);
    json doc{{"params", {{"w", params.w}, {"alpha", params.alpha}, {"beta", params.beta}, {"seed", params.seed},
                         {"target", o.target}}},
             {"cluster", forge::to_json(cluster)}};
    write_output(o.output, dump(doc));
    return kOk;
  }

  std::vector<forge::DocRun> runs;
  for (double beta : o.betas) {
    params.beta = beta;
    runs.push_back(forge::doc_full_coverage(data, params));
    for (const auto& w : runs.back().warnings) std::cerr << "warning: " << w << "\n";
  }
  const auto combined = forge::combine_runs(runs);
  if (o.to_stdout) {
    std::cout << dump(forge::to_json(combined));
    return kOk;
  }
  const std::filesystem::path dir = o.out_dir;
  for (const auto& run : runs) {
    const auto tag = beta_tag(run.params.beta);
    forge::write_text_file(dir / ("clusters_" + tag + ".json"), dump(forge::to_json(run)));
    forge::write_text_file(dir / ("clusters_" + tag + ".csv"), forge::export_tables_csv(run.clusters, data.dimensions()));
  }
  forge::write_text_file(dir / "clusters.json", dump(forge::to_json(combined)));
  forge::write_text_file(dir / "clusters.csv", forge::export_tables_csv(combined.clusters, data.dimensions()));
  return kOk;
}

int cmd_similarity(const Options& o) {
  auto clusters = load_clusters(o.input).clusters;
  if (o.drop_above >= 0.0) clusters = forge::drop_similar(clusters, o.drop_above);
  write_output(o.output, forge::export_csv(forge::similarity_matrix(clusters, o.threads)));
  return kOk;
}

int cmd_dendrogram(const Options& o) {
  const auto clusters = load_clusters(o.input).clusters;
  const auto linkage = forge::parse_linkage(o.linkage);
  auto doc = forge::to_json(forge::build_dendrogram(forge::similarity_matrix(clusters, o.threads), linkage));
  doc["linkage"] = forge::to_string(linkage);
  write_output(o.output, dump(doc));
  return kOk;
}

std::vector<forge::Dimension> labels_for(const Options& o, const std::vector<forge::SubspaceCluster>& clusters) {
  if (!o.labels.empty()) return load_dataset(o.labels).dimensions();
  std::set<std::string> ids;
  for (const auto& c : clusters) ids.insert(c.subspace.begin(), c.subspace.end());
  std::vector<forge::Dimension> dims;
  for (const auto& id : ids) dims.push_back({id, id, "", ""});
  return dims;
}

int cmd_merge(const Options& o) {
  if (!(o.cut >= 0.0 && o.cut <= 1.0)) throw forge::ValidationError("--cut must lie in [0,1]");
  const auto clusters = load_clusters(o.input).clusters;
  const auto linkage = forge::parse_linkage(o.linkage);
  const auto d = forge::build_dendrogram(forge::similarity_matrix(clusters, o.threads), linkage);
  const auto sets = forge::cut_dendrogram(d, o.cut);
  const auto labels = labels_for(o, clusters);
  auto personas = forge::personas_from_cut(clusters, sets, labels, o.conflict);
  if (!o.veto.empty()) {
    for (std::size_t i = 0; i < personas.size(); ++i) {
      forge::MergeOptions options;
      options.conflict_threshold = o.conflict;
      for (const auto& v : o.veto) {
        if (std::any_of(personas[i].dims.begin(), personas[i].dims.end(),
                        [&](const forge::PersonaDimension& pd) { return pd.id == v; })) {
          options.vetoed_dims.push_back(v);
        }
      }
      auto merged = forge::merge_clusters(forge::select_clusters(clusters, sets[i]), options);
      merged.id = personas[i].id;
      merged.name = personas[i].name;
      merged.description = forge::describe(merged, labels);
      personas[i] = std::move(merged);
    }
  }
  write_output(o.output, dump(forge::merge_document(o.cut, linkage, sets, personas)));
  return kOk;
}

int cmd_describe(const Options& o) {
  const auto doc = json::parse(forge::read_text_file(o.input));
  std::vector<forge::ProtoPersona> personas;
  if (doc.contains("clusters")) {
    for (const auto& c : forge::cluster_file_from_json(doc).clusters) {
      const std::vector<forge::SubspaceCluster> one{c};
      auto p = forge::merge_clusters(one);
      p.id = c.id;
      p.name = c.id;
      personas.push_back(std::move(p));
    }
  } else {
    personas = forge::personas_from_json(doc);
  }
  std::vector<forge::Dimension> labels;
  if (!o.labels.empty()) {
    labels = load_dataset(o.labels).dimensions();
  } else {
    std::set<std::string> ids;
    for (const auto& p : personas) {
      for (const auto& d : p.dims) ids.insert(d.id);
    }
    for (const auto& id : ids) labels.push_back({id, id, "", ""});
  }
  for (auto& p : personas) p.description = forge::describe(p, labels);
  write_output(o.output, forge::persona_report_markdown(personas, labels));
  return kOk;
}

forge::CooccurrenceTable cooccurrence_from(const Options& o) {
  const auto clusters = load_clusters(o.input).clusters;
  const std::set<std::string> exclude(o.exclude.begin(), o.exclude.end());
  std::vector<std::string> subjects;
  if (!o.labels.empty()) {
    for (const auto& s : load_dataset(o.labels).subjects()) subjects.push_back(s.id);
  }
  auto table = forge::cooccurrence(clusters, exclude, subjects);
  for (const auto& w : table.warnings) std::cerr << "warning: " << w << "\n";
  return table;
}

int cmd_cooccur(const Options& o) {
  write_output(o.output, forge::export_csv(cooccurrence_from(o)));
  return kOk;
}

int cmd_ca(const Options& o) {
  forge::PerceptualMap map;
  if (o.input.size() >= 5 && o.input.substr(o.input.size() - 5) == ".json") {
    map = forge::correspondence_analysis(cooccurrence_from(o));
  } else {
    auto table = forge::parse_table_csv(forge::read_text_file(o.input));
    map = forge::correspondence_analysis(table.values, table.row_ids, table.col_ids);
  }
  for (const auto& w : map.warnings) std::cerr << "warning: " << w << "\n";
  write_output(o.output, dump(forge::to_json(map)));
  return kOk;
}

int cmd_bin(const Options& o) {
  const auto data = load_dataset(o.input);
  write_output(o.output, forge::export_csv(forge::bin_to_categories(data, bin_policies(data, o))));
  return kOk;
}

int cmd_mca(const Options& o) {
  const auto data = load_dataset(o.input);
  const auto map = forge::mca(forge::bin_to_categories(data, bin_policies(data, o)));
  for (const auto& w : map.warnings) std::cerr << "warning: " << w << "\n";
  write_output(o.output, dump(forge::to_json(map)));
  return kOk;
}

int cmd_corr(const Options& o) {
  const auto data = load_dataset(o.input);
  const auto table = forge::bin_to_categories(data, bin_policies(data, o));
  const auto map = forge::mca(table);
  write_output(o.output, forge::export_csv(forge::variable_axis_correlation(table, map, std::min(o.axes, map.num_axes()))));
  return kOk;
}

int cmd_run(const Options& o) {
  forge::RunConfig config;
  config.input = o.input;
  config.output_dir = o.out_dir;
  config.w = parse_w(o.w);
  config.alpha = o.alpha;
  config.betas = o.betas;
  config.seed = o.seed;
  config.max_trials = max_trials_from_env();
  config.threads = o.threads;
  config.linkage = forge::parse_linkage(o.linkage);
  config.cut_height = o.cut;
  config.conflict_threshold = o.conflict;
  config.exclude = std::set<std::string>(o.exclude.begin(), o.exclude.end());
  config.run_mca = !o.no_mca;
  config.bins = forge::parse_bin_policy(o.bins);
  config.bins_per_dim = parse_bins_for(o.bins_for);
  config.mca_axes = o.axes;
  const auto result = forge::run_pipeline(config);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  return kOk;
}

forge::Service* g_service = nullptr;

void handle_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

int cmd_serve(const Options& o) {
  forge::ServiceOptions options;
  options.data_dir = o.data_dir;
  options.workers = std::max(1U, o.workers);
  options.run_threads = o.threads;
  options.max_trials = max_trials_from_env();
  forge::Service service(options);
  g_service = &service;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  std::cerr << "forge serving on http://" << o.host << ":" << o.port << " (data dir " << o.data_dir << ")\n";
  const bool ok = service.listen(o.host, o.port);
  g_service = nullptr;
  if (!ok) throw std::runtime_error("could not bind " + o.host + ":" + std::to_string(o.port));
  return kOk;
}

// --- config file ---------------------------------------------------------

std::string config_value(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_array()) {
    std::vector<std::string> parts;
    for (const auto& v : value) parts.push_back(config_value(v));
    return forge::join(parts, ",");
  }
  return value.dump();
}

/// Appends `--key value` for every config entry the chosen subcommand
/// understands and the command line does not already set.
std::vector<std::string> apply_config(const std::vector<std::string>& args, CLI::App& app) {
  std::string path;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") path = args[i + 1];
  }
  for (const auto& a : args) {
    if (a.rfind("--config=", 0) == 0) path = a.substr(9);
  }
  if (path.empty() || args.size() < 2) return args;
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args[1]);
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  json config;
  try {
    config = json::parse(forge::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw forge::ValidationError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!config.is_object()) throw forge::ValidationError("config file must hold a JSON object");

  auto out = args;
  for (const auto& [key, value] : config.items()) {
    const std::string flag = "--" + key;
    if (key == "input") continue;
    const auto* opt = sub->get_option_no_throw(flag);
    if (opt == nullptr) continue;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (given) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
      continue;
    }
    out.push_back(flag);
    out.push_back(config_value(value));
  }
  if (config.contains("input") && config["input"].is_string()) {
    const auto* positional = sub->get_option_no_throw("input");
    const bool has_input = positional != nullptr && std::count_if(args.begin() + 2, args.end(), [](const std::string& a) {
                                                        return !a.empty() && a[0] != '-';
                                                      }) > 0;
    if (positional != nullptr && !has_input) out.push_back(config["input"].get<std::string>());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: overlapping subspace clustering and proto-persona synthesis for VAS data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "forge 1.0.0");
  Options o;
  std::string config_path;

  auto input = [&](CLI::App* sub, const std::string& what) {
    sub->add_option("input", o.input, what)->required();
    sub->add_option("--config", config_path, "JSON file whose keys mirror the flags; flags win");
  };
  auto output = [&](CLI::App* sub) { sub->add_option("-o,--output", o.output, "Output file (default stdout)"); };
  auto threads = [&](CLI::App* sub) {
    sub->add_option("--threads", o.threads, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  };
  auto bins = [&](CLI::App* sub) {
    sub->add_option("--bins", o.bins, "Default bins per dimension: 2, 3 or auto");
    sub->add_option("--bins-for", o.bins_for, "Per-dimension override, dim=2|3|auto")->delimiter(',');
  };
  auto doc_flags = [&](CLI::App* sub) {
    sub->add_option("--w", o.w, "Max per-dimension distance, or 'auto' to estimate it");
    sub->add_option("--alpha", o.alpha, "Density threshold as a fraction of the subjects");
    sub->add_option("--beta", o.betas, "Comma-separated beta values, one run each")->delimiter(',');
    sub->add_option("--seed", o.seed, "PRNG seed");
    threads(sub);
  };

  auto* ingest = app.add_subcommand("ingest", "Validate a VAS CSV and print it as JSON");
  input(ingest, "VAS score CSV");
  output(ingest);

  auto* estimate = app.add_subcommand("estimate-w", "Nearest-neighbour estimate of w");
  input(estimate, "VAS score CSV");
  output(estimate);

  auto* cluster = app.add_subcommand("cluster", "Full-coverage DOC clustering, one run per beta");
  input(cluster, "VAS score CSV");
  doc_flags(cluster);
  cluster->add_option("--target", o.target, "Only search around this subject");
  cluster->add_option("--out-dir", o.out_dir, "Directory for clusters_<beta>.json/.csv and clusters.json");
  cluster->add_flag("--stdout", o.to_stdout, "Print the combined cluster JSON instead of writing files");
  output(cluster);

  auto* similarity = app.add_subcommand("similarity", "Pairwise cluster similarity matrix (CSV)");
  input(similarity, "Cluster JSON");
  similarity->add_option("--drop-above", o.drop_above, "Drop clusters more similar than this to a better one");
  threads(similarity);
  output(similarity);

  auto* dendrogram = app.add_subcommand("dendrogram", "Agglomerative dendrogram on 1 - similarity");
  input(dendrogram, "Cluster JSON");
  dendrogram->add_option("--linkage", o.linkage, "average, single or complete");
  threads(dendrogram);
  output(dendrogram);

  auto* merge = app.add_subcommand("merge", "Cut the dendrogram and merge each set into a proto-persona");
  input(merge, "Cluster JSON");
  merge->add_option("--cut", o.cut, "Dissimilarity height of the cut");
  merge->add_option("--linkage", o.linkage, "average, single or complete");
  merge->add_option("--conflict", o.conflict, "Std-dev above which a dimension is flagged");
  merge->add_option("--veto", o.veto, "Dimensions to drop from every proto-persona")->delimiter(',');
  merge->add_option("--labels", o.labels, "VAS CSV supplying dimension labels");
  threads(merge);
  output(merge);

  auto* describe = app.add_subcommand("describe", "Markdown report for proto-personas or clusters");
  input(describe, "Merge JSON or cluster JSON");
  describe->add_option("--labels", o.labels, "VAS CSV supplying dimension labels");
  output(describe);

  auto* cooccur = app.add_subcommand("cooccur", "Subject co-occurrence counts across clusters (CSV)");
  input(cooccur, "Cluster JSON");
  cooccur->add_option("--exclude", o.exclude, "Cluster ids to leave out")->delimiter(',');
  cooccur->add_option("--labels", o.labels, "VAS CSV fixing the subject order");
  output(cooccur);

  auto* ca = app.add_subcommand("ca", "Correspondence analysis of a table CSV or of cluster co-occurrence");
  input(ca, "Contingency CSV, or cluster JSON");
  ca->add_option("--exclude", o.exclude, "Cluster ids to leave out (cluster JSON input)")->delimiter(',');
  ca->add_option("--labels", o.labels, "VAS CSV fixing the subject order");
  output(ca);

  auto* bin = app.add_subcommand("bin", "Bin VAS scores into categories (CSV)");
  input(bin, "VAS score CSV");
  bins(bin);
  output(bin);

  auto* mca = app.add_subcommand("mca", "Multiple correspondence analysis of the binned scores");
  input(mca, "VAS score CSV");
  bins(mca);
  output(mca);

  auto* corr = app.add_subcommand("corr", "Correlation ratio of each variable with the MCA axes (CSV)");
  input(corr, "VAS score CSV");
  bins(corr);
  corr->add_option("--axes", o.axes, "Number of axes");
  output(corr);

  auto* run = app.add_subcommand("run", "Whole pipeline, every artifact written to --out-dir");
  input(run, "VAS score CSV");
  doc_flags(run);
  bins(run);
  run->add_option("--out-dir", o.out_dir, "Artifact directory");
  run->add_option("--linkage", o.linkage, "average, single or complete");
  run->add_option("--cut", o.cut, "Dissimilarity height of the cut");
  run->add_option("--conflict", o.conflict, "Std-dev above which a dimension is flagged");
  run->add_option("--exclude", o.exclude, "Cluster ids left out of the co-occurrence table")->delimiter(',');
  run->add_option("--axes", o.axes, "MCA axes for the correlation table");
  run->add_flag("--no-mca", o.no_mca, "Skip binning, MCA and correlation");

  auto* serve = app.add_subcommand("serve", "HTTP/JSON service for the workbench");
  serve->add_option("--host", o.host, "Interface to bind");
  serve->add_option("--port", o.port, "Port");
  serve->add_option("--data-dir", o.data_dir, "Directory holding data sets and sessions");
  serve->add_option("--workers", o.workers, "Background run workers");
  serve->add_option("--config", config_path, "JSON file whose keys mirror the flags; flags win");
  threads(serve);

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = apply_config(args, app);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", forge::error_report(e)}}.dump() << "\n";
    return kValidation;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  const std::map<CLI::App*, int (*)(const Options&)> handlers{
      {ingest, cmd_ingest},         {estimate, cmd_estimate_w}, {cluster, cmd_cluster}, {similarity, cmd_similarity},
      {dendrogram, cmd_dendrogram}, {merge, cmd_merge},         {describe, cmd_describe}, {cooccur, cmd_cooccur},
      {ca, cmd_ca},                 {bin, cmd_bin},             {mca, cmd_mca},         {corr, cmd_corr},
      {run, cmd_run},               {serve, cmd_serve}};
  CLI::App* chosen = app.get_subcommands().front();

  const char* ci = std::getenv("CI");
  if ((chosen == cluster || chosen == run) && ci != nullptr && *ci != '\0' && chosen->count("--seed") == 0) {
    std::cerr << json{{"error", {{"type", "validation"}, {"message", "--seed is mandatory when CI is set"}}}}.dump()
              << "\n";
    return kValidation;
  }

  try {
    return handlers.at(chosen)(o);
  } catch (const forge::StageError& e) {
    std::cerr << json{{"error", e.report()}}.dump() << "\n";
    return exit_code_for(e.report());
  } catch (const std::exception& e) {
    auto report = forge::error_report(e);
    report["stage"] = chosen->get_name();
    std::cerr << json{{"error", report}}.dump() << "\n";
    return exit_code_for(report);
  }
}
