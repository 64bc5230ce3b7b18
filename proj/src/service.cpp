#include "forge/service.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include <json.hpp>

#include "forge/cluster_io.hpp"
#include "forge/correspondence.hpp"
#include "forge/dataset.hpp"
#include "forge/doc_engine.hpp"
#include "forge/error.hpp"
#include "forge/ids.hpp"
#include "forge/persona.hpp"
#include "forge/pipeline.hpp"

// After Eigen: <resolv.h> defines _res, which Eigen uses as an identifier.
#include <httplib.h>

namespace forge {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, std::string type, const std::string& message, std::string field = "")
      : std::runtime_error(message), status_(status), type_(std::move(type)), field_(std::move(field)) {}
  int status() const { return status_; }
  const std::string& type() const { return type_; }
  const std::string& field() const { return field_; }

 private:
  int status_;
  std::string type_;
  std::string field_;
};

[[noreturn]] void not_found(const std::string& what) { throw HttpError(404, "not_found", what + " not found"); }
[[noreturn]] void conflict(const std::string& what) { throw HttpError(409, "conflict", what); }

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomically(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  write_text_file(tmp, content);
  fs::rename(tmp, path);
}

json params_json(const DocParams& p) { return {{"w", p.w}, {"alpha", p.alpha}, {"beta", p.beta}, {"seed", p.seed}}; }

DocRun run_from_json(const json& doc) {
  DocRun run;
  const auto& p = doc.at("params");
  run.params.w = p.at("w").get<double>();
  run.params.alpha = p.at("alpha").get<double>();
  run.params.beta = p.at("beta").get<double>();
  run.params.seed = p.at("seed").get<std::uint64_t>();
  run.r = doc.at("r").get<std::size_t>();
  run.m = doc.at("m").get<std::uint64_t>();
  for (const auto& c : doc.at("clusters")) run.clusters.push_back(cluster_from_json(c));
  run.warnings = doc.value("warnings", std::vector<std::string>{});
  return run;
}

json similarity_json(const SimilarityMatrix& sims) {
  json rows = json::array();
  for (std::size_t i = 0; i < sims.size(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < sims.size(); ++j) row.push_back(sims.at(i, j));
    rows.push_back(std::move(row));
  }
  return {{"ids", sims.ids}, {"values", std::move(rows)}};
}

SimilarityMatrix similarity_from_json(const json& doc) {
  SimilarityMatrix sims;
  sims.ids = doc.at("ids").get<std::vector<std::string>>();
  for (const auto& row : doc.at("values")) {
    for (const auto& v : row) sims.values.push_back(v.get<double>());
  }
  return sims;
}

json eta_json(const EtaSquared& eta) {
  json rows = json::array();
  for (std::size_t v = 0; v < eta.variables.size(); ++v) {
    json row = json::array();
    for (std::size_t a = 0; a < eta.axes; ++a) row.push_back(eta.at(v, a));
    rows.push_back({{"dimension", eta.variables[v]}, {"eta2", std::move(row)}});
  }
  return {{"axes", eta.axes}, {"variables", std::move(rows)}};
}

struct RunRecord {
  std::string id;
  DocParams params;
  std::string status = "queued";
  std::size_t r = 0;
  std::uint64_t m = 0;
  std::vector<std::string> warnings;
  std::optional<DocRun> result;
  json error;

  bool pending() const { return status == "queued" || status == "running"; }

  json summary() const {
    json doc{{"run_id", id}, {"status", status}, {"params", params_json(params)},
             {"r", r},       {"m", m},           {"warnings", warnings}};
    if (status == "done") doc["num_clusters"] = result->clusters.size();
    if (status == "failed") doc["error"] = error;
    return doc;
  }
};

struct Cut {
  double height = 0.0;
  std::vector<std::vector<std::string>> sets;
};

/// Immutable once published; writers copy, modify and publish a new one.
struct SessionState {
  std::string id;
  std::string dataset_id;
  std::shared_ptr<const VasDataSet> data;
  std::size_t next_run = 1;
  std::vector<RunRecord> runs;
  std::optional<Linkage> linkage;
  std::optional<SimilarityMatrix> similarity;
  std::optional<Dendrogram> dendrogram;
  std::optional<Cut> cut;
  std::vector<ProtoPersona> protos;
  json audit = json::array();

  RunRecord* find_run(const std::string& run_id) {
    for (auto& r : runs) {
      if (r.id == run_id) return &r;
    }
    return nullptr;
  }

  const RunRecord* find_run(const std::string& run_id) const {
    return const_cast<SessionState*>(this)->find_run(run_id);
  }

  bool busy() const {
    return std::any_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.pending(); });
  }

  void require_idle() const {
    if (busy()) conflict("a cluster run is still in progress");
  }

  /// The latest run for each beta label, in creation order.
  std::vector<const RunRecord*> active_runs() const {
    std::map<std::string, std::size_t> latest;
    for (std::size_t i = 0; i < runs.size(); ++i) latest[cluster_label(0, runs[i].params.beta)] = i;
    std::vector<std::size_t> picked;
    for (const auto& [tag, i] : latest) picked.push_back(i);
    std::sort(picked.begin(), picked.end());
    std::vector<const RunRecord*> out;
    for (auto i : picked) out.push_back(&runs[i]);
    return out;
  }

  ClusterFile clusters() const {
    require_idle();
    std::vector<DocRun> done;
    for (const auto* r : active_runs()) {
      if (r->status == "done") done.push_back(*r->result);
    }
    if (done.empty()) conflict("no completed cluster run");
    return combine_runs(done);
  }

  void invalidate() {
    linkage.reset();
    similarity.reset();
    dendrogram.reset();
    cut.reset();
    protos.clear();
  }

  void log(const std::string& action, json details) {
    audit.push_back({{"seq", audit.size() + 1}, {"at", utc_now()}, {"action", action}, {"details", std::move(details)}});
  }

  json summary() const {
    json run_list = json::array();
    for (const auto& r : runs) run_list.push_back(r.summary());
    json active = json::array();
    for (const auto* r : active_runs()) active.push_back(r->id);
    json proto_ids = json::array();
    for (const auto& p : protos) proto_ids.push_back(p.id);
    return {{"id", id},
            {"dataset", dataset_id},
            {"busy", busy()},
            {"runs", run_list},
            {"active_runs", active},
            {"linkage", linkage ? json(to_string(*linkage)) : json(nullptr)},
            {"has_dendrogram", dendrogram.has_value()},
            {"cut", cut ? json{{"height", cut->height}, {"sets", cut->sets}} : json(nullptr)},
            {"protos", proto_ids}};
  }

  json to_json() const {
    json run_list = json::array();
    for (const auto& r : runs) {
      auto doc = r.summary();
      if (r.result) doc["result"] = forge::to_json(*r.result);
      run_list.push_back(std::move(doc));
    }
    json doc{{"id", id}, {"dataset", dataset_id}, {"next_run", next_run}, {"runs", std::move(run_list)}};
    doc["linkage"] = linkage ? json(to_string(*linkage)) : json(nullptr);
    doc["similarity"] = similarity ? similarity_json(*similarity) : json(nullptr);
    doc["dendrogram"] = dendrogram ? forge::to_json(*dendrogram) : json(nullptr);
    doc["cut"] = cut ? json{{"height", cut->height}, {"sets", cut->sets}} : json(nullptr);
    json plist = json::array();
    for (const auto& p : protos) plist.push_back(forge::to_json(p));
    doc["protos"] = std::move(plist);
    doc["audit"] = audit;
    return doc;
  }

  void load(const json& doc) {
    id = doc.at("id").get<std::string>();
    dataset_id = doc.at("dataset").get<std::string>();
    next_run = doc.at("next_run").get<std::size_t>();
    for (const auto& r : doc.at("runs")) {
      RunRecord rec;
      rec.id = r.at("run_id").get<std::string>();
      const auto& p = r.at("params");
      rec.params.w = p.at("w").get<double>();
      rec.params.alpha = p.at("alpha").get<double>();
      rec.params.beta = p.at("beta").get<double>();
      rec.params.seed = p.at("seed").get<std::uint64_t>();
      rec.status = r.at("status").get<std::string>();
      rec.r = r.at("r").get<std::size_t>();
      rec.m = r.at("m").get<std::uint64_t>();
      rec.warnings = r.value("warnings", std::vector<std::string>{});
      if (r.contains("result")) rec.result = run_from_json(r.at("result"));
      if (r.contains("error")) rec.error = r.at("error");
      runs.push_back(std::move(rec));
    }
    if (!doc.at("linkage").is_null()) linkage = parse_linkage(doc.at("linkage").get<std::string>());
    if (!doc.at("similarity").is_null()) similarity = similarity_from_json(doc.at("similarity"));
    if (!doc.at("dendrogram").is_null()) dendrogram = dendrogram_from_json(doc.at("dendrogram"));
    if (!doc.at("cut").is_null()) {
      cut = Cut{doc["cut"].at("height").get<double>(),
                doc["cut"].at("sets").get<std::vector<std::vector<std::string>>>()};
    }
    protos = personas_from_json(doc.at("protos"));
    audit = doc.at("audit");
  }
};

using Snapshot = std::shared_ptr<const SessionState>;

/// Single writer per session; readers take the published snapshot without
/// locking and never see a half-applied change.
class Session {
 public:
  explicit Session(std::shared_ptr<SessionState> initial) : current_(std::move(initial)) {}

  Snapshot snapshot() const { return std::atomic_load(&current_); }

  /// Applies `change` to a copy of the state, persists it with `store`, then
  /// publishes it. Nothing is published when either step throws.
  template <typename Change, typename Store>
  json update(Change&& change, Store&& store) {
    std::lock_guard lock(writer_);
    auto next = std::make_shared<SessionState>(*snapshot());
    json out = change(*next);
    store(*next);
    std::atomic_store(&current_, Snapshot(std::move(next)));
    return out;
  }

 private:
  std::mutex writer_;
  Snapshot current_;
};

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    auto doc = json::parse(req.body);
    if (!doc.is_object()) throw HttpError(400, "validation", "request body must be a JSON object");
    return doc;
  } catch (const json::parse_error& e) {
    throw HttpError(400, "validation", std::string("malformed JSON body: ") + e.what());
  }
}

template <typename T>
T body_value(const json& body, const std::string& key, T fallback) {
  if (!body.contains(key) || body[key].is_null()) return fallback;
  try {
    return body[key].get<T>();
  } catch (const json::exception&) {
    throw HttpError(400, "validation", "field '" + key + "' has the wrong type", key);
  }
}

std::string query(const httplib::Request& req, const std::string& key, const std::string& fallback = "") {
  return req.has_param(key) ? req.get_param_value(key) : fallback;
}

double query_number(const httplib::Request& req, const std::string& key, double fallback) {
  if (!req.has_param(key)) return fallback;
  const auto text = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw HttpError(400, "validation", "query parameter '" + key + "' must be a number", key);
  }
}

std::set<std::string> query_list(const httplib::Request& req, const std::string& key) {
  std::set<std::string> out;
  if (!req.has_param(key)) return out;
  for (const auto& part : split(req.get_param_value(key), ',')) {
    if (!part.empty()) out.insert(part);
  }
  return out;
}

void send_json(httplib::Response& res, int status, const json& doc) {
  res.status = status;
  res.set_content(doc.dump(2) + "\n", "application/json");
}

}  // namespace

class Service::Impl {
 public:
  explicit Impl(ServiceOptions options) : options_(std::move(options)) {
    fs::create_directories(options_.data_dir / "datasets");
    fs::create_directories(options_.data_dir / "sessions");
    load_sessions();
    routes();
    for (unsigned i = 0; i < std::max(1U, options_.workers); ++i) workers_.emplace_back([this] { work(); });
  }

  ~Impl() {
    server_.stop();
    {
      std::lock_guard lock(queue_mutex_);
      stopping_ = true;
    }
    queue_cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  httplib::Server server_;

  void wait_idle() {
    std::unique_lock lock(queue_mutex_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && active_ == 0; });
  }

 private:
  ServiceOptions options_;
  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_session_ = 1;
  std::map<std::string, std::shared_ptr<const VasDataSet>> datasets_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::pair<std::string, std::string>> queue_;
  std::size_t active_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;

  // --- storage -----------------------------------------------------------

  fs::path dataset_path(const std::string& id) const { return options_.data_dir / "datasets" / (id + ".csv"); }
  fs::path session_path(const std::string& id) const { return options_.data_dir / "sessions" / (id + ".json"); }

  void persist(const SessionState& s) { write_atomically(session_path(s.id), s.to_json().dump(2) + "\n"); }

  template <typename Change>
  json update(Session& s, Change&& change) {
    return s.update(std::forward<Change>(change), [this](const SessionState& next) { persist(next); });
  }

  std::shared_ptr<const VasDataSet> dataset(const std::string& id) {
    std::lock_guard lock(sessions_mutex_);
    if (auto it = datasets_.find(id); it != datasets_.end()) return it->second;
    if (id.find('/') != std::string::npos || !fs::exists(dataset_path(id))) not_found("dataset '" + id + "'");
    auto data = std::make_shared<const VasDataSet>(ingest_csv(read_text_file(dataset_path(id))));
    datasets_[id] = data;
    return data;
  }

  std::shared_ptr<Session> session(const std::string& id) {
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) not_found("session '" + id + "'");
    return it->second;
  }

  Snapshot snapshot(const httplib::Request& req) { return session(req.matches[1].str())->snapshot(); }

  void load_sessions() {
    std::vector<std::pair<std::string, std::string>> pending;
    for (const auto& entry : fs::directory_iterator(options_.data_dir / "sessions")) {
      if (entry.path().extension() != ".json") continue;
      auto state = std::make_shared<SessionState>();
      state->load(json::parse(read_text_file(entry.path())));
      state->data = dataset(state->dataset_id);
      for (auto& r : state->runs) {
        if (r.pending()) {
          r.status = "queued";
          pending.emplace_back(state->id, r.id);
        }
      }
      if (state->id.size() > 1 && state->id[0] == 's') {
        next_session_ = std::max(next_session_, std::stoul(state->id.substr(1)) + 1);
      }
      sessions_[state->id] = std::make_shared<Session>(state);
    }
    std::sort(pending.begin(), pending.end(), [](const auto& a, const auto& b) {
      return natural_less(a.first, b.first) || (a.first == b.first && natural_less(a.second, b.second));
    });
    for (auto& p : pending) queue_.push_back(std::move(p));
  }

  // --- run workers -------------------------------------------------------

  void enqueue(const std::string& session_id, const std::string& run_id) {
    {
      std::lock_guard lock(queue_mutex_);
      queue_.emplace_back(session_id, run_id);
    }
    queue_cv_.notify_one();
  }

  void work() {
    for (;;) {
      std::pair<std::string, std::string> job;
      {
        std::unique_lock lock(queue_mutex_);
        queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        job = queue_.front();
        queue_.pop_front();
        ++active_;
      }
      execute(job.first, job.second);
      {
        std::lock_guard lock(queue_mutex_);
        --active_;
      }
      idle_cv_.notify_all();
    }
  }

  void execute(const std::string& session_id, const std::string& run_id) {
    std::shared_ptr<Session> s;
    try {
      s = session(session_id);
    } catch (const HttpError&) {
      return;
    }
    DocParams params;
    std::shared_ptr<const VasDataSet> data;
    const bool start = update(*s, [&](SessionState& st) {
                         auto* run = st.find_run(run_id);
                         if (run == nullptr || !run->pending()) return false;
                         run->status = "running";
                         params = run->params;
                         data = st.data;
                         return true;
                       }).get<bool>();
    if (!start) return;
    if (options_.on_run_start) options_.on_run_start(run_id);
    params.threads = std::max(1U, options_.run_threads);
    params.max_trials = options_.max_trials;
    std::optional<DocRun> result;
    json error;
    try {
      result = doc_full_coverage(*data, params);
      result->params.threads = 1;
      result->params.max_trials = kDefaultTrialCap;
    } catch (const std::exception& e) {
      error = error_report(e);
    }
    update(*s, [&](SessionState& st) {
      auto* run = st.find_run(run_id);
      if (run == nullptr) return json();
      if (result) {
        run->status = "done";
        run->warnings = result->warnings;
        run->result = std::move(result);
        st.log("run_finished", {{"run_id", run_id}, {"num_clusters", run->result->clusters.size()}});
      } else {
        run->status = "failed";
        run->error = error;
        st.log("run_failed", {{"run_id", run_id}, {"error", error}});
      }
      return json();
    });
  }

  // --- routes ------------------------------------------------------------

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  Handler guarded(Handler body) {
    return [body = std::move(body)](const httplib::Request& req, httplib::Response& res) {
      try {
        body(req, res);
      } catch (const HttpError& e) {
        json error{{"type", e.type()}, {"message", e.what()}};
        if (!e.field().empty()) error["field"] = e.field();
        send_json(res, e.status(), {{"error", error}});
      } catch (const ValidationError& e) {
        send_json(res, 400, {{"error", error_report(e)}});
      } catch (const ParameterError& e) {
        send_json(res, 422, {{"error", error_report(e)}});
      } catch (const NoClusterFound& e) {
        send_json(res, 422, {{"error", error_report(e)}});
      } catch (const NoSharedDims& e) {
        send_json(res, 422, {{"error", error_report(e)}});
      } catch (const json::exception& e) {
        send_json(res, 400, {{"error", {{"type", "validation"}, {"message", e.what()}}}});
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", {{"type", "internal"}, {"message", e.what()}}}});
      }
    };
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", options_.cors_origin},
                                 {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                                 {"Access-Control-Allow-Headers", "Content-Type"}});
    server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Get("/health", guarded([](const auto&, auto& res) { send_json(res, 200, {{"status", "ok"}}); }));
    server_.Get("/api/spec", guarded([](const auto&, auto& res) {
                  res.set_content(openapi_document(), "application/json");
                }));

    server_.Post("/datasets", guarded([this](const auto& req, auto& res) { post_dataset(req, res); }));
    server_.Get(R"(/datasets/([^/]+))", guarded([this](const auto& req, auto& res) {
                  const auto id = req.matches[1].str();
                  auto doc = to_json(*dataset(id));
                  doc["id"] = id;
                  send_json(res, 200, doc);
                }));

    server_.Post("/sessions", guarded([this](const auto& req, auto& res) { post_session(req, res); }));
    server_.Get("/sessions", guarded([this](const auto&, auto& res) {
                  std::vector<std::string> ids;
                  {
                    std::lock_guard lock(sessions_mutex_);
                    for (const auto& [id, s] : sessions_) ids.push_back(id);
                  }
                  natural_sort(ids);
                  send_json(res, 200, {{"sessions", ids}});
                }));

    const std::string base = R"(/sessions/([^/]+))";
    server_.Get(base, guarded([this](const auto& req, auto& res) { send_json(res, 200, snapshot(req)->summary()); }));
    server_.Post(base + "/runs", guarded([this](const auto& req, auto& res) { post_run(req, res); }));
    server_.Get(base + "/runs", guarded([this](const auto& req, auto& res) {
                  const auto st = snapshot(req);
                  json list = json::array();
                  for (const auto& r : st->runs) list.push_back(r.summary());
                  send_json(res, 200, {{"runs", list}});
                }));
    server_.Get(base + "/runs/([^/]+)", guarded([this](const auto& req, auto& res) {
                  const auto st = snapshot(req);
                  const auto* run = st->find_run(req.matches[2].str());
                  if (run == nullptr) not_found("run '" + req.matches[2].str() + "'");
                  auto doc = run->summary();
                  if (run->result) doc["result"] = to_json(*run->result);
                  send_json(res, 200, doc);
                }));
    server_.Get(base + "/derive", guarded([this](const auto& req, auto& res) { get_derive(req, res); }));
    server_.Get(base + "/clusters", guarded([this](const auto& req, auto& res) {
                  send_json(res, 200, to_json(snapshot(req)->clusters()));
                }));
    server_.Post(base + "/similarity", guarded([this](const auto& req, auto& res) { post_similarity(req, res); }));
    server_.Get(base + "/similarity", guarded([this](const auto& req, auto& res) {
                  const auto st = snapshot(req);
                  st->require_idle();
                  if (!st->similarity) conflict("similarity has not been computed");
                  if (query(req, "format") == "csv") {
                    res.set_content(export_csv(*st->similarity), "text/csv");
                  } else {
                    auto doc = similarity_json(*st->similarity);
                    doc["linkage"] = to_string(*st->linkage);
                    send_json(res, 200, doc);
                  }
                }));
    server_.Get(base + "/dendrogram", guarded([this](const auto& req, auto& res) {
                  const auto st = snapshot(req);
                  st->require_idle();
                  if (!st->dendrogram) conflict("dendrogram has not been computed");
                  auto doc = to_json(*st->dendrogram);
                  doc["linkage"] = to_string(*st->linkage);
                  send_json(res, 200, doc);
                }));
    server_.Post(base + "/cut", guarded([this](const auto& req, auto& res) { post_cut(req, res); }));
    server_.Get(base + "/cut", guarded([this](const auto& req, auto& res) {
                  const auto st = snapshot(req);
                  if (!st->cut) conflict("no cut has been made");
                  send_json(res, 200, {{"height", st->cut->height}, {"sets", st->cut->sets}});
                }));
    server_.Post(base + "/protos", guarded([this](const auto& req, auto& res) { post_proto(req, res); }));
    server_.Get(base + "/protos", guarded([this](const auto& req, auto& res) {
                  const auto st = snapshot(req);
                  json list = json::array();
                  for (const auto& p : st->protos) list.push_back(to_json(p));
                  send_json(res, 200, {{"protos", list}});
                }));
    server_.Delete(base + "/protos/([^/]+)", guarded([this](const auto& req, auto& res) {
                     const auto id = req.matches[2].str();
                     update(*session(req.matches[1].str()), [&](SessionState& st) {
                       auto it = std::find_if(st.protos.begin(), st.protos.end(),
                                              [&](const ProtoPersona& p) { return p.id == id; });
                       if (it == st.protos.end()) not_found("proto-persona '" + id + "'");
                       st.protos.erase(it);
                       st.log("proto_deleted", {{"id", id}});
                       return json();
                     });
                     res.status = 204;
                   }));
    server_.Get(base + "/radar", guarded([this](const auto& req, auto& res) { get_radar(req, res); }));
    server_.Get(base + "/cooccurrence", guarded([this](const auto& req, auto& res) {
                  const auto table = session_cooccurrence(*snapshot(req), query_list(req, "exclude"));
                  if (query(req, "format") == "csv") {
                    res.set_content(export_csv(table), "text/csv");
                  } else {
                    send_json(res, 200, to_json(table));
                  }
                }));
    server_.Get(base + "/ca", guarded([this](const auto& req, auto& res) {
                  const auto table = session_cooccurrence(*snapshot(req), query_list(req, "exclude"));
                  auto map = correspondence_analysis(table);
                  map.warnings.insert(map.warnings.begin(), table.warnings.begin(), table.warnings.end());
                  send_json(res, 200, to_json(map));
                }));
    server_.Get(base + "/mca", guarded([this](const auto& req, auto& res) { get_mca(req, res); }));
    server_.Get(base + "/report", guarded([this](const auto& req, auto& res) {
                  const auto st = snapshot(req);
                  if (st->protos.empty()) conflict("no proto-personas have been created");
                  res.set_content(persona_report_markdown(st->protos, st->data->dimensions()), "text/markdown");
                }));
    server_.Get(base + "/audit", guarded([this](const auto& req, auto& res) {
                  const auto st = snapshot(req);
                  send_json(res, 200, {{"session", st->id}, {"entries", st->audit}});
                }));
  }

  void post_dataset(const httplib::Request& req, httplib::Response& res) {
    auto data = std::make_shared<const VasDataSet>(ingest_csv(req.body));
    const auto id = "ds-" + fnv1a_hex(req.body);
    {
      std::lock_guard lock(sessions_mutex_);
      if (!fs::exists(dataset_path(id))) write_atomically(dataset_path(id), req.body);
      datasets_[id] = data;
    }
    send_json(res, 201,
              {{"id", id}, {"num_subjects", data->num_subjects()}, {"num_dimensions", data->num_dimensions()}});
  }

  void post_session(const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    const auto dataset_id = body_value<std::string>(body, "dataset", "");
    if (dataset_id.empty()) throw HttpError(400, "validation", "field 'dataset' is required", "dataset");
    auto state = std::make_shared<SessionState>();
    state->dataset_id = dataset_id;
    state->data = dataset(dataset_id);
    std::shared_ptr<Session> s;
    {
      std::lock_guard lock(sessions_mutex_);
      state->id = "s" + std::to_string(next_session_++);
      state->log("session_created", {{"dataset", dataset_id}});
      persist(*state);
      s = std::make_shared<Session>(state);
      sessions_[state->id] = s;
    }
    send_json(res, 201, s->snapshot()->summary());
  }

  DocParams params_from(const json& body, const VasDataSet& data) {
    DocParams p;
    if (body.contains("w") && body["w"].is_string() && body["w"] == "auto") {
      p.w = estimate_w(data).suggested;
    } else {
      p.w = body_value<double>(body, "w", p.w);
    }
    p.alpha = body_value<double>(body, "alpha", p.alpha);
    p.beta = body_value<double>(body, "beta", p.beta);
    p.seed = body_value<std::uint64_t>(body, "seed", p.seed);
    return p;
  }

  void post_run(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1].str());
    const auto body = parse_body(req);
    const auto summary = update(*s, [&](SessionState& st) {
      RunRecord run;
      run.params = params_from(body, *st.data);
      run.params.max_trials = options_.max_trials;
      run.warnings = validate_params(run.params, st.data->num_subjects(), st.data->num_dimensions());
      run.r = discrimination_set_size(st.data->num_dimensions(), run.params.beta);
      run.m = inner_trial_count(run.params.alpha, run.r, options_.max_trials);
      run.params.max_trials = kDefaultTrialCap;
      st.require_idle();
      run.id = "r" + std::to_string(st.next_run++);
      st.invalidate();
      st.log("run_submitted", {{"run_id", run.id}, {"params", params_json(run.params)}});
      auto doc = run.summary();
      st.runs.push_back(std::move(run));
      return doc;
    });
    enqueue(s->snapshot()->id, summary.at("run_id"));
    send_json(res, 202, summary);
  }

  void get_derive(const httplib::Request& req, httplib::Response& res) {
    const auto st = snapshot(req);
    DocParams p;
    p.w = query_number(req, "w", p.w);
    p.alpha = query_number(req, "alpha", p.alpha);
    p.beta = query_number(req, "beta", p.beta);
    const auto warnings = validate_params(p, st->data->num_subjects(), st->data->num_dimensions());
    const auto r = discrimination_set_size(st->data->num_dimensions(), p.beta);
    send_json(res, 200,
              {{"r", r},
               {"m", inner_trial_count(p.alpha, r, options_.max_trials)},
               {"outer", outer_iteration_count(p.alpha)},
               {"min_cluster_size", min_cluster_size(p.alpha, st->data->num_subjects())},
               {"warnings", warnings}});
  }

  void post_similarity(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1].str());
    const auto body = parse_body(req);
    const auto linkage = parse_linkage(body_value<std::string>(body, "linkage", "average"));
    const auto doc = update(*s, [&](SessionState& st) {
      const auto clusters = st.clusters().clusters;
      if (clusters.size() < 2) conflict("at least two clusters are needed for a dendrogram");
      auto sims = similarity_matrix(clusters, std::max(1U, options_.run_threads));
      st.dendrogram = build_dendrogram(sims, linkage);
      st.linkage = linkage;
      st.similarity = std::move(sims);
      st.cut.reset();
      st.log("similarity_computed", {{"linkage", to_string(linkage)}, {"num_clusters", clusters.size()}});
      auto out = similarity_json(*st.similarity);
      out["linkage"] = to_string(linkage);
      return out;
    });
    send_json(res, 200, doc);
  }

  void post_cut(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1].str());
    const auto body = parse_body(req);
    if (!body.contains("height")) throw HttpError(400, "validation", "field 'height' is required", "height");
    const double height = body_value<double>(body, "height", 0.0);
    if (!(height >= 0.0 && height <= 1.0)) throw HttpError(400, "validation", "height must lie in [0,1]", "height");
    const auto doc = update(*s, [&](SessionState& st) {
      st.require_idle();
      if (!st.dendrogram) conflict("dendrogram has not been computed");
      st.cut = Cut{height, cut_dendrogram(*st.dendrogram, height)};
      st.log("cut", {{"height", height}, {"num_sets", st.cut->sets.size()}});
      return json{{"height", height}, {"linkage", to_string(*st.linkage)}, {"sets", st.cut->sets}};
    });
    send_json(res, 200, doc);
  }

  void post_proto(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1].str());
    const auto body = parse_body(req);
    const auto set = body_value<std::vector<std::string>>(body, "set", {});
    if (set.empty()) throw HttpError(400, "validation", "field 'set' must list at least one cluster id", "set");
    MergeOptions options;
    options.vetoed_dims = body_value<std::vector<std::string>>(body, "vetoed_dims", {});
    options.conflict_threshold = body_value<double>(body, "conflict_threshold", options.conflict_threshold);
    const auto name = body_value<std::string>(body, "name", "");
    const auto doc = update(*s, [&](SessionState& st) {
      const auto clusters = st.clusters().clusters;
      auto persona = merge_clusters(select_clusters(clusters, set), options);
      persona.name = name.empty() ? persona.id : name;
      persona.description = describe(persona, st.data->dimensions());
      auto it = std::find_if(st.protos.begin(), st.protos.end(),
                             [&](const ProtoPersona& p) { return p.id == persona.id; });
      if (it != st.protos.end()) {
        *it = persona;
      } else {
        st.protos.push_back(persona);
      }
      st.log("proto_saved", {{"id", persona.id}, {"set", set}, {"vetoed_dims", options.vetoed_dims}});
      return to_json(persona);
    });
    send_json(res, 201, doc);
  }

  void get_radar(const httplib::Request& req, httplib::Response& res) {
    const auto a = query(req, "a");
    const auto b = query(req, "b");
    if (a.empty() || b.empty()) throw HttpError(400, "validation", "query parameters 'a' and 'b' are required");
    const auto st = snapshot(req);
    const auto clusters = st->clusters().clusters;
    auto lookup = [&](const std::string& id) {
      for (const auto& c : clusters) {
        if (c.id == id) return profile_of(c);
      }
      for (const auto& p : st->protos) {
        if (p.id == id) return profile_of(p);
      }
      not_found("cluster or proto-persona '" + id + "'");
    };
    send_json(res, 200, radar_data(lookup(a), lookup(b), st->data->dimensions()));
  }

  CooccurrenceTable session_cooccurrence(const SessionState& st, const std::set<std::string>& exclude) {
    const auto clusters = st.clusters().clusters;
    std::vector<std::string> subjects;
    for (const auto& sub : st.data->subjects()) subjects.push_back(sub.id);
    return cooccurrence(clusters, exclude, subjects);
  }

  void get_mca(const httplib::Request& req, httplib::Response& res) {
    const auto st = snapshot(req);
    const auto bins = parse_bin_policy(query(req, "bins", "auto"));
    const double axes_raw = query_number(req, "axes", 2.0);
    if (!(axes_raw >= 1.0) || axes_raw != std::floor(axes_raw)) {
      throw HttpError(400, "validation", "axes must be a positive integer", "axes");
    }
    std::map<std::string, BinPolicy> policies;
    for (const auto& d : st->data->dimensions()) policies[d.id] = bins;
    const auto table = bin_to_categories(*st->data, policies);
    const auto map = mca(table);
    const auto axes = std::min(static_cast<std::size_t>(axes_raw), map.num_axes());
    send_json(res, 200, {{"map", to_json(map)}, {"eta2", eta_json(variable_axis_correlation(table, map, axes))}});
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}
Service::~Service() = default;

bool Service::listen(const std::string& host, int port) { return impl_->server_.listen(host, port); }
int Service::bind_to_any_port(const std::string& host) { return impl_->server_.bind_to_any_port(host); }
bool Service::listen_after_bind() { return impl_->server_.listen_after_bind(); }
void Service::stop() { impl_->server_.stop(); }
void Service::wait_idle() { impl_->wait_idle(); }

std::string openapi_document() {
  auto op = [](const std::string& summary) { return json{{"summary", summary}, {"responses", {{"200", {{"description", "OK"}}}}}}; };
  json paths{
      {"/health", {{"get", op("Liveness probe")}}},
      {"/datasets", {{"post", op("Upload a VAS CSV; returns its content-derived id (201)")}}},
      {"/datasets/{id}", {{"get", op("Data set as JSON")}}},
      {"/sessions", {{"get", op("List session ids")}, {"post", op("Create a session for {dataset} (201)")}}},
      {"/sessions/{id}", {{"get", op("Session state")}}},
      {"/sessions/{id}/runs",
       {{"get", op("All runs")}, {"post", op("Queue a run for {w, alpha, beta, seed}; 202, 409 while busy, 422 on bad parameters")}}},
      {"/sessions/{id}/runs/{run}", {{"get", op("Run status and result")}}},
      {"/sessions/{id}/derive", {{"get", op("r, m, outer iterations and minimum cluster size for ?alpha=&beta=")}}},
      {"/sessions/{id}/clusters", {{"get", op("Clusters of the latest run per beta")}}},
      {"/sessions/{id}/similarity",
       {{"get", op("Similarity matrix; ?format=csv for CSV")}, {"post", op("Compute similarity and dendrogram for {linkage}")}}},
      {"/sessions/{id}/dendrogram", {{"get", op("Dendrogram merges")}}},
      {"/sessions/{id}/cut", {{"get", op("Current cut")}, {"post", op("Cut the dendrogram at {height} in [0,1]")}}},
      {"/sessions/{id}/protos",
       {{"get", op("Saved proto-personas")}, {"post", op("Merge {set} minus {vetoed_dims} into a proto-persona named {name}")}}},
      {"/sessions/{id}/protos/{pid}", {{"delete", op("Remove a proto-persona")}}},
      {"/sessions/{id}/radar", {{"get", op("Radar data for ?a=&b= (cluster or proto-persona ids)")}}},
      {"/sessions/{id}/cooccurrence", {{"get", op("Co-occurrence table; ?exclude=ids&format=csv")}}},
      {"/sessions/{id}/ca", {{"get", op("Correspondence analysis of the co-occurrence table; ?exclude=ids")}}},
      {"/sessions/{id}/mca", {{"get", op("MCA map and correlation ratios; ?bins=2|3|auto&axes=n")}}},
      {"/sessions/{id}/report", {{"get", op("Markdown report of the proto-personas")}}},
      {"/sessions/{id}/audit", {{"get", op("Ordered log of session actions")}}},
  };
  json doc{{"openapi", "3.0.3"},
           {"info", {{"title", "forge workbench API"}, {"version", "1.0.0"}}},
           {"paths", std::move(paths)}};
  return doc.dump(2) + "\n";
}

}  // namespace forge
