#pragma once

// HTTP/JSON service backing the interactive workbench. Sessions hold a data
// set reference, cluster runs, the similarity/dendrogram state and merge
// decisions; every session is persisted as a JSON file under the data
// directory and reloaded on start.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

namespace forge {

struct ServiceOptions {
  std::filesystem::path data_dir = "forge-data";
  /// Background workers executing cluster runs.
  unsigned workers = 1;
  /// Trial threads used inside each run.
  unsigned run_threads = 1;
  std::uint64_t max_trials = 10'000'000;
  /// Value of Access-Control-Allow-Origin.
  std::string cors_origin = "*";
  /// Called on the worker thread, with the run id, just before a run computes.
  std::function<void(const std::string&)> on_run_start;
};

class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves until stop(); returns false when the bind fails.
  bool listen(const std::string& host, int port);
  /// Binds to a free port and returns it; serve with listen_after_bind().
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  /// Blocks until no run is queued or executing.
  void wait_idle();

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

/// The OpenAPI description served at /api/spec.
std::string openapi_document();

}  // namespace forge
