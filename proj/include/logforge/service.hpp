#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "logforge/executor.hpp"
#include "logforge/index_store.hpp"
#include "logforge/ingest.hpp"
#include "logforge/ml.hpp"
#include "logforge/security.hpp"

namespace logforge::service {

inline const std::vector<std::string>& quadrants() {
  static const std::vector<std::string> q = {"errors", "performance", "load", "security"};
  return q;
}

struct KpiSpec {
  std::map<std::string, double> weights = {
      {"errors", 0.25}, {"performance", 0.25}, {"load", 0.25}, {"security", 0.25}};
  double error_budget_per_1k = 20;    // error events per 1000 app events that cost the full penalty
  double duration_budget_ms = 6000;   // p95 query duration allowed before penalties start
  double load_capacity_per_min = 20000;
  double findings_budget = 10;        // findings that cost the full security penalty

  // Throws ConfigError unless weights cover the four quadrants, are
  // nonnegative and sum to 1.
  void validate() const;
};

struct Config {
  std::filesystem::path data_dir = "var/data";
  std::filesystem::path state_dir = "var/state";
  std::string host = "127.0.0.1";
  std::uint16_t port = 8089;
  std::string index = "main";
  index::RollPolicy roll;
  KpiSpec kpi;
  std::optional<std::filesystem::path> lookup;  // domain,ip CSV
  std::optional<std::filesystem::path> pack;    // rule pack JSON; builtin when absent
  std::filesystem::path packs_dir;              // shipped saved searches and dashboards
  std::filesystem::path ui_dir;
  std::optional<std::filesystem::path> rules;   // break/extract rules file
  int alert_poll_seconds = 60;
};

// Directory holding the shipped packs/ and ui/ trees.
std::filesystem::path default_share_dir();

// Relative paths resolve against the config file's directory. Throws ConfigError.
Config load_config(const std::filesystem::path& path);
Config default_config();

struct Panel {
  std::string title;
  std::string saved_search;  // either this or query
  std::string query;
  std::string viz = "table";  // single, bar, pie, timechart, table
  std::string quadrant;
};

struct Dashboard {
  std::string id;
  std::string title;
  std::vector<Panel> panels;

  nlohmann::json to_json() const;
  static Dashboard from_json(const nlohmann::json& j);
};

enum class Comparator { kGt, kGe, kLt, kLe, kEq, kNe };
Comparator comparator_from_string(std::string_view s);
std::string_view to_string(Comparator c);

struct AlertDef {
  std::string id;
  std::string search;  // saved-search name or query text
  std::string column;
  Comparator comparator = Comparator::kGt;
  double threshold = 0;
  std::int64_t interval_s = 300;
  std::optional<std::int64_t> last_fired;  // unix seconds

  nlohmann::json to_json() const;
  static AlertDef from_json(const nlohmann::json& j);
};

struct SearchRequest {
  std::string query;
  std::optional<Timestamp> earliest = std::nullopt;
  std::optional<Timestamp> latest = std::nullopt;
  bool profile = false;
};

struct Kpi {
  double value = 100;
  std::map<std::string, double> penalties;  // per quadrant, 0..100
  std::map<std::string, double> metrics;
  nlohmann::json to_json() const;
};

// Pure KPI arithmetic over already measured metrics.
Kpi compute_kpi(const KpiSpec& spec, double app_events, double error_events, double p95_ms,
                double peak_per_min, double findings);

// One node: an index plus saved searches, dashboards, alerts and models kept
// under the state directory. Searches may run concurrently; writes to the
// dashboard and alert stores are serialized.
class Service {
 public:
  explicit Service(Config cfg);
  ~Service();

  const Config& config() const { return cfg_; }
  index::IndexHandle& index() { return *index_; }

  // Breaks, timestamps, extracts and indexes files. Returns events added.
  std::size_t ingest(const std::vector<std::filesystem::path>& paths,
                     std::optional<std::string> sourcetype = std::nullopt);

  // Throws ParseError on syntax errors.
  query::ExecResult search(const SearchRequest& req) const;
  nlohmann::json search_json(const SearchRequest& req) const;

  // Expands a saved-search name; anything else is returned unchanged.
  std::string resolve_query(const std::string& name_or_query) const;
  std::map<std::string, std::string> saved_searches() const;
  void save_search(const std::string& name, const std::string& query);

  std::vector<Dashboard> dashboards() const;
  std::optional<Dashboard> dashboard(const std::string& id) const;
  // Validates quadrants and panel queries; throws ConfigError or ParseError.
  void save_dashboard(const Dashboard& d);
  // Every panel runs; a failing panel carries an error object instead of rows.
  std::optional<nlohmann::json> render_dashboard(const std::string& id) const;
  Kpi kpi() const;

  std::vector<AlertDef> alerts() const;
  // Checks that the condition column is in the search's result schema.
  void save_alert(const AlertDef& a);
  // Runs every alert; returns the fired records appended to alerts.log.
  std::vector<nlohmann::json> run_alerts(std::int64_t now_s);
  std::vector<nlohmann::json> fired_alerts() const;

  security::PackResult findings() const;
  const security::RulePack& pack() const { return pack_; }
  const security::RefererLookup& lookup() const { return lookup_; }
  const ingest::RuleSet& rules() const { return rules_; }

  // Background alert loop, used by `serve`.
  void start_scheduler();
  void stop_scheduler();

 private:
  query::ExecContext context() const;
  void persist_alerts() const;
  std::filesystem::path dashboards_dir() const;

  Config cfg_;
  std::unique_ptr<index::IndexHandle> index_;
  ingest::RuleSet rules_;
  std::unique_ptr<ingest::Extractor> extractor_;
  security::RulePack pack_;
  security::RefererLookup lookup_;
  std::unique_ptr<ml::ModelStore> models_;

  mutable std::mutex mu_;
  std::map<std::string, std::string> saved_;
  std::map<std::string, Dashboard> dashboards_;
  std::vector<AlertDef> alerts_;

  std::atomic<bool> scheduler_running_{false};
  std::thread scheduler_;
};

// Serves the JSON API and /ui/. Blocks until stop() on the returned handle.
class HttpServer {
 public:
  explicit HttpServer(Service& svc);
  ~HttpServer();
  // Binds (port 0 = any) and returns the bound port.
  std::uint16_t bind(const std::string& host, std::uint16_t port);
  void listen();  // blocking
  void start();   // background thread
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace logforge::service
