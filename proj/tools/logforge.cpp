// logforge command-line entry point.
// Exit codes: 0 success, 1 operational error, 2 usage or query syntax error.

#include <csignal>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "logforge/error.hpp"
#include "logforge/executor.hpp"
#include "logforge/generator.hpp"
#include "logforge/ml.hpp"
#include "logforge/net.hpp"
#include "logforge/query.hpp"
#include "logforge/security.hpp"
#include "logforge/service.hpp"
#include "logforge/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace logforge;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

struct Globals {
  std::string config;
  std::string data_dir;
  std::string state_dir;
};

service::Config make_config(const Globals& g) {
  service::Config c;
  if (!g.config.empty()) c = service::load_config(g.config);
  else if (fs::exists("logforge.toml")) c = service::load_config("logforge.toml");
  else c = service::default_config();
  if (!g.data_dir.empty()) c.data_dir = g.data_dir;
  if (!g.state_dir.empty()) c.state_dir = g.state_dir;
  return c;
}

// Query text with a caret under the failing offset.
void print_parse_error(const std::string& q, const ParseError& e) {
  std::cerr << "error: " << e.message() << " (offset " << e.offset() << ")\n";
  std::cerr << "  " << q << "\n  " << std::string(e.offset() > 0 ? e.offset() - 1 : 0, ' ') << "^\n";
  if (!e.expected().empty()) {
    std::cerr << "expected one of:";
    for (const auto& x : e.expected()) std::cerr << ' ' << x;
    std::cerr << '\n';
  }
}

std::string cell_text(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void print_table(const json& t, std::ostream& out) {
  const auto& cols = t["columns"];
  std::vector<std::size_t> width;
  for (const auto& c : cols) width.push_back(c.get<std::string>().size());
  for (const auto& row : t["rows"])
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i)
      width[i] = std::max(width[i], std::min<std::size_t>(cell_text(row[i]).size(), 80));
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      std::string c = cells[i].size() > 80 ? cells[i].substr(0, 77) + "..." : cells[i];
      out << c;
      if (i + 1 < cells.size()) out << std::string(width[i] - c.size() + 2, ' ');
    }
    out << '\n';
  };
  std::vector<std::string> head;
  for (const auto& c : cols) head.push_back(c.get<std::string>());
  line(head);
  std::vector<std::string> rule;
  for (auto w : width) rule.push_back(std::string(w, '-'));
  line(rule);
  for (const auto& row : t["rows"]) {
    std::vector<std::string> cells;
    for (const auto& v : row) cells.push_back(cell_text(v));
    line(cells);
  }
}

std::vector<Event> extracted_access_events(const std::vector<std::string>& paths,
                                           const ingest::RuleSet& rules) {
  ingest::Extractor ex(rules.extraction);
  std::vector<Event> out;
  EventId next = 0;
  for (const auto& p : paths) {
    ingest::SourceMeta meta{"localhost", p, "accesslog"};
    for (auto& e : ingest::ingest_file(p, meta, rules)) {
      e.id = next++;
      ex.extract(e);
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"logforge: log indexing, search and analytics"};
  app.set_version_flag("--version", std::string(kVersionString));
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "config file (TOML or JSON)");
  app.add_option("--data-dir", g.data_dir, "index directory");
  app.add_option("--state-dir", g.state_dir, "saved searches, dashboards, alerts, models");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "break, timestamp and index log files");
  std::vector<std::string> ingest_paths;
  std::string index_name, sourcetype;
  ingest_cmd->add_option("paths", ingest_paths, "log files")->required()->check(CLI::ExistingPath);
  ingest_cmd->add_option("--index", index_name, "index name");
  ingest_cmd->add_option("--sourcetype", sourcetype, "override the inferred sourcetype");

  // search
  auto* search_cmd = app.add_subcommand("search", "run a query");
  std::string query_text, output = "table";
  bool profile = false;
  std::optional<std::int64_t> earliest, latest;
  search_cmd->add_option("query", query_text, "query text or saved-search name")->required();
  search_cmd->add_flag("--profile", profile, "include the execution profile");
  search_cmd->add_option("--output", output, "json or table")->check(CLI::IsMember({"json", "table"}));
  search_cmd->add_option("--earliest", earliest, "epoch microseconds");
  search_cmd->add_option("--latest", latest, "epoch microseconds");
  search_cmd->add_option("--index", index_name, "index name");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API and web UI");
  std::optional<int> serve_port;
  std::string serve_host;
  serve_cmd->add_option("--port", serve_port, "listen port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", serve_host, "listen address");

  // forward
  auto* fwd_cmd = app.add_subcommand("forward", "tail files and ship events to a receiver");
  std::string dest = "127.0.0.1:9997", fwd_state;
  std::vector<std::string> fwd_paths;
  bool fwd_once = false;
  fwd_cmd->add_option("--dest", dest, "receiver host:port");
  fwd_cmd->add_option("--checkpoint-dir", fwd_state, "checkpoint directory (default <state>/forwarder)");
  fwd_cmd->add_flag("--once", fwd_once, "ship what is there now and exit");
  fwd_cmd->add_option("paths", fwd_paths, "files or directories")->required();

  // receive
  auto* recv_cmd = app.add_subcommand("receive", "accept forwarder connections and index events");
  std::string listen = "0.0.0.0:9997";
  recv_cmd->add_option("--listen", listen, "host:port");
  recv_cmd->add_option("--index", index_name, "index name");

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "run a rule pack; findings as JSON Lines");
  std::string pack_file, lookup_file;
  std::vector<std::string> detect_paths;
  bool summary = false;
  detect_cmd->add_option("--pack", pack_file, "rule pack JSON (builtin when omitted)")->check(CLI::ExistingFile);
  detect_cmd->add_option("--lookup", lookup_file, "domain,ip CSV")->check(CLI::ExistingFile);
  detect_cmd->add_flag("--summary", summary, "print the per-rule table to stderr");
  detect_cmd->add_option("paths", detect_paths, "access logs (the index when omitted)")->check(CLI::ExistingFile);

  // ml passthrough
  auto* fit_cmd = app.add_subcommand("fit", "fit PCA or LogisticRegression on a CSV");
  std::string algorithm, csv_path, model_name, response;
  std::vector<std::string> fields;
  std::size_t k = 2;
  ml::LogRegOptions lr;
  fit_cmd->add_option("algorithm", algorithm, "PCA or LogisticRegression")
      ->required()
      ->check(CLI::IsMember({"PCA", "LogisticRegression"}, CLI::ignore_case));
  fit_cmd->add_option("csv", csv_path, "input table")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--fields", fields, "feature fields")->required()->delimiter(',');
  fit_cmd->add_option("--response", response, "target field (LogisticRegression)");
  fit_cmd->add_option("--k", k, "components (PCA)");
  fit_cmd->add_option("--train-fraction", lr.train_fraction)->check(CLI::Range(0.0, 1.0));
  fit_cmd->add_option("--seed", lr.seed);
  fit_cmd->add_option("--into", model_name, "model name")->required();

  auto* apply_cmd = app.add_subcommand("apply", "apply a saved model to a CSV");
  apply_cmd->add_option("model", model_name)->required();
  apply_cmd->add_option("csv", csv_path)->required()->check(CLI::ExistingFile);

  auto* anomaly_cmd = app.add_subcommand("anomaly", "frequency-based categorical outliers on a CSV");
  double threshold = ml::kDefaultOutlierThreshold;
  bool only_outliers = false;
  anomaly_cmd->add_option("csv", csv_path)->required()->check(CLI::ExistingFile);
  anomaly_cmd->add_option("--fields", fields, "fields to score")->required()->delimiter(',');
  anomaly_cmd->add_option("--threshold", threshold);
  anomaly_cmd->add_flag("--filter", only_outliers, "print outliers only");

  // gen
  auto* gen_cmd = app.add_subcommand("gen", "write a seeded synthetic corpus");
  gen::GenProfile gp;
  std::string out_dir = ".";
  gen_cmd->add_option("--seed", gp.seed);
  gen_cmd->add_option("--events", gp.events);
  gen_cmd->add_option("--attack-rate", gp.attack_rate)->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--error-rate", gp.error_rate)->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto cfg = [&] {
      auto c = make_config(g);
      if (!index_name.empty()) c.index = index_name;
      return c;
    };

    if (*ingest_cmd) {
      service::Service svc(cfg());
      std::vector<fs::path> paths(ingest_paths.begin(), ingest_paths.end());
      auto n = svc.ingest(paths, sourcetype.empty() ? std::nullopt : std::optional(sourcetype));
      std::cout << "indexed " << n << " events into '" << svc.config().index << "'\n";
      return 0;
    }

    if (*search_cmd) {
      service::Service svc(cfg());
      service::SearchRequest req{query_text, earliest, latest, profile};
      json out;
      try {
        out = svc.search_json(req);
      } catch (const ParseError& e) {
        print_parse_error(svc.resolve_query(query_text), e);
        return 2;
      }
      if (output == "json") {
        std::cout << out.dump() << '\n';
      } else {
        print_table(out, std::cout);
        if (profile) std::cout << '\n' << out["profile"].dump(2) << '\n';
      }
      return 0;
    }

    if (*serve_cmd) {
      auto c = cfg();
      if (serve_port) c.port = static_cast<std::uint16_t>(*serve_port);
      if (!serve_host.empty()) c.host = serve_host;
      service::Service svc(c);
      service::HttpServer http(svc);
      auto port = http.bind(c.host, c.port);
      http.start();
      svc.start_scheduler();
      std::cerr << "listening on http://" << c.host << ':' << port << "/\n";
      wait_for_signal();
      http.stop();
      svc.stop_scheduler();
      return 0;
    }

    if (*fwd_cmd) {
      auto c = make_config(g);
      net::ForwarderOptions o;
      o.dest = net::parse_endpoint(dest);
      o.state_dir = fwd_state.empty() ? c.state_dir / "forwarder" : fs::path(fwd_state);
      if (c.rules) o.rules = ingest::load_rules(*c.rules);
      else o.rules = {ingest::default_break_rules(), ingest::default_extraction_rules()};
      std::vector<fs::path> paths(fwd_paths.begin(), fwd_paths.end());
      net::Forwarder fwd(paths, o);
      if (fwd_once) {
        fwd.poll_once(true);
        fwd.stop(true);
        auto s = fwd.stats();
        std::cerr << "sent " << s.events_sent << " events\n";
        return 0;
      }
      fwd.start();
      wait_for_signal();
      fwd.stop(true);
      std::cerr << "sent " << fwd.stats().events_sent << " events\n";
      return 0;
    }

    if (*recv_cmd) {
      service::Service svc(cfg());
      net::ReceiverOptions o;
      o.listen = net::parse_endpoint(listen);
      o.rules = svc.rules();
      net::Receiver recv(svc.index(), o);
      recv.start();
      std::cerr << "receiving on " << o.listen.host << ':' << recv.port() << '\n';
      wait_for_signal();
      recv.stop();
      svc.index().flush();
      auto s = recv.stats();
      std::cerr << "indexed " << s.events_indexed << " events from " << s.connections << " connections\n";
      return 0;
    }

    if (*detect_cmd) {
      auto pack = pack_file.empty() ? security::RulePack::builtin() : security::RulePack::load(pack_file);
      security::RefererLookup lookup;
      if (!lookup_file.empty()) lookup = security::RefererLookup::load_csv(lookup_file);
      security::PackResult r;
      if (!detect_paths.empty()) {
        auto c = make_config(g);
        ingest::RuleSet rules = c.rules ? ingest::load_rules(*c.rules)
                                        : ingest::RuleSet{ingest::default_break_rules(),
                                                          ingest::default_extraction_rules()};
        r = security::run_pack(extracted_access_events(detect_paths, rules), pack, lookup);
      } else {
        auto c = cfg();
        c.pack = pack_file.empty() ? std::nullopt : std::optional<fs::path>(pack_file);
        c.lookup = lookup_file.empty() ? c.lookup : std::optional<fs::path>(lookup_file);
        service::Service svc(c);
        r = svc.findings();
      }
      for (const auto& f : r.findings) std::cout << security::to_json(f).dump() << '\n';
      if (summary) {
        print_table(query::to_json(r.by_rule), std::cerr);
        std::cerr << "unresolved referers: " << r.unresolved << '\n';
      }
      return 0;
    }

    if (*fit_cmd) {
      auto c = make_config(g);
      auto table = ml::DataTable::read_csv(csv_path);
      ml::ModelStore store(c.state_dir / "models");
      std::string algo = CLI::detail::to_lower(algorithm);
      if (algo == "pca") {
        auto [model, out] = ml::fit_pca(table, fields, k);
        store.put(model_name, std::move(model));
        std::cout << out.to_csv();
      } else {
        if (response.empty()) throw CLI::RequiredError("--response");
        auto [model, report] = ml::fit_logreg(table, response, fields, lr);
        store.put(model_name, model);
        const auto& s = report.heldout;
        json j = {{"model", model_name},
                  {"classes", model.classes},
                  {"train_rows", report.train_rows.size()},
                  {"test_rows", report.test_rows.size()},
                  {"iterations", report.iterations},
                  {"accuracy", s.accuracy},
                  {"precision", s.precision},
                  {"recall", s.recall},
                  {"f1", s.f1}};
        std::cout << j.dump(2) << '\n';
      }
      return 0;
    }

    if (*apply_cmd) {
      auto c = make_config(g);
      ml::ModelStore store(c.state_dir / "models");
      auto table = ml::DataTable::read_csv(csv_path);
      std::cout << ml::apply_model(store.get(model_name), table).to_csv();
      return 0;
    }

    if (*anomaly_cmd) {
      auto table = ml::DataTable::read_csv(csv_path);
      auto rows = ml::anomaly_detect(table, fields, threshold);
      if (only_outliers)
        std::erase_if(rows, [](const ml::AnomalyRow& r) { return r.is_outlier == 0; });
      std::cout << ml::anomaly_table(table, rows).to_csv();
      return 0;
    }

    if (*gen_cmd) {
      auto m = gen::generate_corpus(gp, out_dir);
      std::cerr << "wrote " << m.app_events << " app and " << m.access_events << " access events, "
                << m.attacks.size() << " attacks to " << out_dir << '\n';
      return 0;
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
