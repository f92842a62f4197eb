#include "logforge/service.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "logforge/config_file.hpp"
#include "logforge/error.hpp"
#include "logforge/query.hpp"

namespace logforge::service {

namespace fs = std::filesystem;
using json = nlohmann::json;
using query::ExecContext;
using query::ExecResult;
using query::to_json;

namespace {

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_json_atomic(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::string machine_name() {
  char buf[256] = {0};
  if (gethostname(buf, sizeof buf - 1) != 0) return "localhost";
  return buf;
}

bool valid_viz(const std::string& v) {
  return v == "single" || v == "bar" || v == "pie" || v == "timechart" || v == "table";
}

// Search stage only: what a drill-down shows as raw events.
std::string drilldown_of(const std::string& q) {
  auto stages = query::split_pipeline(q);
  if (stages.empty()) return q;
  const std::string& first = stages[0].first;
  auto b = first.find_first_not_of(' ');
  auto e = first.find_last_not_of(' ');
  return b == std::string::npos ? std::string() : first.substr(b, e - b + 1);
}

std::optional<double> first_number(const ResultTable& t, const std::string& column) {
  auto c = t.column_index(column);
  if (!c || t.rows.empty()) return std::nullopt;
  return t.rows[0][*c].as_number();
}

}  // namespace

// -- config -----------------------------------------------------------------

void KpiSpec::validate() const {
  double sum = 0;
  for (const auto& q : quadrants()) {
    auto it = weights.find(q);
    if (it == weights.end()) throw ConfigError("kpi weight missing for quadrant '" + q + "'");
    if (it->second < 0) throw ConfigError("kpi weight for '" + q + "' is negative");
    sum += it->second;
  }
  if (weights.size() != quadrants().size()) throw ConfigError("kpi weights name an unknown quadrant");
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("kpi weights must sum to 1");
  if (error_budget_per_1k <= 0 || duration_budget_ms <= 0 || load_capacity_per_min <= 0 ||
      findings_budget <= 0)
    throw ConfigError("kpi budgets must be positive");
}

fs::path default_share_dir() {
  if (const char* env = std::getenv("LOGFORGE_SHARE_DIR")) return env;
#ifdef LOGFORGE_SHARE_DIR
  return LOGFORGE_SHARE_DIR;
#else
  return fs::current_path();
#endif
}

Config default_config() {
  Config c;
  c.packs_dir = default_share_dir() / "packs";
  c.ui_dir = default_share_dir() / "webui" / "dist";
  return c;
}

Config load_config(const fs::path& path) {
  json j = read_config_document(path);
  Config c = default_config();
  fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto rel = [&](const std::string& v) {
    fs::path p(v);
    return p.is_absolute() ? p : base / p;
  };
  try {
    if (j.contains("data_dir")) c.data_dir = rel(j["data_dir"].get<std::string>());
    if (j.contains("state_dir")) c.state_dir = rel(j["state_dir"].get<std::string>());
    if (j.contains("host")) c.host = j["host"].get<std::string>();
    if (j.contains("port")) {
      auto port = j["port"].get<std::int64_t>();
      if (port < 0 || port > 65535) throw ConfigError("port out of range");
      c.port = static_cast<std::uint16_t>(port);
    }
    if (j.contains("index")) c.index = j["index"].get<std::string>();
    if (j.contains("lookup")) c.lookup = rel(j["lookup"].get<std::string>());
    if (j.contains("pack")) c.pack = rel(j["pack"].get<std::string>());
    if (j.contains("rules")) c.rules = rel(j["rules"].get<std::string>());
    if (j.contains("packs_dir")) c.packs_dir = rel(j["packs_dir"].get<std::string>());
    if (j.contains("ui_dir")) c.ui_dir = rel(j["ui_dir"].get<std::string>());
    if (j.contains("alert_poll_seconds")) c.alert_poll_seconds = j["alert_poll_seconds"].get<int>();
    if (j.contains("roll")) {
      const auto& r = j["roll"];
      c.roll.max_bytes = r.value("max_bytes", c.roll.max_bytes);
      c.roll.max_warm = r.value("max_warm", c.roll.max_warm);
      c.roll.max_cold = r.value("max_cold", c.roll.max_cold);
      c.roll.segment_bytes = r.value("segment_bytes", c.roll.segment_bytes);
      c.roll.max_total_bytes = r.value("max_total_bytes", c.roll.max_total_bytes);
    }
    if (j.contains("kpi")) {
      const auto& k = j["kpi"];
      if (k.contains("weights")) {
        c.kpi.weights.clear();
        for (const auto& [q, w] : k["weights"].items()) c.kpi.weights[q] = w.get<double>();
      }
      c.kpi.error_budget_per_1k = k.value("error_budget_per_1k", c.kpi.error_budget_per_1k);
      c.kpi.duration_budget_ms = k.value("duration_budget_ms", c.kpi.duration_budget_ms);
      c.kpi.load_capacity_per_min = k.value("load_capacity_per_min", c.kpi.load_capacity_per_min);
      c.kpi.findings_budget = k.value("findings_budget", c.kpi.findings_budget);
    }
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  c.kpi.validate();
  return c;
}

// -- value types ------------------------------------------------------------

json Dashboard::to_json() const {
  json panels_j = json::array();
  for (const auto& p : panels) {
    json pj = {{"title", p.title}, {"viz", p.viz}, {"quadrant", p.quadrant}};
    if (!p.saved_search.empty()) pj["saved_search"] = p.saved_search;
    if (!p.query.empty()) pj["query"] = p.query;
    panels_j.push_back(pj);
  }
  return {{"id", id}, {"title", title}, {"panels", panels_j}};
}

Dashboard Dashboard::from_json(const json& j) {
  Dashboard d;
  try {
    d.id = j.at("id").get<std::string>();
    d.title = j.value("title", d.id);
    for (const auto& p : j.at("panels")) {
      Panel panel;
      panel.title = p.value("title", "");
      panel.saved_search = p.value("saved_search", "");
      panel.query = p.value("query", "");
      panel.viz = p.value("viz", "table");
      panel.quadrant = p.at("quadrant").get<std::string>();
      d.panels.push_back(std::move(panel));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad dashboard: ") + e.what());
  }
  return d;
}

Comparator comparator_from_string(std::string_view s) {
  if (s == ">") return Comparator::kGt;
  if (s == ">=") return Comparator::kGe;
  if (s == "<") return Comparator::kLt;
  if (s == "<=") return Comparator::kLe;
  if (s == "==" || s == "=") return Comparator::kEq;
  if (s == "!=") return Comparator::kNe;
  throw ConfigError("unknown comparator '" + std::string(s) + "'");
}

std::string_view to_string(Comparator c) {
  switch (c) {
    case Comparator::kGt: return ">";
    case Comparator::kGe: return ">=";
    case Comparator::kLt: return "<";
    case Comparator::kLe: return "<=";
    case Comparator::kEq: return "==";
    case Comparator::kNe: return "!=";
  }
  return "?";
}

namespace {

bool compare(double v, Comparator c, double t) {
  switch (c) {
    case Comparator::kGt: return v > t;
    case Comparator::kGe: return v >= t;
    case Comparator::kLt: return v < t;
    case Comparator::kLe: return v <= t;
    case Comparator::kEq: return v == t;
    case Comparator::kNe: return v != t;
  }
  return false;
}

}  // namespace

json AlertDef::to_json() const {
  json j = {{"id", id},
            {"search", search},
            {"condition", {{"column", column}, {"comparator", std::string(to_string(comparator))}, {"threshold", threshold}}},
            {"interval_s", interval_s}};
  j["last_fired"] = last_fired ? json(*last_fired) : json(nullptr);
  return j;
}

AlertDef AlertDef::from_json(const json& j) {
  AlertDef a;
  try {
    a.id = j.at("id").get<std::string>();
    a.search = j.at("search").get<std::string>();
    const auto& c = j.at("condition");
    a.column = c.at("column").get<std::string>();
    a.comparator = comparator_from_string(c.value("comparator", ">"));
    a.threshold = c.at("threshold").get<double>();
    a.interval_s = j.value("interval_s", std::int64_t{300});
    if (j.contains("last_fired") && !j["last_fired"].is_null()) a.last_fired = j["last_fired"].get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad alert: ") + e.what());
  }
  if (a.interval_s <= 0) throw ConfigError("alert interval must be positive");
  return a;
}

json Kpi::to_json() const { return {{"value", value}, {"penalties", penalties}, {"metrics", metrics}}; }

Kpi compute_kpi(const KpiSpec& spec, double app_events, double error_events, double p95_ms,
                double peak_per_min, double findings) {
  auto clamp = [](double v) { return std::clamp(v, 0.0, 100.0); };
  Kpi k;
  double per_1k = app_events > 0 ? 1000.0 * error_events / app_events : 0.0;
  k.metrics = {{"app_events", app_events},  {"error_events", error_events}, {"errors_per_1k", per_1k},
               {"p95_ms", p95_ms},          {"peak_per_min", peak_per_min}, {"findings", findings}};
  k.penalties["errors"] = clamp(100.0 * per_1k / spec.error_budget_per_1k);
  k.penalties["performance"] = clamp(100.0 * (p95_ms - spec.duration_budget_ms) / spec.duration_budget_ms);
  k.penalties["load"] = clamp(100.0 * (peak_per_min - spec.load_capacity_per_min) / spec.load_capacity_per_min);
  k.penalties["security"] = clamp(100.0 * findings / spec.findings_budget);
  double total = 0;
  for (const auto& [q, p] : k.penalties) total += spec.weights.at(q) * p;
  k.value = clamp(100.0 - total);
  return k;
}

// -- service ----------------------------------------------------------------

namespace {

security::RulePack load_pack(const Config& cfg) {
  return cfg.pack ? security::RulePack::load(*cfg.pack) : security::RulePack::builtin();
}

}  // namespace

Service::Service(Config cfg) : cfg_(std::move(cfg)), pack_(load_pack(cfg_)) {
  cfg_.kpi.validate();
  fs::create_directories(cfg_.data_dir);
  fs::create_directories(cfg_.state_dir);
  index_ = index::IndexHandle::open(cfg_.data_dir, cfg_.index, cfg_.roll);
  if (cfg_.rules) {
    rules_ = ingest::load_rules(*cfg_.rules);
  } else {
    rules_.breaking = ingest::default_break_rules();
    rules_.extraction = ingest::default_extraction_rules();
  }
  extractor_ = std::make_unique<ingest::Extractor>(rules_.extraction);
  if (cfg_.lookup) lookup_ = security::RefererLookup::load_csv(*cfg_.lookup);
  models_ = std::make_unique<ml::ModelStore>(cfg_.state_dir / "models");

  // Saved searches: the state copy wins; first start seeds it from the pack.
  fs::path saved = cfg_.state_dir / "saved_searches.json";
  if (fs::exists(saved)) {
    json stored = read_json_file(saved);
    for (const auto& [k, v] : stored.items()) saved_[k] = v.get<std::string>();
  } else if (fs::exists(cfg_.packs_dir / "paper_queries.json")) {
    json pack = read_json_file(cfg_.packs_dir / "paper_queries.json");
    for (const auto& q : pack.at("queries"))
      saved_[q.at("name").get<std::string>()] = q.at("query").get<std::string>();
    write_json_atomic(saved, saved_);
  }

  if (!fs::exists(dashboards_dir()) && fs::exists(cfg_.packs_dir / "dashboards")) {
    fs::create_directories(dashboards_dir());
    for (const auto& e : fs::directory_iterator(cfg_.packs_dir / "dashboards"))
      if (e.path().extension() == ".json") fs::copy_file(e.path(), dashboards_dir() / e.path().filename());
  }
  if (fs::exists(dashboards_dir())) {
    for (const auto& e : fs::directory_iterator(dashboards_dir())) {
      if (e.path().extension() != ".json") continue;
      auto d = Dashboard::from_json(read_json_file(e.path()));
      dashboards_[d.id] = std::move(d);
    }
  }

  fs::path alerts = cfg_.state_dir / "alerts.json";
  if (fs::exists(alerts)) {
    json stored = read_json_file(alerts);
    for (const auto& a : stored.at("alerts")) alerts_.push_back(AlertDef::from_json(a));
  }
}

Service::~Service() {
  stop_scheduler();
  index_->flush();
}

fs::path Service::dashboards_dir() const { return cfg_.state_dir / "dashboards"; }

std::size_t Service::ingest(const std::vector<fs::path>& paths, std::optional<std::string> sourcetype) {
  std::size_t added = 0;
  std::string host = machine_name();
  for (const auto& p : paths) {
    ingest::SourceMeta meta{host, p.string(), sourcetype.value_or(ingest::infer_sourcetype(p))};
    for (const auto& e : ingest::ingest_file(p, meta, rules_)) {
      index_->index_event(e);
      ++added;
    }
  }
  index_->flush();
  return added;
}

ExecContext Service::context() const {
  ExecContext ctx;
  ctx.indexes = {index_.get()};
  ctx.extractor = extractor_.get();
  ctx.models = models_.get();
  ctx.lookup = &lookup_;
  return ctx;
}

std::string Service::resolve_query(const std::string& name_or_query) const {
  std::lock_guard lock(mu_);
  auto it = saved_.find(name_or_query);
  return it == saved_.end() ? name_or_query : it->second;
}

ExecResult Service::search(const SearchRequest& req) const {
  auto q = query::parse(resolve_query(req.query));
  ExecContext ctx = context();
  if (req.earliest) ctx.range.earliest = *req.earliest;
  if (req.latest) ctx.range.latest = *req.latest;
  bool touches_models = std::any_of(q.stages.begin(), q.stages.end(), [](const query::Stage& s) {
    return s.kind == query::StageKind::kFit || s.kind == query::StageKind::kApply;
  });
  if (touches_models) {
    // The model store is not safe for concurrent writers.
    static std::mutex model_mu;
    std::lock_guard lock(model_mu);
    return execute(q, ctx);
  }
  return execute(q, ctx);
}

json Service::search_json(const SearchRequest& req) const {
  auto r = search(req);
  json out = to_json(r.table);
  if (req.profile) out["profile"] = to_json(r.profile);
  return out;
}

std::map<std::string, std::string> Service::saved_searches() const {
  std::lock_guard lock(mu_);
  return saved_;
}

void Service::save_search(const std::string& name, const std::string& q) {
  query::parse(q);
  std::lock_guard lock(mu_);
  saved_[name] = q;
  write_json_atomic(cfg_.state_dir / "saved_searches.json", saved_);
}

std::vector<Dashboard> Service::dashboards() const {
  std::lock_guard lock(mu_);
  std::vector<Dashboard> out;
  for (const auto& [id, d] : dashboards_) out.push_back(d);
  return out;
}

std::optional<Dashboard> Service::dashboard(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = dashboards_.find(id);
  if (it == dashboards_.end()) return std::nullopt;
  return it->second;
}

void Service::save_dashboard(const Dashboard& d) {
  if (d.id.empty() || d.id.find_first_of("/\\.") != std::string::npos)
    throw ConfigError("dashboard id must be a plain name");
  for (const auto& p : d.panels) {
    if (std::find(quadrants().begin(), quadrants().end(), p.quadrant) == quadrants().end())
      throw ConfigError("panel '" + p.title + "' has unknown quadrant '" + p.quadrant + "'");
    if (!valid_viz(p.viz)) throw ConfigError("panel '" + p.title + "' has unknown viz '" + p.viz + "'");
    if (p.query.empty() == p.saved_search.empty())
      throw ConfigError("panel '" + p.title + "' needs exactly one of query or saved_search");
    if (!p.query.empty()) query::parse(p.query);
  }
  write_json_atomic(dashboards_dir() / (d.id + ".json"), d.to_json());
  std::lock_guard lock(mu_);
  dashboards_[d.id] = d;
}

std::optional<json> Service::render_dashboard(const std::string& id) const {
  auto d = dashboard(id);
  if (!d) return std::nullopt;
  json panels = json::array();
  for (const auto& p : d->panels) {
    json pj = {{"title", p.title}, {"viz", p.viz}, {"quadrant", p.quadrant}};
    try {
      std::string text = p.query;
      if (!p.saved_search.empty()) {
        auto saved = saved_searches();
        auto it = saved.find(p.saved_search);
        if (it == saved.end()) throw ConfigError("unknown saved search '" + p.saved_search + "'");
        text = it->second;
        pj["saved_search"] = p.saved_search;
      }
      pj["query"] = text;
      pj["drilldown"] = drilldown_of(text);
      auto r = search(SearchRequest{.query = text});
      json t = to_json(r.table);
      pj["columns"] = t["columns"];
      pj["rows"] = t["rows"];
      pj["density"] = std::string(to_string(r.profile.density));
    } catch (const ParseError& e) {
      pj["error"] = {{"message", e.message()}, {"offset", e.offset()}};
    } catch (const std::exception& e) {
      pj["error"] = {{"message", e.what()}};
    }
    panels.push_back(std::move(pj));
  }
  return json{{"id", d->id}, {"title", d->title}, {"panels", panels}, {"kpi", kpi().to_json()}};
}

Kpi Service::kpi() const {
  auto count = [&](const std::string& q) {
    return first_number(search(SearchRequest{.query = q}).table, "count").value_or(0);
  };
  double app = count("sourcetype=applog | stats count");
  double errors = count("sourcetype=applog level=ERROR | stats count");
  std::vector<double> ms;
  auto t = search(SearchRequest{.query = "sourcetype=applog \"execute query\" | fields ms"}).table;
  if (auto c = t.column_index("ms"))
    for (const auto& row : t.rows)
      if (auto v = row[*c].as_number()) ms.push_back(*v);
  double p95 = 0;
  if (!ms.empty()) {
    std::sort(ms.begin(), ms.end());
    // Nearest rank.
    auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
    p95 = ms[std::max<std::size_t>(rank, 1) - 1];
  }
  double peak = 0;
  auto load = search(SearchRequest{.query = "* | timechart span=1m count"}).table;
  if (auto c = load.column_index("count"))
    for (const auto& row : load.rows) peak = std::max(peak, row[*c].as_number().value_or(0));
  double found = static_cast<double>(findings().findings.size());
  return compute_kpi(cfg_.kpi, app, errors, p95, peak, found);
}

security::PackResult Service::findings() const {
  auto events = index_->candidate_events({}, index::TimeRange{}).events;
  std::vector<Event> access;
  for (auto& e : events) {
    if (e.sourcetype != "accesslog") continue;
    extractor_->extract(e);
    access.push_back(std::move(e));
  }
  return security::run_pack(access, pack_, lookup_);
}

std::vector<AlertDef> Service::alerts() const {
  std::lock_guard lock(mu_);
  return alerts_;
}

void Service::persist_alerts() const {
  json arr = json::array();
  for (const auto& a : alerts_) arr.push_back(a.to_json());
  write_json_atomic(cfg_.state_dir / "alerts.json", {{"alerts", arr}});
}

void Service::save_alert(const AlertDef& a) {
  if (a.id.empty()) throw ConfigError("alert needs an id");
  if (a.interval_s <= 0) throw ConfigError("alert interval must be positive");
  auto r = search(SearchRequest{.query = a.search});
  if (!r.table.column_index(a.column))
    throw ConfigError("alert column '" + a.column + "' is not produced by its search");
  std::lock_guard lock(mu_);
  auto it = std::find_if(alerts_.begin(), alerts_.end(), [&](const AlertDef& x) { return x.id == a.id; });
  if (it != alerts_.end()) *it = a;
  else alerts_.push_back(a);
  persist_alerts();
}

std::vector<json> Service::run_alerts(std::int64_t now_s) {
  std::vector<json> fired;
  for (const auto& def : alerts()) {
    std::optional<double> value;
    try {
      value = first_number(search(SearchRequest{def.search}).table, def.column);
    } catch (const std::exception&) {
      continue;
    }
    if (!value || !compare(*value, def.comparator, def.threshold)) continue;
    std::string resolved = resolve_query(def.search);
    std::lock_guard lock(mu_);
    auto it = std::find_if(alerts_.begin(), alerts_.end(), [&](const AlertDef& x) { return x.id == def.id; });
    if (it == alerts_.end()) continue;
    if (it->last_fired && now_s - *it->last_fired < it->interval_s) continue;  // deduped
    it->last_fired = now_s;
    json rec = {{"alert_id", def.id},
                {"fired_at", now_s},
                {"column", def.column},
                {"value", *value},
                {"comparator", std::string(to_string(def.comparator))},
                {"threshold", def.threshold},
                {"search", resolved}};
    std::ofstream log(cfg_.state_dir / "alerts.log", std::ios::app);
    log << rec.dump() << '\n';
    persist_alerts();
    fired.push_back(std::move(rec));
  }
  return fired;
}

std::vector<json> Service::fired_alerts() const {
  std::vector<json> out;
  std::lock_guard lock(mu_);
  std::ifstream in(cfg_.state_dir / "alerts.log");
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line, nullptr, false));
  return out;
}

void Service::start_scheduler() {
  if (scheduler_running_.exchange(true)) return;
  scheduler_ = std::thread([this] {
    auto next = std::chrono::steady_clock::now();
    while (scheduler_running_) {
      if (std::chrono::steady_clock::now() >= next) {
        auto now = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
        run_alerts(now);
        next = std::chrono::steady_clock::now() + std::chrono::seconds(cfg_.alert_poll_seconds);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  });
}

void Service::stop_scheduler() {
  scheduler_running_ = false;
  if (scheduler_.joinable()) scheduler_.join();
}

}  // namespace logforge::service
