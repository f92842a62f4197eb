#include "logforge/security.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/regex.hpp>

#include "logforge/error.hpp"
#include "logforge/strings.hpp"

namespace logforge::security {

namespace {

// Decoded + lowercased view of a uri with the raw-offset map.
struct Inspected {
  std::string lower;
  std::vector<std::size_t> offsets;

  explicit Inspected(std::string_view uri) {
    auto d = url_decode_mapped(uri);
    lower = to_lower(d.text);
    offsets = std::move(d.offsets);
  }
  Match to_raw(std::size_t b, std::size_t e) const { return Match{offsets[b], offsets[e]}; }
};

std::optional<Match> regex_find(const Inspected& in, const boost::regex& re,
                                std::size_t from = 0) {
  boost::smatch m;
  auto begin = in.lower.cbegin() + static_cast<std::ptrdiff_t>(from);
  if (!boost::regex_search(begin, in.lower.cend(), m, re)) return std::nullopt;
  auto b = from + static_cast<std::size_t>(m.position());
  return in.to_raw(b, b + static_cast<std::size_t>(m.length()));
}

}  // namespace

std::optional<Match> match_xss(std::string_view uri) {
  Inspected in(uri);
  const std::string& s = in.lower;
  // Tag pair: <...>...</...>
  auto open = s.find('<');
  if (open != std::string::npos) {
    auto gt = s.find('>', open + 1);
    if (gt != std::string::npos) {
      auto close = s.find("</", gt + 1);
      if (close != std::string::npos) {
        auto end = s.find('>', close + 2);
        if (end != std::string::npos) return in.to_raw(open, end + 1);
      }
    }
  }
  static constexpr std::array<std::string_view, 5> kWords = {"javascript", "vbscript", "applet",
                                                             "script", "frame"};
  std::optional<std::pair<std::size_t, std::size_t>> best;
  for (auto w : kWords) {
    auto p = s.find(w);
    if (p != std::string::npos && (!best || p < best->first)) best = {p, p + w.size()};
  }
  if (best) return in.to_raw(best->first, best->second);
  return std::nullopt;
}

std::optional<Match> match_session(std::string_view uri) {
  Inspected in(uri);
  auto p = in.lower.find(";jsessionid=");
  if (p != std::string::npos) return in.to_raw(p, p + 12);
  static const boost::regex login(R"(login\.jsp.*\?.*(userid|password)=)");
  return regex_find(in, login);
}

std::optional<Match> match_sqli(std::string_view uri) {
  Inspected in(uri);
  static const boost::regex apex_or(R"('\)?\s*or\b)");
  static const boost::regex tautology(R"('1'\s*=\s*'1)");
  if (auto m = regex_find(in, apex_or)) return m;
  if (auto m = regex_find(in, tautology)) return m;
  auto q = in.lower.find('?');
  if (q != std::string::npos) {
    auto dash = in.lower.find("--", q);
    auto hash = in.lower.find('#', q);
    auto p = std::min(dash, hash);
    if (p != std::string::npos) return in.to_raw(p, p + (p == dash ? 2 : 1));
  }
  return std::nullopt;
}

std::optional<Match> match_file_exec(std::string_view uri) {
  Inspected in(uri);
  const std::string& s = in.lower;
  auto q = s.find('?');
  if (q == std::string::npos) return std::nullopt;
  static const boost::regex script_file(R"(\.(jsp|xml)\b)");
  std::size_t pos = q + 1;
  while (pos <= s.size()) {
    auto amp = s.find('&', pos);
    std::size_t end = amp == std::string::npos ? s.size() : amp;
    auto eq = s.find('=', pos);
    if (eq != std::string::npos && eq < end) {
      std::size_t vb = eq + 1;
      std::string_view value(s.data() + vb, end - vb);
      bool hit = value.find("../") != std::string_view::npos ||
                 value.find("..\\") != std::string_view::npos || value.starts_with("http://") ||
                 value.starts_with("https://") || value.starts_with("ftp://") ||
                 value.starts_with("//") ||
                 boost::regex_search(value.begin(), value.end(), script_file);
      if (hit && end > vb) return in.to_raw(vb, end);
    }
    if (amp == std::string::npos) break;
    pos = amp + 1;
  }
  return std::nullopt;
}

std::string domain_of(std::string_view s) {
  std::string t = to_lower(trim(s));
  auto scheme = t.find("://");
  if (scheme != std::string::npos) t = t.substr(scheme + 3);
  auto cut = t.find_first_of("/?#");
  if (cut != std::string::npos) t.resize(cut);
  auto at = t.rfind('@');
  if (at != std::string::npos) t = t.substr(at + 1);
  auto colon = t.find(':');
  if (colon != std::string::npos) t.resize(colon);
  return t;
}

void RefererLookup::add(std::string_view domain, std::string ip) {
  table_[domain_of(domain)] = std::move(ip);
}

std::optional<std::string> RefererLookup::resolve(std::string_view url_or_host) const {
  auto it = table_.find(domain_of(url_or_host));
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

RefererLookup RefererLookup::parse_csv(std::string_view text) {
  RefererLookup lookup;
  bool first = true;
  for (auto& line : split(text, '\n')) {
    std::string l = trim(line);
    if (l.empty() || l[0] == '#') continue;
    auto parts = split(l, ',');
    if (parts.size() != 2) throw ConfigError("lookup line is not 'domain,ip': " + l);
    if (first && iequals(trim(parts[0]), "domain")) {
      first = false;
      continue;
    }
    first = false;
    lookup.add(trim(parts[0]), trim(parts[1]));
  }
  return lookup;
}

RefererLookup RefererLookup::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open lookup table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::optional<Match> match_csrf(std::string_view referer, std::string_view target_host,
                                std::string_view method, std::string_view uri,
                                const RefererLookup& lookup, CsrfOutcome* outcome) {
  auto set = [&](CsrfOutcome o) {
    if (outcome) *outcome = o;
  };
  set(CsrfOutcome::kNone);
  std::string ref = trim(referer);
  if (ref.empty() || ref == "-") return std::nullopt;
  const std::string ref_domain = domain_of(ref);
  const std::string target_domain = domain_of(target_host);
  if (ref_domain.empty() || ref_domain == target_domain) return std::nullopt;

  const std::string m = to_lower(method);
  bool state_changing = !(m == "get" || m == "head");
  if (!state_changing) {
    auto q = uri.find('?');
    state_changing = q != std::string_view::npos && uri.find('=', q) != std::string_view::npos;
  }
  if (!state_changing) return std::nullopt;

  auto ref_ip = lookup.resolve(ref_domain);
  auto target_ip = lookup.resolve(target_domain);
  if (!ref_ip || !target_ip) {
    set(CsrfOutcome::kUnresolved);
    return std::nullopt;
  }
  if (*ref_ip == *target_ip) return std::nullopt;
  set(CsrfOutcome::kFinding);
  return Match{0, referer.size()};
}

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::kLow: return "low";
    case Severity::kMedium: return "medium";
    case Severity::kHigh: return "high";
  }
  return "medium";
}

Severity severity_from_string(std::string_view s) {
  if (s == "low") return Severity::kLow;
  if (s == "medium") return Severity::kMedium;
  if (s == "high") return Severity::kHigh;
  throw ConfigError("unknown severity '" + std::string(s) + "'");
}

std::optional<AccessEvent> AccessEvent::from_event(const Event& e) {
  auto get = [&](const char* k) -> std::string {
    auto it = e.fields.find(k);
    return it == e.fields.end() ? std::string() : it->second;
  };
  AccessEvent a;
  a.id = e.id;
  a.timestamp = e.timestamp;
  a.uri = get("uri");
  if (a.uri.empty()) return std::nullopt;
  auto status = parse_number(get("status"));
  if (!status || *status < 100 || *status > 599) return std::nullopt;
  a.status = static_cast<int>(*status);
  a.method = get("method");
  a.client_ip = get("client_ip");
  a.referer = get("referer");
  if (a.referer.empty()) a.referer = "-";
  a.target_host = get("target_host");
  return a;
}

nlohmann::json to_json(const Finding& f) {
  return {{"rule_id", f.rule_id},
          {"event_id", f.event_id},
          {"excerpt", f.excerpt},
          {"severity", std::string(to_string(f.severity))},
          {"owasp", f.owasp},
          {"detected_at", f.detected_at}};
}

namespace {

Finding make_finding(const char* rule, const char* owasp, Severity sev, const AccessEvent& e,
                     std::string_view text, Match m) {
  return Finding{rule, e.id, std::string(text.substr(m.begin, m.end - m.begin)), sev,
                 e.timestamp, owasp};
}

constexpr const char* kOwaspInjection = "A1-Injection";
constexpr const char* kOwaspSession = "A2-Broken Authentication and Session Management";
constexpr const char* kOwaspXss = "A3-Cross-Site Scripting (XSS)";
constexpr const char* kOwaspFileExec = "A3-Malicious File Execution (2007)";
constexpr const char* kOwaspCsrf = "A8-Cross-Site Request Forgery (CSRF)";

}  // namespace

std::optional<Finding> rule_xss(const AccessEvent& e) {
  if (auto m = match_xss(e.uri)) return make_finding("xss", kOwaspXss, Severity::kHigh, e, e.uri, *m);
  return std::nullopt;
}

std::optional<Finding> rule_session(const AccessEvent& e) {
  if (auto m = match_session(e.uri))
    return make_finding("session", kOwaspSession, Severity::kMedium, e, e.uri, *m);
  return std::nullopt;
}

std::optional<Finding> rule_csrf(const AccessEvent& e, const RefererLookup& lookup,
                                 CsrfOutcome* outcome) {
  if (auto m = match_csrf(e.referer, e.target_host, e.method, e.uri, lookup, outcome))
    return make_finding("csrf", kOwaspCsrf, Severity::kMedium, e, e.referer, *m);
  return std::nullopt;
}

std::optional<Finding> rule_sqli(const AccessEvent& e) {
  if (auto m = match_sqli(e.uri))
    return make_finding("sqli", kOwaspInjection, Severity::kHigh, e, e.uri, *m);
  return std::nullopt;
}

std::optional<Finding> rule_file_exec(const AccessEvent& e) {
  if (auto m = match_file_exec(e.uri))
    return make_finding("file_exec", kOwaspFileExec, Severity::kHigh, e, e.uri, *m);
  return std::nullopt;
}

RulePack::RulePack(std::vector<DetectionRule> rules) : rules_(std::move(rules)) {
  std::set<std::string> ids;
  for (auto& r : rules_) {
    if (r.id.empty()) throw ConfigError("detection rule without id");
    if (!ids.insert(r.id).second) throw ConfigError("duplicate rule id '" + r.id + "'");
    try {
      r.compiled = query::parse_expression(r.predicate);
    } catch (const ParseError& e) {
      throw ConfigError("rule '" + r.id + "': " + e.what());
    }
  }
}

RulePack RulePack::builtin() {
  return RulePack({
      {"xss", kOwaspXss, Severity::kHigh, "detect_xss(uri)",
       "Script tags or script-capable keywords in the request uri", nullptr},
      {"session", kOwaspSession, Severity::kMedium, "detect_session(uri)",
       "Session id fixed in the url, or credentials passed to login.jsp in the query string",
       nullptr},
      {"csrf", kOwaspCsrf, Severity::kMedium, "detect_csrf(referer, target_host, method, uri)",
       "State-changing request whose referer resolves to a different site", nullptr},
      {"sqli", kOwaspInjection, Severity::kHigh, "detect_sqli(uri)",
       "Quote followed by OR, tautologies, or comment markers in the query string", nullptr},
      {"file_exec", kOwaspFileExec, Severity::kHigh, "detect_file_exec(uri)",
       "Query parameters naming .jsp/.xml files, path traversal, or remote urls", nullptr},
  });
}

RulePack RulePack::from_json(const nlohmann::json& j) {
  std::vector<DetectionRule> rules;
  const nlohmann::json& arr = j.is_object() ? j.at("rules") : j;
  try {
    for (const auto& r : arr) {
      DetectionRule d;
      d.id = r.at("id").get<std::string>();
      d.owasp = r.value("owasp", "");
      d.severity = severity_from_string(r.value("severity", "medium"));
      d.predicate = r.at("predicate").get<std::string>();
      d.description = r.value("description", "");
      rules.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad rule pack: ") + e.what());
  }
  return RulePack(std::move(rules));
}

RulePack RulePack::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open rule pack " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

nlohmann::json RulePack::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rules_)
    arr.push_back({{"id", r.id},
                   {"owasp", r.owasp},
                   {"severity", std::string(to_string(r.severity))},
                   {"predicate", r.predicate},
                   {"description", r.description}});
  return {{"rules", arr}};
}

query::FieldGetter event_getter(const Event& e) {
  return [&e](const std::string& name) -> Value {
    if (name == "host") return Value(e.host);
    if (name == "source") return Value(e.source);
    if (name == "sourcetype") return Value(e.sourcetype);
    if (name == "_raw") return Value(e.raw);
    if (name == "_time") return Value(static_cast<double>(e.timestamp));
    auto it = e.fields.find(name);
    if (it == e.fields.end()) return {};
    return Value(it->second);
  };
}

namespace {

// Excerpt for a rule: built-in detector calls report their own match range;
// any other predicate reports the whole uri.
std::string excerpt_for(const DetectionRule& rule, const AccessEvent& a,
                        const RefererLookup& lookup) {
  const auto& e = *rule.compiled;
  if (e.kind == query::Expr::Kind::kCall) {
    std::optional<Match> m;
    if (e.name == "detect_xss") m = match_xss(a.uri);
    else if (e.name == "detect_sqli") m = match_sqli(a.uri);
    else if (e.name == "detect_session") m = match_session(a.uri);
    else if (e.name == "detect_file_exec") m = match_file_exec(a.uri);
    else if (e.name == "detect_csrf") {
      m = match_csrf(a.referer, a.target_host, a.method, a.uri, lookup);
      if (m) return a.referer.substr(m->begin, m->end - m->begin);
    }
    if (m) return a.uri.substr(m->begin, m->end - m->begin);
  }
  return a.uri;
}

std::string hour_label(Timestamp ts) {
  using namespace std::chrono;
  auto tp = sys_time<microseconds>(microseconds(ts));
  auto day = floor<days>(tp);
  year_month_day ymd(day);
  auto h = duration_cast<hours>(tp - day).count();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long long>(h));
  return buf;
}

}  // namespace

PackResult run_pack(const std::vector<Event>& events, const RulePack& pack,
                    const RefererLookup& lookup) {
  PackResult out;
  query::EvalContext ctx{&lookup};
  std::map<std::string, std::size_t> per_rule;
  std::map<std::string, std::size_t> per_hour;
  for (const auto& e : events) {
    auto access = AccessEvent::from_event(e);
    if (!access) {
      ++out.skipped;
      continue;
    }
    auto getter = event_getter(e);
    CsrfOutcome outcome = CsrfOutcome::kNone;
    match_csrf(access->referer, access->target_host, access->method, access->uri, lookup,
               &outcome);
    if (outcome == CsrfOutcome::kUnresolved) ++out.unresolved;
    for (const auto& rule : pack.rules()) {
      bool hit = false;
      try {
        hit = query::evaluate(*rule.compiled, getter, ctx).truthy();
      } catch (const query::EvalError&) {
        hit = false;
      }
      if (!hit) continue;
      out.findings.push_back(Finding{rule.id, e.id, excerpt_for(rule, *access, lookup),
                                     rule.severity, e.timestamp, rule.owasp});
      ++per_rule[rule.id];
      ++per_hour[hour_label(e.timestamp)];
    }
  }
  std::stable_sort(out.findings.begin(), out.findings.end(), [](const Finding& a, const Finding& b) {
    return a.event_id != b.event_id ? a.event_id < b.event_id : a.rule_id < b.rule_id;
  });
  out.by_rule.columns = {"rule", "owasp", "severity", "count"};
  for (const auto& r : pack.rules())
    out.by_rule.add_row({Value(r.id), Value(r.owasp), Value(std::string(to_string(r.severity))),
                         Value(static_cast<double>(per_rule[r.id]))});
  out.by_hour.columns = {"hour", "count"};
  for (const auto& [h, n] : per_hour) out.by_hour.add_row({Value(h), Value(static_cast<double>(n))});
  return out;
}

}  // namespace logforge::security
