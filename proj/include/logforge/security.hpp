#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "logforge/event.hpp"
#include "logforge/expr.hpp"
#include "logforge/value.hpp"

namespace logforge::security {

// Byte range [begin, end) inside the text that was inspected (uri or referer),
// in raw (not decoded) coordinates.
struct Match {
  std::size_t begin;
  std::size_t end;
};

// Each matcher URL-decodes its input exactly once before matching.
std::optional<Match> match_xss(std::string_view uri);
std::optional<Match> match_sqli(std::string_view uri);
std::optional<Match> match_session(std::string_view uri);
std::optional<Match> match_file_exec(std::string_view uri);

// Lowercased host of a URL or host[:port] string, without scheme, port or path.
std::string domain_of(std::string_view url_or_host);

// Static domain -> IP table used instead of DNS.
class RefererLookup {
 public:
  void add(std::string_view domain, std::string ip);
  std::optional<std::string> resolve(std::string_view url_or_host) const;
  std::size_t size() const { return table_.size(); }

  static RefererLookup parse_csv(std::string_view text);  // `domain,ip` lines
  static RefererLookup load_csv(const std::filesystem::path& path);

 private:
  std::map<std::string, std::string, std::less<>> table_;
};

enum class CsrfOutcome { kNone, kFinding, kUnresolved };

// Cross-site referer (IP differs from the target's) on a state-changing
// request: non-GET/HEAD method, or a query string with at least one parameter.
// The match range refers to `referer`.
std::optional<Match> match_csrf(std::string_view referer, std::string_view target_host,
                                std::string_view method, std::string_view uri,
                                const RefererLookup& lookup, CsrfOutcome* outcome = nullptr);

enum class Severity { kLow, kMedium, kHigh };
std::string_view to_string(Severity s);
Severity severity_from_string(std::string_view s);

struct AccessEvent {
  EventId id = 0;
  Timestamp timestamp = 0;
  std::string uri;
  std::string method;
  std::string client_ip;
  std::string referer;  // "-" when absent
  int status = 0;
  std::string target_host;

  // Requires a non-empty uri and a status in [100, 599].
  static std::optional<AccessEvent> from_event(const Event& e);
};

struct DetectionRule {
  std::string id;
  std::string owasp;
  Severity severity = Severity::kMedium;
  std::string predicate;
  std::string description;
  query::ExprPtr compiled;  // set by RulePack
};

struct Finding {
  std::string rule_id;
  EventId event_id = 0;
  std::string excerpt;  // substring of the event's uri or referer
  Severity severity = Severity::kMedium;
  Timestamp detected_at = 0;
  std::string owasp;
};

nlohmann::json to_json(const Finding& f);

std::optional<Finding> rule_xss(const AccessEvent& e);
std::optional<Finding> rule_session(const AccessEvent& e);
std::optional<Finding> rule_csrf(const AccessEvent& e, const RefererLookup& lookup,
                                 CsrfOutcome* outcome = nullptr);
std::optional<Finding> rule_sqli(const AccessEvent& e);
std::optional<Finding> rule_file_exec(const AccessEvent& e);

class RulePack {
 public:
  // Validates ids (unique) and compiles predicates; throws ConfigError.
  explicit RulePack(std::vector<DetectionRule> rules);

  static RulePack builtin();
  static RulePack from_json(const nlohmann::json& j);
  static RulePack load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<DetectionRule>& rules() const { return rules_; }

 private:
  std::vector<DetectionRule> rules_;
};

struct PackResult {
  std::vector<Finding> findings;  // ordered by (event id, rule id)
  ResultTable by_rule;            // rule, owasp, severity, count
  ResultTable by_hour;            // hour, count
  std::size_t unresolved = 0;     // csrf checks with an unknown domain
  std::size_t skipped = 0;        // events that are not access events
};

PackResult run_pack(const std::vector<Event>& events, const RulePack& pack,
                    const RefererLookup& lookup);

// Field getter over an event: metadata, _raw, _time, then extracted fields.
query::FieldGetter event_getter(const Event& e);

}  // namespace logforge::security
