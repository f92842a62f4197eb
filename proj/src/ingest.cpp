#include "logforge/ingest.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <boost/regex.hpp>
#include <nlohmann/json.hpp>

#include "logforge/config_file.hpp"
#include "logforge/error.hpp"
#include "logforge/strings.hpp"

namespace logforge::ingest {

std::size_t utf8_carry(std::string_view bytes) {
  // Walk back over at most 3 continuation bytes looking for a lead byte.
  const std::size_t n = bytes.size();
  for (std::size_t back = 1; back <= 4 && back <= n; ++back) {
    auto c = static_cast<unsigned char>(bytes[n - back]);
    if ((c & 0xC0) == 0x80) continue;  // continuation
    std::size_t need = 1;
    if ((c & 0xE0) == 0xC0) need = 2;
    else if ((c & 0xF0) == 0xE0) need = 3;
    else if ((c & 0xF8) == 0xF0) need = 4;
    return need > back ? back : 0;
  }
  return 0;
}

std::vector<RawBlock> read_blocks(std::istream& in, const SourceMeta& meta) {
  std::vector<RawBlock> blocks;
  std::string carry;
  std::array<char, kBlockSize> buf{};
  while (true) {
    const std::size_t want = kBlockSize - carry.size();
    in.read(buf.data(), static_cast<std::streamsize>(want));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (in.bad()) throw IngestError(meta.source, "read failure");
    if (got == 0) break;
    std::string bytes = std::move(carry);
    carry.clear();
    bytes.append(buf.data(), got);
    const bool at_end = in.eof();
    if (!at_end) {
      std::size_t hold = utf8_carry(bytes);
      // A block made only of a dangling sequence is emitted as is.
      if (hold > 0 && hold < bytes.size()) {
        carry = bytes.substr(bytes.size() - hold);
        bytes.resize(bytes.size() - hold);
      }
    }
    blocks.push_back(RawBlock{std::move(bytes), meta});
    if (at_end) break;
  }
  if (!carry.empty()) blocks.push_back(RawBlock{std::move(carry), meta});
  return blocks;
}

std::vector<RawBlock> read_file_blocks(const std::filesystem::path& path,
                                       const SourceMeta& meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path.string(), "cannot open for reading");
  return read_blocks(in, meta);
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

int read_int(std::string_view s, std::size_t pos, std::size_t len) {
  int v = 0;
  for (std::size_t i = 0; i < len; ++i) v = v * 10 + (s[pos + i] - '0');
  return v;
}

bool all_digits(std::string_view s, std::size_t pos, std::size_t len) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = 0; i < len; ++i)
    if (!is_digit(s[pos + i])) return false;
  return true;
}

std::optional<Timestamp> civil_to_micros(int y, int mo, int d, int h, int mi, int s,
                                         std::int64_t micros) {
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) return std::nullopt;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  std::int64_t secs = static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
  std::int64_t v = secs * 1'000'000 + micros;
  if (v < 0) return std::nullopt;
  return v;
}

// `[YYYY-MM-DD HH:MM:SS,f{3,6}]` starting at s[pos] == '['. Sets `end` past ']'.
std::optional<Timestamp> match_iso_bracket(std::string_view s, std::size_t pos,
                                           std::size_t* end = nullptr) {
  if (pos >= s.size() || s[pos] != '[') return std::nullopt;
  std::size_t p = pos + 1;
  if (!all_digits(s, p, 4) || p + 19 >= s.size()) return std::nullopt;
  if (s[p + 4] != '-' || !all_digits(s, p + 5, 2) || s[p + 7] != '-' ||
      !all_digits(s, p + 8, 2) || s[p + 10] != ' ' || !all_digits(s, p + 11, 2) ||
      s[p + 13] != ':' || !all_digits(s, p + 14, 2) || s[p + 16] != ':' ||
      !all_digits(s, p + 17, 2) || s[p + 19] != ',')
    return std::nullopt;
  std::size_t f = p + 20;
  std::size_t digits = 0;
  while (f + digits < s.size() && is_digit(s[f + digits])) ++digits;
  if (digits < 3 || digits > 6 || f + digits >= s.size() || s[f + digits] != ']')
    return std::nullopt;
  std::int64_t frac = read_int(s, f, digits);
  for (std::size_t i = digits; i < 6; ++i) frac *= 10;
  if (end) *end = f + digits + 1;
  return civil_to_micros(read_int(s, p, 4), read_int(s, p + 5, 2), read_int(s, p + 8, 2),
                         read_int(s, p + 11, 2), read_int(s, p + 14, 2),
                         read_int(s, p + 17, 2), frac);
}

// `[DD/Mon/YYYY:HH:MM:SS +ZZZZ]`
std::optional<Timestamp> match_clf_bracket(std::string_view s, std::size_t pos) {
  static constexpr std::array<std::string_view, 12> kMonths = {
      "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  if (pos + 28 > s.size() || s[pos] != '[') return std::nullopt;
  std::size_t p = pos + 1;
  if (!all_digits(s, p, 2) || s[p + 2] != '/' || s[p + 6] != '/' || !all_digits(s, p + 7, 4) ||
      s[p + 11] != ':' || !all_digits(s, p + 12, 2) || s[p + 14] != ':' ||
      !all_digits(s, p + 15, 2) || s[p + 17] != ':' || !all_digits(s, p + 18, 2) ||
      s[p + 20] != ' ' || (s[p + 21] != '+' && s[p + 21] != '-') || !all_digits(s, p + 22, 4) ||
      s[p + 26] != ']')
    return std::nullopt;
  auto mon = std::find(kMonths.begin(), kMonths.end(), s.substr(p + 3, 3));
  if (mon == kMonths.end()) return std::nullopt;
  auto base = civil_to_micros(read_int(s, p + 7, 4), static_cast<int>(mon - kMonths.begin()) + 1,
                              read_int(s, p, 2), read_int(s, p + 12, 2), read_int(s, p + 15, 2),
                              read_int(s, p + 18, 2), 0);
  if (!base) return std::nullopt;
  std::int64_t off = (read_int(s, p + 22, 2) * 3600 + read_int(s, p + 24, 2) * 60) * 1'000'000LL;
  std::int64_t v = s[p + 21] == '+' ? *base - off : *base + off;
  if (v < 0) return std::nullopt;
  return v;
}

// Timestamp-prefix line start: optional whitespace, optional integer token
// (editor line numbers), then the bracketed ISO timestamp.
bool is_timestamp_prefixed(std::string_view line) {
  std::size_t p = 0;
  while (p < line.size() && (line[p] == ' ' || line[p] == '\t')) ++p;
  if (p < line.size() && is_digit(line[p])) {
    std::size_t q = p;
    while (q < line.size() && is_digit(line[q])) ++q;
    std::size_t r = q;
    while (r < line.size() && (line[r] == ' ' || line[r] == '\t')) ++r;
    if (r > q) p = r;
  }
  return match_iso_bracket(line, p).has_value();
}

}  // namespace

std::string sanitize_utf8(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    auto c = static_cast<unsigned char>(in[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if ((c & 0xE0) == 0xC0 && c >= 0xC2) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0 && c <= 0xF4) len = 4;
    bool ok = len > 0 && i + len <= in.size();
    for (std::size_t k = 1; ok && k < len; ++k)
      ok = (static_cast<unsigned char>(in[i + k]) & 0xC0) == 0x80;
    if (ok) {
      out.append(in.substr(i, len));
      i += len;
    } else {
      out.append("\xEF\xBF\xBD");
      ++i;
    }
  }
  return out;
}


std::optional<Timestamp> parse_timestamp(std::string_view raw) {
  for (std::size_t pos = raw.find('['); pos != std::string_view::npos;
       pos = raw.find('[', pos + 1)) {
    auto ts = match_iso_bracket(raw, pos);
    if (!ts) ts = match_clf_bracket(raw, pos);
    if (ts) return *ts == 0 ? 1 : *ts;
  }
  return std::nullopt;
}

void assign_timestamps(std::vector<Event>& events, TimestampStats& stats) {
  Timestamp previous = kUnparsedTime;
  for (auto& e : events) {
    if (auto ts = parse_timestamp(e.raw)) {
      e.timestamp = *ts;
      previous = *ts;
    } else {
      e.timestamp = previous;
      ++stats.unparsed_by_source[e.source];
      ++stats.unparsed_total;
    }
  }
}

struct EventBreaker::Impl {
  boost::regex boundary;
};

EventBreaker::EventBreaker(BreakRule rule) : rule_(std::move(rule)), impl_(std::make_unique<Impl>()) {
  if (rule_.mode == BreakMode::kRegexBoundary) {
    try {
      impl_->boundary = boost::regex(rule_.boundary_pattern);
    } catch (const boost::regex_error& e) {
      throw ConfigError("break rule for '" + rule_.sourcetype + "': bad boundary pattern: " +
                        e.what());
    }
  }
}
EventBreaker::~EventBreaker() = default;
EventBreaker::EventBreaker(EventBreaker&&) noexcept = default;
EventBreaker& EventBreaker::operator=(EventBreaker&&) noexcept = default;

bool EventBreaker::starts_event(std::string_view line) const {
  switch (rule_.mode) {
    case BreakMode::kLine:
      return !trim(line).empty();
    case BreakMode::kTimestampPrefix:
      return is_timestamp_prefixed(line);
    case BreakMode::kRegexBoundary:
      return boost::regex_search(line.begin(), line.end(), impl_->boundary);
  }
  return false;
}

std::vector<EventSpan> break_spans(std::string_view text, const EventBreaker& breaker) {
  std::vector<EventSpan> spans;
  // A trailing newline terminates the last line rather than opening an empty one.
  std::size_t limit = text.size();
  if (limit > 0 && text[limit - 1] == '\n') --limit;
  if (text.empty()) return spans;
  std::size_t line_start = 0;
  bool open = false;
  while (true) {
    std::size_t nl = text.find('\n', line_start);
    std::size_t line_end = (nl == std::string_view::npos || nl > limit) ? limit : nl;
    std::string_view line = text.substr(line_start, line_end - line_start);
    if (!open || breaker.starts_event(line)) {
      spans.push_back(EventSpan{line_start, line_end});
      open = true;
    } else {
      spans.back().end = line_end;
    }
    if (line_end >= limit) break;
    line_start = line_end + 1;
  }
  // Whitespace-only residue carries no event.
  std::erase_if(spans, [&](const EventSpan& s) {
    return trim(text.substr(s.begin, s.end - s.begin)).empty();
  });
  return spans;
}

std::vector<Event> break_events(std::string_view text, const SourceMeta& meta,
                                const EventBreaker& breaker) {
  std::vector<Event> events;
  for (const auto& span : break_spans(text, breaker)) {
    Event e;
    e.raw = std::string(text.substr(span.begin, span.end - span.begin));
    e.host = meta.host;
    e.source = meta.source;
    e.sourcetype = meta.sourcetype;
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<Event> break_events(const std::vector<RawBlock>& blocks, const BreakRule& rule) {
  if (blocks.empty()) return {};
  std::string text;
  for (const auto& b : blocks) text += b.bytes;
  EventBreaker breaker(rule);
  return break_events(sanitize_utf8(text), blocks.front().meta, breaker);
}

std::vector<std::pair<std::string, std::string>> scan_kv(std::string_view raw) {
  std::vector<std::pair<std::string, std::string>> out;
  auto ident_start = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
  auto ident_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  std::size_t i = 0;
  const std::size_t n = raw.size();
  while (i < n) {
    if (!ident_start(raw[i]) || (i > 0 && ident_char(raw[i - 1]))) {
      ++i;
      continue;
    }
    std::size_t k = i;
    while (k < n && ident_char(raw[k])) ++k;
    if (k >= n || raw[k] != '=') {
      i = k;
      continue;
    }
    std::string key(raw.substr(i, k - i));
    std::size_t v = k + 1;
    std::string value;
    if (v < n && raw[v] == '"') {
      std::size_t close = raw.find('"', v + 1);
      if (close == std::string_view::npos) {
        i = v + 1;
        continue;
      }
      value = std::string(raw.substr(v + 1, close - v - 1));
      i = close + 1;
    } else {
      std::size_t e = v;
      while (e < n && !std::isspace(static_cast<unsigned char>(raw[e]))) ++e;
      value = std::string(raw.substr(v, e - v));
      i = e;
    }
    if (!value.empty()) out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

bool is_metadata_field(std::string_view name) {
  return name == "host" || name == "source" || name == "sourcetype";
}

namespace {

void put_field(Event& e, std::string name, std::string value) {
  if (is_metadata_field(name)) name += "_1";
  e.fields.try_emplace(std::move(name), std::move(value));
}

bool valid_field_name(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

// Names of `(?<name>` / `(?P<name>` groups, in pattern order.
std::vector<std::string> named_groups(std::string_view pattern) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i + 3 < pattern.size(); ++i) {
    if (pattern[i] == '\\') {
      ++i;
      continue;
    }
    if (pattern[i] != '(' || pattern[i + 1] != '?') continue;
    std::size_t p = i + 2;
    if (pattern[p] == 'P') ++p;
    if (p >= pattern.size() || pattern[p] != '<') continue;
    if (p + 1 < pattern.size() && (pattern[p + 1] == '=' || pattern[p + 1] == '!')) continue;
    auto close = pattern.find('>', p);
    if (close == std::string_view::npos) continue;
    names.emplace_back(pattern.substr(p + 1, close - p - 1));
  }
  return names;
}

}  // namespace

struct Extractor::Impl {
  struct Compiled {
    boost::regex re;
    std::vector<std::string> names;
  };
  std::unordered_map<std::string, std::vector<Compiled>> regex_rules;
  std::set<std::string, std::less<>> kv_disabled;
};

Extractor::Extractor() : impl_(std::make_unique<Impl>()) {}

Extractor::Extractor(const std::vector<ExtractionRule>& rules) : Extractor() {
  for (const auto& r : rules) {
    if (r.kv_mode == KvMode::kNone) impl_->kv_disabled.insert(r.sourcetype);
    if (r.kind != ExtractionKind::kRegex) continue;
    Impl::Compiled c;
    try {
      // Perl syntax with `.` not crossing newlines.
      c.re = boost::regex(r.pattern, boost::regex::perl | boost::regex::no_mod_s);
    } catch (const boost::regex_error& e) {
      throw ConfigError("extraction rule for '" + r.sourcetype + "': " + e.what());
    }
    c.names = named_groups(r.pattern);
    if (c.names.empty())
      throw ConfigError("extraction rule for '" + r.sourcetype + "' has no named groups");
    for (const auto& name : c.names)
      if (!valid_field_name(name))
        throw ConfigError("extraction rule for '" + r.sourcetype + "': invalid field name '" +
                          name + "'");
    impl_->regex_rules[r.sourcetype].push_back(std::move(c));
  }
}

Extractor::~Extractor() = default;
Extractor::Extractor(Extractor&&) noexcept = default;
Extractor& Extractor::operator=(Extractor&&) noexcept = default;

bool Extractor::kv_enabled(std::string_view sourcetype) const {
  return !impl_->kv_disabled.contains(sourcetype);
}

bool Extractor::has_regex_rules(std::string_view sourcetype) const {
  return impl_->regex_rules.contains(std::string(sourcetype));
}

void Extractor::set_kv_mode(const std::string& sourcetype, KvMode mode) {
  if (mode == KvMode::kNone) impl_->kv_disabled.insert(sourcetype);
  else impl_->kv_disabled.erase(sourcetype);
}

void Extractor::extract_regex(Event& e) const {
  auto it = impl_->regex_rules.find(e.sourcetype);
  if (it == impl_->regex_rules.end()) return;
  for (const auto& rule : it->second) {
    boost::smatch m;
    if (!boost::regex_search(e.raw, m, rule.re)) continue;
    for (const auto& name : rule.names) {
      const auto& sub = m[name];
      if (sub.matched) put_field(e, name, sub.str());
    }
  }
}

void Extractor::extract_kv(Event& e) const {
  if (!kv_enabled(e.sourcetype)) return;
  for (auto& [k, v] : scan_kv(e.raw)) put_field(e, std::move(k), std::move(v));
}

void Extractor::extract(Event& e) const {
  extract_regex(e);
  extract_kv(e);
}

void extract_fields(Event& e, const std::vector<ExtractionRule>& rules) {
  Extractor(rules).extract(e);
}

std::vector<BreakRule> default_break_rules() {
  return {
      BreakRule{"applog", BreakMode::kTimestampPrefix, ""},
      BreakRule{"accesslog", BreakMode::kLine, ""},
  };
}

std::vector<ExtractionRule> default_extraction_rules() {
  return {
      ExtractionRule{"applog", ExtractionKind::kRegex,
                     R"(^(?:\d+\s+)?\[[^\]]+\] ?(?<level>[A-Z]+) \((?<component>[^)]*?)\s*\) ?(?<message>[^\n]*))",
                     KvMode::kAuto},
      ExtractionRule{"accesslog", ExtractionKind::kRegex,
                     R"re(^(?<target_host>\S+) (?<client_ip>\S+) \S+ (?<user>\S+) \[[^\]]+\] "(?<method>[A-Z]+) (?<uri>.*) HTTP/[0-9.]+" (?<status>\d{3}) (?<bytes>\d+|-) "(?<referer>[^"]*)" "(?<useragent>[^"]*)")re",
                     KvMode::kNone},
  };
}

BreakRule break_rule_for(const std::vector<BreakRule>& rules, std::string_view sourcetype) {
  for (const auto& r : rules)
    if (r.sourcetype == sourcetype) return r;
  return BreakRule{std::string(sourcetype), BreakMode::kTimestampPrefix, ""};
}

namespace {

BreakMode parse_break_mode(const std::string& s) {
  if (s == "line") return BreakMode::kLine;
  if (s == "timestamp-prefix") return BreakMode::kTimestampPrefix;
  if (s == "regex-boundary") return BreakMode::kRegexBoundary;
  throw ConfigError("unknown break mode '" + s + "'");
}

RuleSet rules_from_json(const nlohmann::json& j) {
  RuleSet rs;
  std::set<std::string> seen;
  for (const auto& b : j.value("break", nlohmann::json::array())) {
    BreakRule r{b.at("sourcetype").get<std::string>(),
                parse_break_mode(b.value("mode", "timestamp-prefix")),
                b.value("boundary_pattern", "")};
    if (!seen.insert(r.sourcetype).second)
      throw ConfigError("duplicate break rule for '" + r.sourcetype + "'");
    EventBreaker check(r);
    rs.breaking.push_back(std::move(r));
  }
  for (const auto& x : j.value("extract", nlohmann::json::array())) {
    ExtractionRule r;
    r.sourcetype = x.at("sourcetype").get<std::string>();
    auto kind = x.value("kind", "kv-auto");
    if (kind == "kv-auto") r.kind = ExtractionKind::kKvAuto;
    else if (kind == "regex-named-groups" || kind == "regex") r.kind = ExtractionKind::kRegex;
    else throw ConfigError("unknown extraction kind '" + kind + "'");
    r.pattern = x.value("pattern", "");
    auto mode = x.value("kv_mode", "auto");
    if (mode == "auto") r.kv_mode = KvMode::kAuto;
    else if (mode == "none") r.kv_mode = KvMode::kNone;
    else throw ConfigError("unknown kv_mode '" + mode + "'");
    rs.extraction.push_back(std::move(r));
  }
  Extractor check(rs.extraction);
  return rs;
}

}  // namespace

RuleSet load_rules(const std::filesystem::path& path) {
  auto doc = read_config_document(path);
  try {
    return rules_from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string infer_sourcetype(const std::filesystem::path& path) {
  return icontains(path.filename().string(), "access") ? "accesslog" : "applog";
}

std::vector<Event> ingest_file(const std::filesystem::path& path, const SourceMeta& meta,
                               const RuleSet& rules, TimestampStats* stats) {
  auto blocks = read_file_blocks(path, meta);
  auto events = break_events(blocks, break_rule_for(rules.breaking, meta.sourcetype));
  TimestampStats local;
  assign_timestamps(events, stats ? *stats : local);
  Extractor extractor(rules.extraction);
  for (auto& e : events) extractor.extract(e);
  return events;
}

}  // namespace logforge::ingest
