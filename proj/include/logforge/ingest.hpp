#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "logforge/event.hpp"

namespace logforge::ingest {

inline constexpr std::size_t kBlockSize = 65536;

struct SourceMeta {
  std::string host;
  std::string source;
  std::string sourcetype;
};

struct RawBlock {
  std::string bytes;
  SourceMeta meta;
};

// Splits a stream into blocks of at most kBlockSize bytes. A block never ends
// inside a UTF-8 sequence; the partial sequence is carried into the next block.
std::vector<RawBlock> read_blocks(std::istream& in, const SourceMeta& meta);
std::vector<RawBlock> read_file_blocks(const std::filesystem::path& path,
                                       const SourceMeta& meta);

// Length of the UTF-8 tail of `bytes` that must be held back so the block ends
// on a code-point boundary.
std::size_t utf8_carry(std::string_view bytes);

// Replaces invalid UTF-8 sequences with U+FFFD.
std::string sanitize_utf8(std::string_view in);

enum class BreakMode { kLine, kTimestampPrefix, kRegexBoundary };

struct BreakRule {
  std::string sourcetype;
  BreakMode mode = BreakMode::kTimestampPrefix;
  std::string boundary_pattern;
};

// Compiled form of a BreakRule. Construction throws ConfigError on a bad
// boundary pattern.
class EventBreaker {
 public:
  explicit EventBreaker(BreakRule rule);
  ~EventBreaker();
  EventBreaker(EventBreaker&&) noexcept;
  EventBreaker& operator=(EventBreaker&&) noexcept;

  bool starts_event(std::string_view line) const;
  const BreakRule& rule() const { return rule_; }

 private:
  struct Impl;
  BreakRule rule_;
  std::unique_ptr<Impl> impl_;
};

// Byte span [begin, end) of one event inside a text buffer; end excludes the
// newline that separates it from the next event.
struct EventSpan {
  std::size_t begin;
  std::size_t end;
};

std::vector<EventSpan> break_spans(std::string_view text, const EventBreaker& breaker);

std::vector<Event> break_events(const std::vector<RawBlock>& blocks, const BreakRule& rule);
std::vector<Event> break_events(std::string_view text, const SourceMeta& meta,
                                const EventBreaker& breaker);

// Parses the first bracketed timestamp. Accepts `[YYYY-MM-DD HH:MM:SS,fff]`
// (3 to 6 fraction digits) and the access-log form `[DD/Mon/YYYY:HH:MM:SS +ZZZZ]`.
// Returns nullopt when nothing parses. An exactly-epoch result maps to 1.
std::optional<Timestamp> parse_timestamp(std::string_view raw);

struct TimestampStats {
  std::map<std::string, std::size_t> unparsed_by_source;
  std::size_t unparsed_total = 0;
};

// Sets event timestamps in order. Unparsed events inherit the previous event's
// timestamp (or stay 0) and are counted per source.
void assign_timestamps(std::vector<Event>& events, TimestampStats& stats);

enum class KvMode { kAuto, kNone };
enum class ExtractionKind { kKvAuto, kRegex };

struct ExtractionRule {
  std::string sourcetype;
  ExtractionKind kind = ExtractionKind::kKvAuto;
  std::string pattern;
  KvMode kv_mode = KvMode::kAuto;
};

// Scans `key=value` tokens; values may be double-quoted.
std::vector<std::pair<std::string, std::string>> scan_kv(std::string_view raw);

bool is_metadata_field(std::string_view name);

// Compiled extraction rules, grouped by sourcetype.
class Extractor {
 public:
  Extractor();
  explicit Extractor(const std::vector<ExtractionRule>& rules);
  ~Extractor();
  Extractor(Extractor&&) noexcept;
  Extractor& operator=(Extractor&&) noexcept;
  Extractor(const Extractor&) = delete;
  Extractor& operator=(const Extractor&) = delete;

  bool kv_enabled(std::string_view sourcetype) const;
  bool has_regex_rules(std::string_view sourcetype) const;

  // Regex rules then kv-auto; first writer wins.
  void extract(Event& e) const;
  void extract_regex(Event& e) const;
  void extract_kv(Event& e) const;

  void set_kv_mode(const std::string& sourcetype, KvMode mode);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

void extract_fields(Event& e, const std::vector<ExtractionRule>& rules);

// Rules used for the two shipped sourcetypes ("applog", "accesslog").
std::vector<BreakRule> default_break_rules();
std::vector<ExtractionRule> default_extraction_rules();
BreakRule break_rule_for(const std::vector<BreakRule>& rules, std::string_view sourcetype);

// Loads {"break": [...], "extract": [...]} rules from JSON or TOML.
struct RuleSet {
  std::vector<BreakRule> breaking;
  std::vector<ExtractionRule> extraction;
};
RuleSet load_rules(const std::filesystem::path& path);

// "accesslog" when the file name mentions access, else "applog".
std::string infer_sourcetype(const std::filesystem::path& path);

// Convenience: blocks -> break -> timestamp -> extract for one file.
std::vector<Event> ingest_file(const std::filesystem::path& path, const SourceMeta& meta,
                               const RuleSet& rules, TimestampStats* stats = nullptr);

}  // namespace logforge::ingest
