#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "logforge/expr.hpp"

namespace logforge::query {

enum class StageKind {
  kSearch,
  kWhere,
  kEval,
  kStats,
  kTop,
  kTimechart,
  kTransaction,
  kTable,
  kSort,
  kHead,
  kFields,
  kAnomalyDetection,
  kFit,
  kApply,
  kClassificationStatistics,
  kConfusionMatrix,
  kPauses,
  kInterarrival,
};

std::string_view to_string(StageKind k);

struct SearchTerm {
  enum class Kind { kWord, kPhrase, kField, kIndex };
  Kind kind = Kind::kWord;
  std::string field;  // kField / kIndex
  std::string value;  // word, phrase text or field value (may hold '*')
  bool negated = false;
  bool not_equal = false;  // field!=value
  std::size_t offset = 0;

  bool has_wildcard() const { return value.find('*') != std::string::npos; }
};

struct Aggregation {
  std::string func;   // count, sum, avg, max, min, dc
  std::string field;  // empty for bare count
  std::string alias;  // output column name
};

struct SortKey {
  std::string field;
  bool descending = false;
};

struct TransactionOptions {
  std::string field;
  std::optional<std::string> starts_with;
  std::optional<std::string> ends_with;
  std::optional<std::int64_t> max_pause_us;
};

struct Stage {
  StageKind kind = StageKind::kSearch;
  std::size_t offset = 1;  // 1-based start in the query text
  std::string text;

  std::vector<SearchTerm> terms;                               // search
  ExprPtr predicate;                                           // where
  std::vector<std::pair<std::string, ExprPtr>> assignments;    // eval
  std::vector<Aggregation> aggregations;                       // stats, timechart
  std::vector<std::string> by;                                 // stats
  std::vector<std::string> fields;                             // top, table, fields, ml stages
  std::vector<SortKey> sort_keys;                              // sort
  std::size_t limit = 0;                                       // top, head, sort (0 = none)
  bool remove = false;                                         // fields -
  std::int64_t span_us = 0;                                    // timechart, pauses, interarrival
  TransactionOptions transaction;
  // fit / apply / anomalydetection
  std::string algorithm;
  std::string response;
  std::string model_name;
  std::map<std::string, std::string> params;
};

struct Query {
  std::string source_text;
  std::vector<Stage> stages;
};

// pipeline := search-terms ('|' stage)*. Throws ParseError with a 1-based
// offset into `text` and the expected-token set.
Query parse(std::string_view text);

// Splits on '|' outside quotes; each piece with its 1-based offset.
std::vector<std::pair<std::string, std::size_t>> split_pipeline(std::string_view text);

// Search-term matching shared by the executor and verification paths.
bool match_word(std::string_view raw, const SearchTerm& t);
bool match_field_value(const std::string* value, const SearchTerm& t);

}  // namespace logforge::query
