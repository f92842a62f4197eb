#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "logforge/event.hpp"
#include "logforge/index_store.hpp"
#include "logforge/ingest.hpp"
#include "logforge/ml.hpp"
#include "logforge/query.hpp"
#include "logforge/value.hpp"

namespace logforge::security {
class RefererLookup;
}

namespace logforge::query {

enum class Density { kDense, kScatter, kRare, kNeedleInHaystack };
std::string_view to_string(Density d);

// ratio = scanned / hits: <= 1e3 Dense, <= 1e6 Scatter, <= 1e9 Rare.
Density classify_density(std::uint64_t hits, std::uint64_t scanned);

struct ProfileComponent {
  std::string name;
  double duration_s = 0;
  std::size_t calls = 0;
  std::size_t input_count = 0;
  std::size_t output_count = 0;
};

// Raw per-component measurements collected while a query runs.
class ExecutionTrace {
 public:
  void record(const std::string& name, double seconds, std::size_t in, std::size_t out,
              std::size_t calls = 1);
  const std::vector<ProfileComponent>& components() const { return components_; }
  const ProfileComponent* find(std::string_view name) const;

  double total_seconds = 0;
  std::size_t hits = 0;
  std::size_t scanned = 0;
  index::ScanStats scan;
  std::size_t eval_errors = 0;

 private:
  std::vector<ProfileComponent> components_;  // first-recorded order
};

struct SearchProfile {
  double total_seconds = 0;
  std::vector<ProfileComponent> components;
  std::size_t hits = 0;
  std::size_t scanned = 0;
  Density density = Density::kNeedleInHaystack;
  std::size_t decompressed_segments = 0;
  std::size_t bloom_skips = 0;
  std::size_t eval_errors = 0;

  const ProfileComponent* find(std::string_view name) const;
};

SearchProfile profile(const Query& q, const ExecutionTrace& trace);

struct TransactionGroup {
  std::string key;
  std::vector<Event> events;  // time ordered
  bool complete = false;
  std::int64_t duration_us = 0;
};

// Groups time-ordered events by `options.field`. A group closes on an
// endswith match, when maxpause is exceeded, or at stream end; a startswith
// match on an open group starts a new one.
std::vector<TransactionGroup> run_transaction(const std::vector<Event>& events,
                                              const TransactionOptions& options);

struct Pause {
  Timestamp start = 0;
  std::int64_t gap_us = 0;
};
std::vector<Pause> pauses(const std::vector<Timestamp>& times, std::int64_t threshold_us);

struct HistogramBin {
  std::int64_t lower_us = 0;  // [lower, lower + width)
  std::size_t count = 0;
};
std::vector<HistogramBin> interarrival_histogram(const std::vector<Timestamp>& times,
                                                 std::int64_t bin_us);

struct ExecContext {
  std::vector<index::IndexHandle*> indexes;  // searched when no index= term is given
  const ingest::Extractor* extractor = nullptr;
  index::TimeRange range;
  index::ScanOptions scan;
  ml::ModelStore* models = nullptr;
  const security::RefererLookup* lookup = nullptr;
};

struct ExecResult {
  ResultTable table;
  SearchProfile profile;
};

ExecResult execute(const Query& q, const ExecContext& ctx);

// Table transforms for every stage but the leading search; exposed so
// callers holding an in-memory table can reuse the pipeline.
void apply_stage(const Stage& st, ResultTable& table, const ExecContext& ctx, ExecutionTrace& trace);

// Builds the canonical event table: _time, _raw, host, source, sourcetype,
// index, then extracted fields in name order.
ResultTable events_to_table(const std::vector<Event>& events,
                            const std::vector<std::string>& index_names = {});

nlohmann::json to_json(const ResultTable& t);
nlohmann::json to_json(const SearchProfile& p);

}  // namespace logforge::query
