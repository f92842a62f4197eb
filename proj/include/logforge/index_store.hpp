#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "logforge/bloom.hpp"
#include "logforge/event.hpp"

namespace logforge::index {

enum class BucketState { kHot, kWarm, kCold, kFrozen, kThawed };

std::string_view to_string(BucketState s);
BucketState bucket_state_from_string(std::string_view s);

// Lowercased alphanumeric runs of `raw`, deduplicated, in first-seen order.
// Bytes >= 0x80 count as alphanumeric so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view raw);

// Index terms for an event: raw tokens plus lowercased `key=value` composites
// for every extracted field.
std::vector<std::string> event_terms(const Event& e);

struct TimeRange {
  Timestamp earliest = std::numeric_limits<Timestamp>::min();
  Timestamp latest = std::numeric_limits<Timestamp>::max();

  bool contains(Timestamp t) const { return t >= earliest && t <= latest; }
  bool overlaps(Timestamp lo, Timestamp hi) const { return lo <= latest && hi >= earliest; }
};

struct RollPolicy {
  std::size_t max_bytes = 10 * 1024 * 1024;  // per hot bucket, raw bytes
  std::size_t max_warm = 300;
  std::size_t max_cold = std::numeric_limits<std::size_t>::max();
  std::size_t segment_bytes = 1024 * 1024;   // uncompressed rawdata per segment
  std::size_t expected_terms = 100000;       // provisional hot-bucket bloom sizing
  std::size_t max_total_bytes = 0;           // 0 = unlimited
};

struct Location {
  std::uint32_t segment;
  std::uint32_t offset;
};

struct SegmentInfo {
  std::string compressed;
  std::size_t raw_len = 0;
};

class Bucket {
 public:
  Bucket(std::uint64_t id, const RollPolicy& policy);

  std::uint64_t id() const { return id_; }
  BucketState state() const { return state_; }
  Timestamp earliest() const { return earliest_; }
  Timestamp latest() const { return latest_; }
  std::size_t event_count() const { return event_count_; }
  std::size_t bytes() const { return bytes_; }
  std::size_t max_bytes() const { return max_bytes_; }
  const BloomFilter& bloom() const { return bloom_; }
  std::size_t segment_count() const { return segments_.size() + (open_.empty() ? 0 : 1); }
  const std::unordered_map<std::string, std::vector<EventId>>& term_index() const {
    return terms_;
  }

  bool has_term(std::string_view term) const;

 private:
  friend class IndexHandle;

  void append(const Event& e, const std::vector<std::string>& terms);
  void seal_open_segment();
  void rebuild_bloom();
  std::string read_segment(std::uint32_t seg) const;  // decompressed
  Event decode_at(const std::string& segment_bytes, std::uint32_t offset) const;

  std::uint64_t id_;
  BucketState state_ = BucketState::kHot;
  Timestamp earliest_ = 0;
  Timestamp latest_ = 0;
  std::size_t event_count_ = 0;
  std::size_t bytes_ = 0;
  std::size_t max_bytes_;
  std::size_t segment_limit_;
  std::unordered_map<std::string, std::vector<EventId>> terms_;
  BloomFilter bloom_;
  std::vector<SegmentInfo> segments_;
  std::string open_;  // uncompressed open segment (hot only)
  std::unordered_map<EventId, Location> locator_;
  bool dirty_ = true;
};

struct Transition {
  std::uint64_t bucket_id;
  BucketState from;
  BucketState to;
  bool ok = true;
  std::string error;
};

struct ScanStats {
  std::size_t scanned = 0;                // events in buckets inside the time window
  std::size_t decompressed_segments = 0;
  std::size_t bloom_skips = 0;
  std::size_t time_skips = 0;
  std::size_t buckets_visited = 0;
};

struct ScanOptions {
  bool use_bloom = true;
};

struct CandidateResult {
  std::vector<Event> events;  // ascending id, fields empty
  ScanStats stats;
  double index_seconds = 0;    // bloom + term-index lookups
  double rawdata_seconds = 0;  // decompression + record decoding
};

// One named index: an ordered list of buckets with a single hot bucket.
// One writer and any number of concurrent readers.
class IndexHandle {
 public:
  IndexHandle(std::string name, RollPolicy policy = {},
              std::optional<std::filesystem::path> data_dir = std::nullopt);

  // Loads buckets persisted under <data_dir>/<name>/, creating the directory
  // when absent.
  static std::unique_ptr<IndexHandle> open(const std::filesystem::path& data_dir,
                                           const std::string& name, RollPolicy policy = {});

  IndexHandle(const IndexHandle&) = delete;
  IndexHandle& operator=(const IndexHandle&) = delete;

  const std::string& name() const { return name_; }
  const RollPolicy& policy() const { return policy_; }

  // Assigns and returns the event id. Rolls buckets when the hot bucket fills.
  EventId index_event(const Event& e);
  // Seals a non-empty hot bucket regardless of size, then applies the warm
  // and cold quotas.
  std::vector<Transition> roll_buckets();

  // Re-registers a frozen bucket directory produced by roll_buckets.
  std::uint64_t thaw(const std::filesystem::path& archive);

  // Events containing every term (empty or {"*"} = all) within the range.
  CandidateResult candidate_events(const std::vector<std::string>& terms, const TimeRange& range,
                                   ScanOptions options = {}) const;

  std::optional<Event> lookup(EventId id) const;

  // Writes dirty buckets to disk. No-op without a data directory.
  void flush();

  std::size_t event_count() const;
  std::size_t bucket_count() const;
  std::size_t count_in_state(BucketState s) const;
  std::vector<std::uint64_t> frozen_ids() const;
  std::optional<std::filesystem::path> archive_dir() const;

  struct BucketSummary {
    std::uint64_t id;
    BucketState state;
    Timestamp earliest;
    Timestamp latest;
    std::size_t event_count;
    std::size_t bytes;
  };
  std::vector<BucketSummary> buckets() const;

 private:
  std::vector<Transition> roll_locked(bool force);
  Bucket& hot_bucket();
  void open_new_hot();
  std::filesystem::path index_dir() const;
  void write_bucket(const Bucket& b, const std::filesystem::path& dir) const;
  std::unique_ptr<Bucket> read_bucket(const std::filesystem::path& dir, std::uint64_t id) const;
  void remove_bucket_files(std::uint64_t id) const;

  std::string name_;
  RollPolicy policy_;
  std::optional<std::filesystem::path> data_dir_;
  std::vector<std::unique_ptr<Bucket>> buckets_;  // creation order
  std::vector<std::uint64_t> frozen_;
  std::uint64_t next_bucket_id_ = 1;
  EventId next_event_id_ = 1;
  std::size_t total_bytes_ = 0;
  mutable std::shared_mutex mu_;
};

// zlib DEFLATE helpers.
std::string deflate_bytes(std::string_view in);
std::string inflate_bytes(std::string_view in, std::size_t raw_len);

}  // namespace logforge::index
