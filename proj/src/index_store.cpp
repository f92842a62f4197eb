#include "logforge/index_store.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <unordered_set>

#include <zlib.h>
#include <nlohmann/json.hpp>

#include "logforge/error.hpp"
#include "logforge/strings.hpp"

namespace logforge::index {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string_view to_string(BucketState s) {
  switch (s) {
    case BucketState::kHot: return "hot";
    case BucketState::kWarm: return "warm";
    case BucketState::kCold: return "cold";
    case BucketState::kFrozen: return "frozen";
    case BucketState::kThawed: return "thawed";
  }
  return "unknown";
}

BucketState bucket_state_from_string(std::string_view s) {
  if (s == "hot") return BucketState::kHot;
  if (s == "warm") return BucketState::kWarm;
  if (s == "cold") return BucketState::kCold;
  if (s == "frozen") return BucketState::kFrozen;
  if (s == "thawed") return BucketState::kThawed;
  throw IndexError("unknown bucket state '" + std::string(s) + "'");
}

std::vector<std::string> tokenize(std::string_view raw) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      if (seen.insert(cur).second) out.push_back(cur);
      cur.clear();
    }
  };
  for (char ch : raw) {
    auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) cur.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return out;
}

std::vector<std::string> event_terms(const Event& e) {
  auto terms = tokenize(e.raw);
  for (const auto& [k, v] : e.fields) terms.push_back(to_lower(k) + "=" + to_lower(v));
  return terms;
}

std::string deflate_bytes(std::string_view in) {
  uLongf bound = compressBound(static_cast<uLong>(in.size()));
  std::string out(bound, '\0');
  int rc = compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                     reinterpret_cast<const Bytef*>(in.data()), static_cast<uLong>(in.size()),
                     Z_DEFAULT_COMPRESSION);
  if (rc != Z_OK) throw IndexError("deflate failed");
  out.resize(bound);
  return out;
}

std::string inflate_bytes(std::string_view in, std::size_t raw_len) {
  std::string out(raw_len, '\0');
  uLongf len = static_cast<uLongf>(raw_len);
  int rc = uncompress(reinterpret_cast<Bytef*>(out.data()), &len,
                      reinterpret_cast<const Bytef*>(in.data()), static_cast<uLong>(in.size()));
  if (rc != Z_OK || len != raw_len) throw IndexError("inflate failed");
  return out;
}

namespace {

void put_u16(std::string& o, std::uint16_t v) {
  o.push_back(static_cast<char>(v & 0xFF));
  o.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& o, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) o.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  std::string_view data;
  std::size_t pos = 0;
  std::string what;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw IndexError(what + ": truncated");
  }
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }
};

std::string encode_record(const Event& e) {
  std::string rec;
  rec.reserve(32 + e.raw.size() + e.host.size() + e.source.size() + e.sourcetype.size());
  put_u64(rec, e.id);
  put_u64(rec, static_cast<std::uint64_t>(e.timestamp));
  for (const auto* s : {&e.host, &e.source, &e.sourcetype}) {
    put_u16(rec, static_cast<std::uint16_t>(std::min<std::size_t>(s->size(), 0xFFFF)));
    rec.append(s->data(), std::min<std::size_t>(s->size(), 0xFFFF));
  }
  put_u32(rec, static_cast<std::uint32_t>(e.raw.size()));
  rec += e.raw;
  return rec;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IndexError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& p, std::string_view bytes) {
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IndexError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IndexError("write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

}  // namespace

Bucket::Bucket(std::uint64_t id, const RollPolicy& policy)
    : id_(id),
      max_bytes_(policy.max_bytes),
      segment_limit_(policy.segment_bytes),
      bloom_(BloomFilter::for_capacity(policy.expected_terms)) {}

bool Bucket::has_term(std::string_view term) const {
  return terms_.contains(std::string(term));
}

void Bucket::append(const Event& e, const std::vector<std::string>& terms) {
  std::string rec = encode_record(e);
  if (!open_.empty() && open_.size() + rec.size() > segment_limit_) seal_open_segment();
  locator_[e.id] = Location{static_cast<std::uint32_t>(segments_.size()),
                            static_cast<std::uint32_t>(open_.size())};
  open_ += rec;
  for (const auto& t : terms) {
    auto [it, inserted] = terms_.try_emplace(t);
    if (inserted) bloom_.insert(t);
    if (it->second.empty() || it->second.back() != e.id) it->second.push_back(e.id);
  }
  if (event_count_ == 0) {
    earliest_ = latest_ = e.timestamp;
  } else {
    earliest_ = std::min(earliest_, e.timestamp);
    latest_ = std::max(latest_, e.timestamp);
  }
  ++event_count_;
  bytes_ += e.raw.size();
  dirty_ = true;
}

void Bucket::seal_open_segment() {
  if (open_.empty()) return;
  segments_.push_back(SegmentInfo{deflate_bytes(open_), open_.size()});
  open_.clear();
  dirty_ = true;
}

void Bucket::rebuild_bloom() {
  bloom_ = BloomFilter::for_capacity(terms_.size());
  for (const auto& [t, ids] : terms_) bloom_.insert(t);
}

std::string Bucket::read_segment(std::uint32_t seg) const {
  if (seg == segments_.size()) return open_;
  const auto& s = segments_.at(seg);
  return inflate_bytes(s.compressed, s.raw_len);
}

Event Bucket::decode_at(const std::string& segment_bytes, std::uint32_t offset) const {
  Reader r{segment_bytes, offset, "bucket " + std::to_string(id_) + " rawdata"};
  Event e;
  e.id = r.uint(8);
  e.timestamp = static_cast<Timestamp>(r.uint(8));
  e.host = r.str(r.uint(2));
  e.source = r.str(r.uint(2));
  e.sourcetype = r.str(r.uint(2));
  e.raw = r.str(r.uint(4));
  return e;
}

IndexHandle::IndexHandle(std::string name, RollPolicy policy,
                         std::optional<fs::path> data_dir)
    : name_(std::move(name)), policy_(policy), data_dir_(std::move(data_dir)) {
  if (policy_.max_bytes == 0) throw IndexError("max_bytes must be positive");
}

fs::path IndexHandle::index_dir() const { return *data_dir_ / name_; }

std::optional<fs::path> IndexHandle::archive_dir() const {
  if (!data_dir_) return std::nullopt;
  return index_dir() / "frozen";
}

Bucket& IndexHandle::hot_bucket() {
  for (auto& b : buckets_)
    if (b->state_ == BucketState::kHot) return *b;
  open_new_hot();
  return *buckets_.back();
}

void IndexHandle::open_new_hot() {
  buckets_.push_back(std::make_unique<Bucket>(next_bucket_id_++, policy_));
}

EventId IndexHandle::index_event(const Event& e) {
  std::unique_lock lock(mu_);
  if (policy_.max_total_bytes != 0 && total_bytes_ + e.raw.size() > policy_.max_total_bytes)
    throw IndexError("index '" + name_ + "' is full");
  Event stored = e;
  stored.id = next_event_id_;
  auto terms = event_terms(stored);
  stored.fields.clear();
  hot_bucket().append(stored, terms);
  ++next_event_id_;
  total_bytes_ += e.raw.size();
  roll_locked(false);
  return stored.id;
}

std::vector<Transition> IndexHandle::roll_buckets() {
  std::unique_lock lock(mu_);
  return roll_locked(true);
}

std::vector<Transition> IndexHandle::roll_locked(bool force) {
  std::vector<Transition> out;
  for (auto& b : buckets_) {
    if (b->state_ == BucketState::kHot && b->event_count_ > 0 &&
        (force || b->bytes_ >= b->max_bytes_)) {
      b->seal_open_segment();
      b->rebuild_bloom();
      b->state_ = BucketState::kWarm;
      b->dirty_ = true;
      out.push_back({b->id_, BucketState::kHot, BucketState::kWarm, true, {}});
      open_new_hot();
      break;
    }
  }
  auto count = [&](BucketState s) {
    return std::count_if(buckets_.begin(), buckets_.end(),
                         [s](const auto& b) { return b->state_ == s; });
  };
  while (static_cast<std::size_t>(count(BucketState::kWarm)) > policy_.max_warm) {
    auto it = std::find_if(buckets_.begin(), buckets_.end(),
                           [](const auto& b) { return b->state_ == BucketState::kWarm; });
    (*it)->state_ = BucketState::kCold;
    (*it)->dirty_ = true;
    out.push_back({(*it)->id_, BucketState::kWarm, BucketState::kCold, true, {}});
  }
  while (static_cast<std::size_t>(count(BucketState::kCold)) > policy_.max_cold) {
    auto it = std::find_if(buckets_.begin(), buckets_.end(),
                           [](const auto& b) { return b->state_ == BucketState::kCold; });
    Bucket& b = **it;
    Transition t{b.id_, BucketState::kCold, BucketState::kFrozen, true, {}};
    if (!data_dir_) {
      t.ok = false;
      t.error = "no archive directory configured";
      out.push_back(t);
      break;
    }
    const fs::path dest = *archive_dir() / std::to_string(b.id_);
    try {
      fs::create_directories(dest);
      b.state_ = BucketState::kFrozen;
      write_bucket(b, dest);
    } catch (const std::exception& ex) {
      b.state_ = BucketState::kCold;
      std::error_code ec;
      fs::remove_all(dest, ec);
      t.ok = false;
      t.error = ex.what();
      out.push_back(t);
      break;
    }
    remove_bucket_files(b.id_);
    frozen_.push_back(b.id_);
    buckets_.erase(it);
    out.push_back(t);
  }
  return out;
}

std::uint64_t IndexHandle::thaw(const fs::path& archive) {
  std::unique_lock lock(mu_);
  if (!fs::is_directory(archive)) throw IndexError("thaw: no archive at " + archive.string());
  std::optional<std::uint64_t> id;
  for (const auto& entry : fs::directory_iterator(archive)) {
    auto fname = entry.path().filename().string();
    const std::string suffix = ".meta.json";
    if (fname.size() > suffix.size() && fname.ends_with(suffix))
      id = std::stoull(fname.substr(0, fname.size() - suffix.size()));
  }
  if (!id) throw IndexError("thaw: no bucket metadata in " + archive.string());
  for (const auto& b : buckets_)
    if (b->id_ == *id)
      throw IndexError("thaw: bucket " + std::to_string(*id) + " is already registered");
  auto bucket = read_bucket(archive, *id);
  bucket->state_ = BucketState::kThawed;
  bucket->dirty_ = true;
  for (const auto& [eid, loc] : bucket->locator_) next_event_id_ = std::max(next_event_id_, eid + 1);
  next_bucket_id_ = std::max(next_bucket_id_, *id + 1);
  total_bytes_ += bucket->bytes_;
  std::erase(frozen_, *id);
  buckets_.push_back(std::move(bucket));
  return *id;
}

CandidateResult IndexHandle::candidate_events(const std::vector<std::string>& terms,
                                              const TimeRange& range,
                                              ScanOptions options) const {
  std::shared_lock lock(mu_);
  CandidateResult result;
  std::vector<std::string> wanted;
  for (const auto& t : terms)
    if (t != "*" && !t.empty()) wanted.push_back(to_lower(t));

  // hot, then warm/cold newest first, then thawed.
  std::vector<const Bucket*> order;
  for (BucketState s : {BucketState::kHot, BucketState::kWarm, BucketState::kCold,
                        BucketState::kThawed})
    for (auto it = buckets_.rbegin(); it != buckets_.rend(); ++it)
      if ((*it)->state_ == s) order.push_back(it->get());

  for (const Bucket* b : order) {
    if (b->event_count_ == 0) continue;
    if (!range.overlaps(b->earliest_, b->latest_)) {
      ++result.stats.time_skips;
      continue;
    }
    result.stats.scanned += b->event_count_;
    ++result.stats.buckets_visited;

    auto t0 = Clock::now();
    std::vector<EventId> ids;
    bool skip = false;
    if (options.use_bloom) {
      for (const auto& t : wanted) {
        if (!b->bloom_.contains(t)) {
          skip = true;
          break;
        }
      }
    }
    if (skip) {
      ++result.stats.bloom_skips;
      result.index_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
      continue;
    }
    if (wanted.empty()) {
      ids.reserve(b->locator_.size());
      for (const auto& [id, loc] : b->locator_) ids.push_back(id);
      std::sort(ids.begin(), ids.end());
    } else {
      for (std::size_t i = 0; i < wanted.size(); ++i) {
        auto it = b->terms_.find(wanted[i]);
        if (it == b->terms_.end()) {
          ids.clear();
          break;
        }
        if (i == 0) {
          ids = it->second;
        } else {
          std::vector<EventId> merged;
          std::set_intersection(ids.begin(), ids.end(), it->second.begin(), it->second.end(),
                                std::back_inserter(merged));
          ids.swap(merged);
        }
        if (ids.empty()) break;
      }
    }
    auto t1 = Clock::now();
    result.index_seconds += std::chrono::duration<double>(t1 - t0).count();
    if (ids.empty()) continue;

    std::map<std::uint32_t, std::vector<std::pair<EventId, std::uint32_t>>> by_segment;
    for (EventId id : ids) {
      const auto& loc = b->locator_.at(id);
      by_segment[loc.segment].emplace_back(id, loc.offset);
    }
    for (const auto& [seg, entries] : by_segment) {
      std::string bytes = b->read_segment(seg);
      if (seg < b->segments_.size()) ++result.stats.decompressed_segments;
      for (const auto& [id, offset] : entries) {
        Event e = b->decode_at(bytes, offset);
        if (!range.contains(e.timestamp)) continue;
        bool ok = true;
        if (!wanted.empty()) {
          auto toks = tokenize(e.raw);
          std::unordered_set<std::string> tokset(toks.begin(), toks.end());
          for (const auto& t : wanted)
            if (t.find('=') == std::string::npos && !tokset.contains(t)) ok = false;
        }
        if (ok) result.events.push_back(std::move(e));
      }
    }
    result.rawdata_seconds += std::chrono::duration<double>(Clock::now() - t1).count();
  }
  std::sort(result.events.begin(), result.events.end(),
            [](const Event& a, const Event& b) { return a.id < b.id; });
  return result;
}

std::optional<Event> IndexHandle::lookup(EventId id) const {
  std::shared_lock lock(mu_);
  for (const auto& b : buckets_) {
    auto it = b->locator_.find(id);
    if (it == b->locator_.end()) continue;
    return b->decode_at(b->read_segment(it->second.segment), it->second.offset);
  }
  return std::nullopt;
}

std::size_t IndexHandle::event_count() const {
  std::shared_lock lock(mu_);
  std::size_t n = 0;
  for (const auto& b : buckets_) n += b->event_count_;
  return n;
}

std::size_t IndexHandle::bucket_count() const {
  std::shared_lock lock(mu_);
  return buckets_.size();
}

std::size_t IndexHandle::count_in_state(BucketState s) const {
  std::shared_lock lock(mu_);
  if (s == BucketState::kFrozen) return frozen_.size();
  return static_cast<std::size_t>(std::count_if(
      buckets_.begin(), buckets_.end(), [s](const auto& b) { return b->state_ == s; }));
}

std::vector<std::uint64_t> IndexHandle::frozen_ids() const {
  std::shared_lock lock(mu_);
  return frozen_;
}

std::vector<IndexHandle::BucketSummary> IndexHandle::buckets() const {
  std::shared_lock lock(mu_);
  std::vector<BucketSummary> out;
  for (const auto& b : buckets_)
    out.push_back({b->id_, b->state_, b->earliest_, b->latest_, b->event_count_, b->bytes_});
  return out;
}

void IndexHandle::write_bucket(const Bucket& b, const fs::path& dir) const {
  fs::create_directories(dir);
  const std::string stem = std::to_string(b.id_);

  std::string raw;
  nlohmann::json segs = nlohmann::json::array();
  auto add_segment = [&](const std::string& compressed, std::size_t raw_len) {
    segs.push_back({{"offset", raw.size()}, {"length", compressed.size()}, {"raw_len", raw_len}});
    raw += compressed;
  };
  for (const auto& s : b.segments_) add_segment(s.compressed, s.raw_len);
  if (!b.open_.empty()) add_segment(deflate_bytes(b.open_), b.open_.size());

  std::string terms = "LFTI";
  put_u32(terms, static_cast<std::uint32_t>(b.terms_.size()));
  std::vector<const std::pair<const std::string, std::vector<EventId>>*> sorted;
  for (const auto& kv : b.terms_) sorted.push_back(&kv);
  std::sort(sorted.begin(), sorted.end(), [](auto* x, auto* y) { return x->first < y->first; });
  for (const auto* kv : sorted) {
    put_u32(terms, static_cast<std::uint32_t>(kv->first.size()));
    terms += kv->first;
    put_u32(terms, static_cast<std::uint32_t>(kv->second.size()));
    for (EventId id : kv->second) put_u64(terms, id);
  }
  std::vector<std::pair<EventId, Location>> locs(b.locator_.begin(), b.locator_.end());
  std::sort(locs.begin(), locs.end(), [](auto& x, auto& y) { return x.first < y.first; });
  put_u32(terms, static_cast<std::uint32_t>(locs.size()));
  for (const auto& [id, loc] : locs) {
    put_u64(terms, id);
    put_u32(terms, loc.segment);
    put_u32(terms, loc.offset);
  }

  nlohmann::json meta = {
      {"id", b.id_},
      {"state", std::string(to_string(b.state_))},
      {"earliest", b.earliest_},
      {"latest", b.latest_},
      {"event_count", b.event_count_},
      {"bytes", b.bytes_},
      {"max_bytes", b.max_bytes_},
      {"term_count", b.terms_.size()},
      {"max_event_id", locs.empty() ? 0 : locs.back().first},
      {"bloom", {{"m", b.bloom_.bit_count()}, {"k", b.bloom_.hash_count()},
                 {"inserted", b.bloom_.inserted()}}},
      {"segments", segs},
  };
  write_file_atomic(dir / (stem + ".raw.deflate"), raw);
  write_file_atomic(dir / (stem + ".terms.dat"), terms);
  write_file_atomic(dir / (stem + ".bloom.dat"), b.bloom_.serialize());
  write_file_atomic(dir / (stem + ".meta.json"), meta.dump(2));
}

std::unique_ptr<Bucket> IndexHandle::read_bucket(const fs::path& dir, std::uint64_t id) const {
  const std::string stem = std::to_string(id);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / (stem + ".meta.json")));
  } catch (const nlohmann::json::exception& e) {
    throw IndexError("bucket " + stem + ": bad meta.json: " + e.what());
  }
  auto b = std::make_unique<Bucket>(id, policy_);
  try {
    b->state_ = bucket_state_from_string(meta.at("state").get<std::string>());
    b->earliest_ = meta.at("earliest").get<Timestamp>();
    b->latest_ = meta.at("latest").get<Timestamp>();
    b->event_count_ = meta.at("event_count").get<std::size_t>();
    b->bytes_ = meta.at("bytes").get<std::size_t>();
    b->max_bytes_ = meta.value("max_bytes", policy_.max_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw IndexError("bucket " + stem + ": bad meta.json: " + e.what());
  }

  const std::string raw = read_file(dir / (stem + ".raw.deflate"));
  std::size_t seg_no = 0;
  for (const auto& s : meta.at("segments")) {
    auto off = s.at("offset").get<std::size_t>();
    auto len = s.at("length").get<std::size_t>();
    auto raw_len = s.at("raw_len").get<std::size_t>();
    if (off + len > raw.size())
      throw IndexError("bucket " + stem + ": raw.deflate segment " + std::to_string(seg_no) +
                       " is truncated");
    SegmentInfo info{raw.substr(off, len), raw_len};
    try {
      inflate_bytes(info.compressed, raw_len);
    } catch (const IndexError&) {
      throw IndexError("bucket " + stem + ": raw.deflate segment " + std::to_string(seg_no) +
                       " is corrupt");
    }
    b->segments_.push_back(std::move(info));
    ++seg_no;
  }

  const std::string terms = read_file(dir / (stem + ".terms.dat"));
  Reader r{terms, 0, "bucket " + stem + " terms.dat"};
  if (r.str(4) != "LFTI") throw IndexError("bucket " + stem + ": terms.dat bad magic");
  auto nterms = r.uint(4);
  for (std::uint64_t i = 0; i < nterms; ++i) {
    std::string t = r.str(r.uint(4));
    auto n = r.uint(4);
    std::vector<EventId> ids;
    ids.reserve(n);
    for (std::uint64_t j = 0; j < n; ++j) ids.push_back(r.uint(8));
    b->terms_.emplace(std::move(t), std::move(ids));
  }
  auto nloc = r.uint(4);
  for (std::uint64_t i = 0; i < nloc; ++i) {
    EventId eid = r.uint(8);
    auto seg = static_cast<std::uint32_t>(r.uint(4));
    auto off = static_cast<std::uint32_t>(r.uint(4));
    if (seg >= b->segments_.size())
      throw IndexError("bucket " + stem + ": locator references missing segment " +
                       std::to_string(seg));
    b->locator_[eid] = Location{seg, off};
  }
  b->bloom_ = BloomFilter::deserialize(read_file(dir / (stem + ".bloom.dat")));
  if (b->state_ == BucketState::kHot) {
    // Reopened hot buckets keep appending into a fresh open segment.
    b->bloom_ = BloomFilter::for_capacity(std::max(policy_.expected_terms, b->terms_.size()));
    for (const auto& [t, ids] : b->terms_) b->bloom_.insert(t);
  }
  b->dirty_ = false;
  return b;
}

void IndexHandle::remove_bucket_files(std::uint64_t id) const {
  if (!data_dir_) return;
  const std::string stem = std::to_string(id);
  std::error_code ec;
  for (const char* ext : {".meta.json", ".terms.dat", ".bloom.dat", ".raw.deflate"})
    fs::remove(index_dir() / (stem + ext), ec);
}

void IndexHandle::flush() {
  std::unique_lock lock(mu_);
  if (!data_dir_) return;
  fs::create_directories(index_dir());
  for (auto& b : buckets_) {
    if (!b->dirty_) continue;
    write_bucket(*b, index_dir());
    b->dirty_ = false;
  }
}

std::unique_ptr<IndexHandle> IndexHandle::open(const fs::path& data_dir, const std::string& name,
                                               RollPolicy policy) {
  auto handle = std::make_unique<IndexHandle>(name, policy, data_dir);
  const fs::path dir = handle->index_dir();
  fs::create_directories(dir);
  std::vector<std::uint64_t> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    auto fname = entry.path().filename().string();
    const std::string suffix = ".meta.json";
    if (entry.is_regular_file() && fname.ends_with(suffix))
      ids.push_back(std::stoull(fname.substr(0, fname.size() - suffix.size())));
  }
  std::sort(ids.begin(), ids.end());
  std::set<std::uint64_t> live(ids.begin(), ids.end());
  for (auto id : ids) {
    auto b = handle->read_bucket(dir, id);
    for (const auto& [eid, loc] : b->locator_)
      handle->next_event_id_ = std::max(handle->next_event_id_, eid + 1);
    handle->total_bytes_ += b->bytes_;
    handle->buckets_.push_back(std::move(b));
    handle->next_bucket_id_ = std::max(handle->next_bucket_id_, id + 1);
  }
  if (fs::is_directory(dir / "frozen")) {
    for (const auto& entry : fs::directory_iterator(dir / "frozen")) {
      if (!entry.is_directory()) continue;
      std::uint64_t id = std::stoull(entry.path().filename().string());
      handle->next_bucket_id_ = std::max(handle->next_bucket_id_, id + 1);
      if (live.contains(id)) continue;
      handle->frozen_.push_back(id);
      std::error_code ec;
      auto meta_path = entry.path() / (std::to_string(id) + ".meta.json");
      if (fs::exists(meta_path, ec)) {
        auto meta = nlohmann::json::parse(read_file(meta_path), nullptr, false);
        if (!meta.is_discarded())
          handle->next_event_id_ =
              std::max<EventId>(handle->next_event_id_, meta.value("max_event_id", 0ULL) + 1);
      }
    }
    std::sort(handle->frozen_.begin(), handle->frozen_.end());
  }
  return handle;
}

}  // namespace logforge::index
