#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "logforge/bloom.hpp"
#include "logforge/error.hpp"
#include "logforge/index_store.hpp"
#include "test_util.hpp"

using namespace logforge;
using namespace logforge::index;
namespace fs = std::filesystem;

namespace {

Event make_event(std::string raw, Timestamp ts = 1000) {
  Event e;
  e.raw = std::move(raw);
  e.timestamp = ts;
  e.host = "h";
  e.source = "s";
  e.sourcetype = "st";
  return e;
}

std::set<EventId> ids_of(const CandidateResult& r) {
  std::set<EventId> out;
  for (const auto& e : r.events) out.insert(e.id);
  return out;
}

}  // namespace

TEST_SUITE("index") {

TEST_CASE("bloom: insert then query") {
  BloomFilter b(9585, 7);
  CHECK_FALSE(b.contains("x"));
  b.insert("x");
  CHECK(b.contains("x"));
}

TEST_CASE("bloom: sizing formula") {
  auto b = BloomFilter::for_capacity(1000, 0.01);
  CHECK(b.bit_count() == 9586);  // ceil(1000 * ln(100) / ln(2)^2)
  CHECK(b.hash_count() == 7);
}

TEST_CASE("bloom: empirical false positives at m=9585 k=7 n=1000") {
  BloomFilter b(9585, 7);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) b.insert("in-" + std::to_string(rng()));
  int fp = 0;
  for (int i = 0; i < 10000; ++i) fp += b.contains("out-" + std::to_string(rng()));
  double theory = std::pow(1 - std::exp(-7.0 * 1000 / 9585), 7);
  CHECK(theory == doctest::Approx(0.0082).epsilon(0.05));
  CHECK(fp / 10000.0 <= 0.02);
}

TEST_CASE("bloom: serialize round trip") {
  BloomFilter b(1000, 3);
  b.insert("alpha");
  b.insert("beta");
  auto c = BloomFilter::deserialize(b.serialize());
  CHECK(c.contains("alpha"));
  CHECK(c.contains("beta"));
  CHECK(c.inserted() == 2);
  CHECK(c.bit_count() == 1000);
}

TEST_CASE("tokenizer") {
  auto t = tokenize("INFO (Director) PROT. SOS20186717");
  for (const char* want : {"info", "director", "prot", "sos20186717"})
    CHECK(std::find(t.begin(), t.end(), want) != t.end());
  CHECK(tokenize("x").size() == 1);
  Event e = make_event("GET /");
  e.fields["Status"] = "OK";
  auto terms = event_terms(e);
  CHECK(std::find(terms.begin(), terms.end(), "status=ok") != terms.end());
}

TEST_CASE("1000 events round-trip through lookup") {
  IndexHandle idx("main", RollPolicy{.max_bytes = 8192, .segment_bytes = 2048});
  std::vector<std::string> raws;
  std::mt19937 rng(3);
  for (int i = 0; i < 1000; ++i) {
    std::string raw = "event " + std::to_string(i) + " payload " + std::string(rng() % 40, 'z');
    if (i % 7 == 0) raw += "\nsecond line\twith tab";
    raws.push_back(raw);
    CHECK(idx.index_event(make_event(raw, 1000 + i)) == static_cast<EventId>(i + 1));
  }
  CHECK(idx.event_count() == 1000);
  for (int i = 0; i < 1000; ++i) {
    auto e = idx.lookup(static_cast<EventId>(i + 1));
    REQUIRE(e.has_value());
    CHECK(e->raw == raws[static_cast<std::size_t>(i)]);
    CHECK(e->timestamp == 1000 + i);
  }
}

TEST_CASE("compression round trip") {
  std::string s;
  std::mt19937 rng(1);
  for (int i = 0; i < 100000; ++i) s.push_back(static_cast<char>(rng()));
  CHECK(inflate_bytes(deflate_bytes(s), s.size()) == s);
  CHECK(inflate_bytes(deflate_bytes(""), 0).empty());
}

TEST_CASE("rolling: 2.5 x max_bytes gives 2 warm + 1 hot") {
  const std::size_t max_bytes = 1 << 20;
  IndexHandle idx("main", RollPolicy{.max_bytes = max_bytes});
  std::string line(1023, 'a');
  std::size_t total = 0;
  int i = 0;
  while (total < max_bytes * 5 / 2) {
    idx.index_event(make_event(line + std::to_string(i % 10), i));
    total += line.size() + 1;
    ++i;
  }
  CHECK(idx.count_in_state(BucketState::kHot) == 1);
  CHECK(idx.count_in_state(BucketState::kWarm) == 2);
}

TEST_CASE("rolling: empty index has no transitions") {
  IndexHandle idx("main");
  CHECK(idx.roll_buckets().empty());
}

TEST_CASE("rolling: warm quota 1 with two rolls") {
  IndexHandle idx("main", RollPolicy{.max_warm = 1});
  idx.index_event(make_event("one"));
  idx.roll_buckets();
  idx.index_event(make_event("two"));
  idx.roll_buckets();
  CHECK(idx.count_in_state(BucketState::kWarm) == 1);
  CHECK(idx.count_in_state(BucketState::kCold) == 1);
}

TEST_CASE("freeze without archive directory is aborted") {
  IndexHandle idx("main", RollPolicy{.max_warm = 0, .max_cold = 0});
  idx.index_event(make_event("one"));
  auto tr = idx.roll_buckets();
  bool aborted = false;
  for (const auto& t : tr)
    if (t.to == BucketState::kFrozen) aborted = !t.ok;
  CHECK(aborted);
  CHECK(idx.count_in_state(BucketState::kCold) == 1);
  CHECK(idx.event_count() == 1);
}

TEST_CASE("freeze then thaw preserves search results") {
  test::TempDir dir;
  auto idx = IndexHandle::open(dir.path(), "main", RollPolicy{.max_warm = 0, .max_cold = 0});
  for (int i = 0; i < 100; ++i)
    idx->index_event(make_event((i % 3 ? "alpha " : "beta ") + std::to_string(i), 1000 + i));
  auto before = ids_of(idx->candidate_events({"alpha"}, {}));
  CHECK(before.size() == 66);
  idx->roll_buckets();
  REQUIRE(idx->frozen_ids().size() == 1);
  CHECK(idx->candidate_events({"alpha"}, {}).events.empty());
  auto archive = *idx->archive_dir() / std::to_string(idx->frozen_ids().front());
  idx->thaw(archive);
  CHECK(idx->count_in_state(BucketState::kThawed) == 1);
  CHECK(ids_of(idx->candidate_events({"alpha"}, {})) == before);
  CHECK_THROWS(idx->thaw(archive));
  CHECK_THROWS(idx->thaw(dir.path() / "nope"));
  // Thawed buckets never roll again.
  idx->roll_buckets();
  CHECK(idx->count_in_state(BucketState::kThawed) == 1);
}

TEST_CASE("thaw reports the corrupt segment") {
  test::TempDir dir;
  auto idx = IndexHandle::open(dir.path(), "main", RollPolicy{.max_warm = 0, .max_cold = 0});
  for (int i = 0; i < 50; ++i) idx->index_event(make_event("row " + std::to_string(i)));
  idx->roll_buckets();
  REQUIRE(idx->frozen_ids().size() == 1);
  auto archive = *idx->archive_dir() / std::to_string(idx->frozen_ids().front());
  fs::path raw;
  for (const auto& f : fs::directory_iterator(archive))
    if (f.path().string().ends_with(".raw.deflate")) raw = f.path();
  REQUIRE(!raw.empty());
  {
    std::fstream f(raw, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    f.write("\xFF\xFF\xFF\xFF", 4);
  }
  try {
    idx->thaw(archive);
    FAIL("expected thaw to fail");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("segment 0") != std::string::npos);
  }
}

TEST_CASE("persisted index reopens with identical results") {
  test::TempDir dir;
  std::set<EventId> before;
  {
    auto idx = IndexHandle::open(dir.path(), "main", RollPolicy{.max_bytes = 2000});
    for (int i = 0; i < 200; ++i) idx->index_event(make_event("msg " + std::to_string(i % 13), i));
    before = ids_of(idx->candidate_events({"msg", "7"}, {}));
    idx->flush();
  }
  auto idx = IndexHandle::open(dir.path(), "main", RollPolicy{.max_bytes = 2000});
  CHECK(idx->event_count() == 200);
  CHECK(ids_of(idx->candidate_events({"msg", "7"}, {})) == before);
  CHECK(idx->index_event(make_event("next")) == 201);
}

TEST_CASE("candidate events: term in one bucket only touches that bucket") {
  IndexHandle idx("main", RollPolicy{.max_bytes = 4096, .segment_bytes = 1024});
  for (int b = 0; b < 5; ++b) {
    for (int i = 0; i < 100; ++i) {
      std::string raw = "common filler text " + std::to_string(i);
      if (b == 2 && i == 50) raw += " needle";
      idx.index_event(make_event(raw, b * 1000 + i));
    }
    idx.roll_buckets();
  }
  auto r = idx.candidate_events({"needle"}, {});
  CHECK(r.events.size() == 1);
  CHECK(r.stats.decompressed_segments <= 1);
  auto none = idx.candidate_events({"absentterm"}, {});
  CHECK(none.events.empty());
  CHECK(none.stats.decompressed_segments == 0);
  auto all = idx.candidate_events({}, {});
  CHECK(all.stats.scanned == idx.event_count());
  CHECK(all.events.size() == idx.event_count());
}

TEST_CASE("candidate events match a linear scan") {
  IndexHandle idx("main", RollPolicy{.max_bytes = 3000, .segment_bytes = 700});
  std::vector<std::string> words{"red", "green", "blue", "cyan", "gray"};
  std::mt19937 rng(11);
  std::vector<Event> all;
  for (int i = 0; i < 2000; ++i) {
    std::string raw;
    for (int k = 0; k < 3; ++k) raw += words[rng() % words.size()] + (k < 2 ? " " : "");
    Event e = make_event(raw, i * 10);
    e.id = idx.index_event(e);
    all.push_back(e);
  }
  for (int q = 0; q < 50; ++q) {
    std::vector<std::string> terms{words[rng() % 5], words[rng() % 5]};
    TimeRange range{static_cast<Timestamp>(rng() % 10000), static_cast<Timestamp>(10000 + rng() % 10000)};
    std::set<EventId> expect;
    for (const auto& e : all) {
      auto toks = tokenize(e.raw);
      bool ok = range.contains(e.timestamp);
      for (const auto& t : terms) ok = ok && std::find(toks.begin(), toks.end(), t) != toks.end();
      if (ok) expect.insert(e.id);
    }
    CHECK(ids_of(idx.candidate_events(terms, range)) == expect);
    CHECK(ids_of(idx.candidate_events(terms, range, {.use_bloom = false})) == expect);
  }
}

TEST_CASE("storage limit rejects the event without partial writes") {
  IndexHandle idx("main", RollPolicy{.max_total_bytes = 10});
  idx.index_event(make_event("12345"));
  CHECK_THROWS_AS(idx.index_event(make_event("1234567890")), IndexError);
  CHECK(idx.event_count() == 1);
  CHECK(idx.candidate_events({"1234567890"}, {}).events.empty());
}

}  // TEST_SUITE
