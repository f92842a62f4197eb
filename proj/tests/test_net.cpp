#include <sys/socket.h>
#include <netinet/in.h>
#include <arpa/inet.h>
#include <unistd.h>

#include <fstream>
#include <random>
#include <thread>

#include "doctest.h"
#include "logforge/error.hpp"
#include "logforge/index_store.hpp"
#include "logforge/ingest.hpp"
#include "logforge/net.hpp"
#include "test_util.hpp"

using namespace logforge;
using namespace logforge::net;
using namespace std::chrono_literals;

namespace {

Event random_event(std::mt19937_64& rng) {
  auto str = [&](std::size_t max) {
    std::string s(rng() % (max + 1), '\0');
    for (auto& c : s) c = static_cast<char>(rng() % 256);
    return s;
  };
  Event e;
  e.host = str(20);
  e.source = str(40);
  e.sourcetype = str(10);
  e.timestamp = static_cast<Timestamp>(rng());
  e.raw = str(300);
  return e;
}

void append(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::app | std::ios::binary);
  out << text;
}

std::string app_line(int i) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "[2024-03-01 10:%02d:%02d,%03d]INFO (Director ) seq=%d done in %d ms\n",
                (i / 60) % 60, i % 60, i % 1000, i, i % 97);
  return buf;
}

int connect_to(std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  return fd;
}

void send_bytes(int fd, const std::string& b) {
  std::size_t off = 0;
  while (off < b.size()) {
    ssize_t n = ::send(fd, b.data() + off, b.size() - off, MSG_NOSIGNAL);
    REQUIRE(n > 0);
    off += static_cast<std::size_t>(n);
  }
}

std::vector<Event> all_events(const index::IndexHandle& idx) {
  return idx.candidate_events({}, index::TimeRange{}).events;
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("frame layout is bit exact") {
  Event e;
  e.host = "h";
  e.source = "s";
  e.sourcetype = "t";
  e.timestamp = 0x0102030405060708;
  e.raw = "xy";
  std::string f = encode_frame(e);
  std::string expected("LFWD\x01\x00\x00\x00\x00\x17"
                       "\x00\x01h\x00\x01s\x00\x01t"
                       "\x01\x02\x03\x04\x05\x06\x07\x08"
                       "\x00\x00\x00\x02xy",
                       10 + 23);
  CHECK(f == expected);
  CHECK(encode_heartbeat() == std::string("LFWD\x01\x01\x00\x00\x00\x00", 10));
  CHECK(decode_frame(f) == e);
}

TEST_CASE("codec round trip") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    Event e = random_event(rng);
    CHECK(decode_frame(encode_frame(e)) == e);
  }
}

TEST_CASE("bad headers are protocol errors") {
  Event e;
  e.raw = "x";
  std::string f = encode_frame(e);
  auto mutate = [&](std::size_t at, char c) {
    std::string g = f;
    g[at] = c;
    return g;
  };
  CHECK_THROWS_AS(decode_frame(mutate(0, 'X')), ProtocolError);
  CHECK_THROWS_AS(decode_frame(mutate(4, 2)), ProtocolError);
  CHECK_THROWS_AS(decode_frame(mutate(5, 7)), ProtocolError);
  CHECK_THROWS_AS(decode_frame(mutate(6, 1)), ProtocolError);  // length > 1 MiB
  CHECK_THROWS_AS(decode_frame(f + "z"), ProtocolError);
  CHECK_THROWS_AS(decode_frame(encode_heartbeat()), ProtocolError);
  Event big;
  big.raw.assign(kMaxPayload, 'a');
  CHECK_THROWS_AS(encode_frame(big), ProtocolError);
}

TEST_CASE("truncation at every offset never yields a partial event") {
  std::mt19937_64 rng(5);
  std::vector<Event> events;
  std::string stream;
  std::vector<std::size_t> ends;
  for (int i = 0; i < 100; ++i) {
    events.push_back(random_event(rng));
    stream += encode_frame(events.back());
    ends.push_back(stream.size());
    if (i % 10 == 0) stream += encode_heartbeat();
  }
  for (std::size_t cut = 0; cut <= stream.size(); ++cut) {
    FrameDecoder d;
    d.feed(std::string_view(stream).substr(0, cut));
    std::size_t got = 0;
    bool ok = true;
    while (auto f = d.next()) {
      if (f->type != FrameType::kEvent) continue;
      ok = ok && decode_event_payload(f->payload) == events[got];
      ++got;
    }
    std::size_t complete = std::upper_bound(ends.begin(), ends.end(), cut) - ends.begin();
    if (got != complete || !ok) {
      FAIL("cut at " << cut << ": decoded " << got << " of " << complete);
    }
  }
  // The same for a single frame decoded whole.
  std::string one = encode_frame(events[0]);
  for (std::size_t cut = 0; cut < one.size(); ++cut)
    CHECK_THROWS_AS(decode_frame(std::string_view(one).substr(0, cut)), ProtocolError);
}

TEST_CASE("byte-at-a-time feeding and random garbage") {
  std::mt19937_64 rng(8);
  std::vector<Event> events;
  std::string stream;
  for (int i = 0; i < 20; ++i) {
    events.push_back(random_event(rng));
    stream += encode_frame(events.back());
  }
  FrameDecoder d;
  std::size_t got = 0;
  for (char c : stream) {
    d.feed(std::string_view(&c, 1));
    while (auto f = d.next()) CHECK(decode_event_payload(f->payload) == events[got++]);
  }
  CHECK(got == events.size());
  for (int trial = 0; trial < 2000; ++trial) {
    std::string junk = stream.substr(0, rng() % 64);
    for (int k = 0; k < 8; ++k) junk += static_cast<char>(rng() % 256);
    if (rng() % 2) junk[rng() % junk.size()] ^= static_cast<char>(1 + rng() % 255);
    FrameDecoder g;
    g.feed(junk);
    try {
      while (auto f = g.next())
        if (f->type == FrameType::kEvent) decode_event_payload(f->payload);
    } catch (const ProtocolError&) {
    }
  }
}

TEST_CASE("oversize raw splits into continuation events") {
  Event e;
  e.host = "h";
  e.source = "src";
  e.sourcetype = "applog";
  // Multi-byte characters so piece boundaries land mid-sequence.
  std::string unit = "\xC3\xA9";
  for (std::size_t i = 0; e.raw.size() < 3 * kMaxPayload; ++i) e.raw += (i % 7 ? unit : std::string("x"));
  auto pieces = split_oversize(e);
  REQUIRE(pieces.size() == 4);
  std::string joined;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    CHECK_NOTHROW(encode_frame(pieces[i]));
    std::string raw = pieces[i].raw;
    if (i + 1 < pieces.size()) {
      REQUIRE(raw.ends_with(kContinuation));
      raw.resize(raw.size() - kContinuation.size());
    } else {
      CHECK(!raw.ends_with(kContinuation));
    }
    CHECK(ingest::utf8_carry(raw) == 0);
    joined += raw;
  }
  CHECK(joined == e.raw);
  Event small;
  small.raw = "tiny";
  CHECK(split_oversize(small).size() == 1);
}

TEST_CASE("endpoint parsing") {
  CHECK(parse_endpoint("example:1234").host == "example");
  CHECK(parse_endpoint("example:1234").port == 1234);
  CHECK(parse_endpoint("example").port == kDefaultPort);
  CHECK(parse_endpoint(":80").host == "127.0.0.1");
  CHECK_THROWS_AS(parse_endpoint("h:99999"), ConfigError);
  CHECK_THROWS_AS(parse_endpoint("h:x"), ConfigError);
}

TEST_CASE("monitor: appended lines are emitted exactly once") {
  test::TempDir dir;
  auto file = dir.path() / "app.log";
  auto cps = dir.path() / "state" / "checkpoints.json";
  append(file, "one\ntwo\n");
  {
    FileMonitor m({file}, cps);
    auto chunks = m.poll();
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].bytes == "one\ntwo\n");
    m.advance(chunks[0].slot, chunks[0].bytes.size());
    CHECK(m.poll().empty());
    append(file, "a\nb\nc\n");
    chunks = m.poll();
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].bytes == "a\nb\nc\n");
    // Only part of it is delivered before the restart.
    m.advance(chunks[0].slot, 2);
    m.save();
  }
  FileMonitor again({file}, cps);
  auto chunks = again.poll();
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].bytes == "b\nc\n");
  auto saved = load_checkpoints(cps);
  REQUIRE(saved.size() == 1);
  CHECK(saved[0].offset == 10);
  CHECK(!std::filesystem::exists(cps.string() + ".tmp"));
}

TEST_CASE("monitor: truncation rereads from zero") {
  test::TempDir dir;
  auto file = dir.path() / "app.log";
  append(file, "first line\nsecond line\n");
  FileMonitor m({file});
  auto c = m.poll();
  m.advance(c[0].slot, c[0].bytes.size());
  std::ofstream(file, std::ios::trunc) << "new\n";
  c = m.poll();
  REQUIRE(c.size() == 1);
  CHECK(c[0].bytes == "new\n");
}

TEST_CASE("monitor: rotation delivers the old tail then the new head") {
  test::TempDir dir;
  auto file = dir.path() / "app.log";
  append(file, "old-1\n");
  FileMonitor m({file});
  auto c = m.poll();
  m.advance(c[0].slot, c[0].bytes.size());
  append(file, "old-2\n");
  std::filesystem::rename(file, dir.path() / "app.log.1");
  append(file, "new-1\n");
  c = m.poll();
  REQUIRE(c.size() == 2);
  CHECK(c[0].bytes == "old-2\n");
  CHECK(c[0].final);
  CHECK(c[1].bytes == "new-1\n");
  CHECK(!c[1].final);
  for (auto& ch : c) m.advance(ch.slot, ch.bytes.size());
  CHECK(m.poll().empty());
  CHECK(m.checkpoints().size() == 1);
}

TEST_CASE("monitor: rotation while stopped is recovered from the checkpoint") {
  test::TempDir dir;
  auto file = dir.path() / "app.log";
  auto cps = dir.path() / "checkpoints.json";
  append(file, "old-1\n");
  {
    FileMonitor m({file}, cps);
    auto c = m.poll();
    m.advance(c[0].slot, c[0].bytes.size());
    m.save();
  }
  append(file, "old-2\n");
  std::filesystem::rename(file, dir.path() / "app.log.1");
  append(file, "new-1\n");
  FileMonitor m({file}, cps);
  std::string seen;
  for (auto& ch : m.poll()) seen += ch.bytes;
  CHECK(seen == "old-2\nnew-1\n");
}

TEST_CASE("monitor: unreadable path is skipped with a warning") {
  test::TempDir dir;
  FileMonitor m({dir.path() / "missing.log"});
  CHECK(m.poll().empty());
  CHECK(m.warnings().size() == 1);
}

TEST_CASE("receiver: ordered events over one connection") {
  index::IndexHandle idx("main");
  Receiver r(idx, ReceiverOptions{Endpoint{"127.0.0.1", 0}});
  r.start();
  int fd = connect_to(r.port());
  std::string batch;
  for (int i = 0; i < 1000; ++i) {
    Event e;
    e.host = "h";
    e.source = "s";
    e.sourcetype = "applog";
    e.raw = app_line(i);
    e.raw.pop_back();
    batch += encode_frame(e);
  }
  batch += encode_heartbeat();
  send_bytes(fd, batch);
  REQUIRE(r.wait_for(1000, 10s));
  ::close(fd);
  auto events = all_events(idx);
  REQUIRE(events.size() == 1000);
  for (int i = 0; i < 1000; ++i) CHECK(events[i].raw.find("seq=" + std::to_string(i) + " ") != std::string::npos);
  CHECK(events[5].timestamp == *ingest::parse_timestamp(events[5].raw));
  for (int i = 0; i < 50 && !r.last_heartbeat(); ++i) std::this_thread::sleep_for(10ms);
  CHECK(r.last_heartbeat().has_value());
  r.stop();
}

TEST_CASE("receiver: concurrent connections keep per-connection order") {
  index::IndexHandle idx("main");
  Receiver r(idx, ReceiverOptions{Endpoint{"127.0.0.1", 0}, 64});
  r.start();
  auto sender = [&](std::string tag) {
    int fd = connect_to(r.port());
    for (int i = 0; i < 500; ++i) {
      Event e;
      e.source = tag;
      e.sourcetype = "applog";
      e.raw = tag + " seq=" + std::to_string(i);
      send_bytes(fd, encode_frame(e));
    }
    ::close(fd);
  };
  std::thread a(sender, "alpha"), b(sender, "beta");
  a.join();
  b.join();
  REQUIRE(r.wait_for(1000, 10s));
  std::map<std::string, int> next;
  for (const auto& e : all_events(idx)) {
    auto seq = std::stoi(e.raw.substr(e.raw.find('=') + 1));
    CHECK(seq == next[e.source]++);
  }
  CHECK(next["alpha"] == 500);
  CHECK(next["beta"] == 500);
  r.stop();
}

TEST_CASE("receiver: garbage closes only that connection") {
  index::IndexHandle idx("main");
  Receiver r(idx, ReceiverOptions{Endpoint{"127.0.0.1", 0}});
  r.start();
  int bad = connect_to(r.port());
  send_bytes(bad, "GET / HTTP/1.1\r\n\r\n");
  char c;
  CHECK(::recv(bad, &c, 1, 0) == 0);  // closed by the receiver
  ::close(bad);
  int good = connect_to(r.port());
  Event e;
  e.raw = "still alive";
  send_bytes(good, encode_frame(e));
  CHECK(r.wait_for(1, 5s));
  ::close(good);
  CHECK(r.stats().protocol_errors == 1);
  r.stop();
}

TEST_CASE("forwarder: restart mid-file loses and duplicates nothing") {
  test::TempDir dir;
  auto file = dir.path() / "app.log";
  std::string text;
  for (int i = 0; i < 3000; ++i) {
    text += app_line(i);
    // Multi-line events exercise the held-back tail.
    if (i % 50 == 0) text += "    continuation of " + std::to_string(i) + "\n";
  }
  append(file, text);

  index::IndexHandle idx("main");
  Receiver r(idx, ReceiverOptions{Endpoint{"127.0.0.1", 0}});
  r.start();
  ForwarderOptions opts;
  opts.dest = Endpoint{"127.0.0.1", r.port()};
  opts.state_dir = dir.path() / "state";
  opts.max_read_bytes = 16 * 1024;
  opts.host = "fwd";
  std::size_t first = 0;
  {
    Forwarder f({file}, opts);
    for (int i = 0; i < 4; ++i) first += f.poll_once();
    f.stop(false);
  }
  CHECK(first > 0);
  CHECK(first < 3000);
  {
    Forwarder f({file}, opts);
    for (int i = 0; i < 200 && f.stats().events_sent + first < 3000; ++i) f.poll_once();
    f.stop(true);
  }
  REQUIRE(r.wait_for(3000, 10s));
  r.wait_idle(1s);
  auto expected = ingest::break_events(std::vector<ingest::RawBlock>{{text, {"fwd", file.string(), "applog"}}},
                                       ingest::break_rule_for(ingest::default_break_rules(), "applog"));
  auto got = all_events(idx);
  REQUIRE(got.size() == expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].raw == expected[i].raw);
    CHECK(got[i].source == file.string());
    CHECK(got[i].sourcetype == "applog");
  }
  r.stop();
}

TEST_CASE("forwarder: unreachable destination keeps data for later") {
  test::TempDir dir;
  auto file = dir.path() / "app.log";
  append(file, app_line(1) + app_line(2));
  ForwarderOptions opts;
  opts.dest = Endpoint{"127.0.0.1", 1};  // nothing listens here
  opts.state_dir = dir.path();
  {
    Forwarder f({file}, opts);
    CHECK(f.poll_once(true) == 0);
  }
  index::IndexHandle idx("main");
  Receiver r(idx, ReceiverOptions{Endpoint{"127.0.0.1", 0}});
  r.start();
  opts.dest.port = r.port();
  Forwarder f({file}, opts);
  CHECK(f.poll_once(true) == 2);
  CHECK(r.wait_for(2, 5s));
  r.stop();
}

}  // TEST_SUITE
