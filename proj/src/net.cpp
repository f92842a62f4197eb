#include "logforge/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "logforge/error.hpp"
#include "logforge/index_store.hpp"

namespace logforge::net {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

std::uint64_t get_be(std::string_view b, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
  return v;
}

std::string header(FrameType type, std::size_t len) {
  std::string out(kMagic);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(type));
  put_u32(out, static_cast<std::uint32_t>(len));
  return out;
}

std::size_t metadata_bytes(const Event& e) {
  return 2 + e.host.size() + 2 + e.source.size() + 2 + e.sourcetype.size() + 8 + 4;
}

// Validates a header and returns the payload length.
std::pair<FrameType, std::size_t> check_header(std::string_view h) {
  if (h.substr(0, 4) != kMagic) throw ProtocolError("bad frame magic");
  if (static_cast<unsigned char>(h[4]) != kVersion)
    throw ProtocolError("unsupported frame version " + std::to_string(static_cast<unsigned char>(h[4])));
  auto type = static_cast<unsigned char>(h[5]);
  if (type > 1) throw ProtocolError("unknown frame type " + std::to_string(type));
  std::size_t len = get_be(h, 6, 4);
  if (len > kMaxPayload) throw ProtocolError("frame payload too large: " + std::to_string(len));
  if (type == 1 && len != 0) throw ProtocolError("heartbeat with payload");
  return {static_cast<FrameType>(type), len};
}

FileId file_id(const struct stat& st) {
  return FileId{static_cast<std::uint64_t>(st.st_dev), static_cast<std::uint64_t>(st.st_ino)};
}

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string machine_name() {
  char buf[256] = {0};
  if (gethostname(buf, sizeof buf - 1) != 0) return "localhost";
  return buf;
}

}  // namespace

// -- codec ------------------------------------------------------------------

std::size_t raw_budget(const Event& e) {
  std::size_t meta = metadata_bytes(e);
  return meta >= kMaxPayload ? 0 : kMaxPayload - meta;
}

std::string encode_frame(const Event& e) {
  if (e.host.size() > 0xffff || e.source.size() > 0xffff || e.sourcetype.size() > 0xffff)
    throw ProtocolError("metadata field longer than 65535 bytes");
  std::size_t len = metadata_bytes(e) + e.raw.size();
  if (len > kMaxPayload) throw ProtocolError("event exceeds the frame payload limit");
  std::string out = header(FrameType::kEvent, len);
  out.reserve(kHeaderSize + len);
  for (const std::string* s : {&e.host, &e.source, &e.sourcetype}) {
    put_u16(out, static_cast<std::uint16_t>(s->size()));
    out += *s;
  }
  put_u64(out, static_cast<std::uint64_t>(e.timestamp));
  put_u32(out, static_cast<std::uint32_t>(e.raw.size()));
  out += e.raw;
  return out;
}

std::string encode_heartbeat() { return header(FrameType::kHeartbeat, 0); }

Event decode_event_payload(std::string_view p) {
  std::size_t at = 0;
  auto need = [&](std::size_t n) {
    if (p.size() - at < n) throw ProtocolError("event payload truncated");
  };
  Event e;
  for (std::string* s : {&e.host, &e.source, &e.sourcetype}) {
    need(2);
    std::size_t n = get_be(p, at, 2);
    at += 2;
    need(n);
    s->assign(p.substr(at, n));
    at += n;
  }
  need(8);
  e.timestamp = static_cast<Timestamp>(get_be(p, at, 8));
  at += 8;
  need(4);
  std::size_t n = get_be(p, at, 4);
  at += 4;
  need(n);
  e.raw.assign(p.substr(at, n));
  at += n;
  if (at != p.size()) throw ProtocolError("trailing bytes in event payload");
  return e;
}

Event decode_frame(std::string_view bytes) {
  if (bytes.size() < kHeaderSize) throw ProtocolError("frame truncated in header");
  auto [type, len] = check_header(bytes.substr(0, kHeaderSize));
  if (bytes.size() - kHeaderSize != len) throw ProtocolError("frame length mismatch");
  if (type != FrameType::kEvent) throw ProtocolError("not an event frame");
  return decode_event_payload(bytes.substr(kHeaderSize));
}

std::vector<Event> split_oversize(const Event& e) {
  std::size_t budget = raw_budget(e);
  if (e.raw.size() <= budget) return {e};
  if (budget <= kContinuation.size() + 4) throw ProtocolError("event metadata leaves no room for raw");
  std::vector<Event> out;
  std::string_view rest = e.raw;
  while (rest.size() > budget) {
    std::size_t take = budget - kContinuation.size();
    take -= ingest::utf8_carry(rest.substr(0, take));
    Event piece = e;
    piece.raw = std::string(rest.substr(0, take)) + std::string(kContinuation);
    out.push_back(std::move(piece));
    rest.remove_prefix(take);
  }
  Event last = e;
  last.raw = std::string(rest);
  out.push_back(std::move(last));
  return out;
}

void FrameDecoder::feed(std::string_view bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  } else if (pos_ > (1u << 20)) {
    buf_.erase(0, pos_);
    pos_ = 0;
  }
  buf_.append(bytes);
}

std::optional<Frame> FrameDecoder::next() {
  std::string_view view(buf_);
  view.remove_prefix(pos_);
  // Validate the magic as soon as it arrives so garbage fails fast.
  std::size_t probe = std::min<std::size_t>(view.size(), 4);
  if (view.substr(0, probe) != kMagic.substr(0, probe)) throw ProtocolError("bad frame magic");
  if (view.size() < kHeaderSize) return std::nullopt;
  auto [type, len] = check_header(view.substr(0, kHeaderSize));
  if (view.size() < kHeaderSize + len) return std::nullopt;
  Frame f{type, std::string(view.substr(kHeaderSize, len))};
  pos_ += kHeaderSize + len;
  return f;
}

Endpoint parse_endpoint(std::string_view text, std::uint16_t default_port) {
  Endpoint ep;
  ep.port = default_port;
  auto colon = text.rfind(':');
  std::string_view host = text;
  if (colon != std::string_view::npos) {
    host = text.substr(0, colon);
    auto port_text = std::string(text.substr(colon + 1));
    char* end = nullptr;
    long port = std::strtol(port_text.c_str(), &end, 10);
    if (port_text.empty() || *end != '\0' || port < 0 || port > 65535)
      throw ConfigError("bad port in endpoint '" + std::string(text) + "'");
    ep.port = static_cast<std::uint16_t>(port);
  }
  if (!host.empty()) ep.host = std::string(host);
  return ep;
}

// -- checkpoints ------------------------------------------------------------

std::vector<Checkpoint> load_checkpoints(const fs::path& file) {
  std::vector<Checkpoint> out;
  std::ifstream in(file);
  if (!in) return out;
  json j;
  try {
    in >> j;
    for (const auto& c : j.at("files")) {
      out.push_back(Checkpoint{c.at("path").get<std::string>(),
                               FileId{c.at("dev").get<std::uint64_t>(), c.at("inode").get<std::uint64_t>()},
                               c.at("offset").get<std::uint64_t>(), c.value("last_seen", std::int64_t{0})});
    }
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": bad checkpoint file: " + e.what());
  }
  return out;
}

void save_checkpoints(const fs::path& file, const std::vector<Checkpoint>& cps) {
  json files = json::array();
  for (const auto& c : cps)
    files.push_back({{"path", c.path}, {"dev", c.id.dev}, {"inode", c.id.ino},
                     {"offset", c.offset}, {"last_seen", c.last_seen}});
  json j = {{"version", 1}, {"files", files}};
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    out.flush();
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, file);
}

// -- monitor ----------------------------------------------------------------

struct FileMonitor::Tracked {
  std::string path;
  FileId id;
  std::uint64_t committed = 0;  // delivered and checkpointable
  std::uint64_t read_pos = 0;   // handed out through poll()
  int fd = -1;
  bool rotated = false;  // path now names a different file; drain then drop
  bool final_sent = false;

  ~Tracked() {
    if (fd >= 0) ::close(fd);
  }
};

FileMonitor::FileMonitor(std::vector<fs::path> paths, std::optional<fs::path> checkpoint_file)
    : paths_(std::move(paths)), checkpoint_file_(std::move(checkpoint_file)) {
  if (checkpoint_file_) restored_ = load_checkpoints(*checkpoint_file_);
}

FileMonitor::~FileMonitor() = default;

std::vector<fs::path> FileMonitor::expand() const {
  std::vector<fs::path> out;
  for (const auto& p : paths_) {
    std::error_code ec;
    if (fs::is_directory(p, ec)) {
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(p, ec))
        if (entry.is_regular_file(ec) && entry.path().extension() != ".tmp") files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

FileMonitor::Tracked& FileMonitor::track(const std::string& path, FileId id, std::uint64_t offset, int fd) {
  auto t = std::make_unique<Tracked>();
  t->path = path;
  t->id = id;
  t->committed = t->read_pos = offset;
  t->fd = fd;
  auto& ref = *t;
  tracked_[next_slot_++] = std::move(t);
  return ref;
}

void FileMonitor::read_into(std::uint64_t slot, Tracked& t, std::size_t budget,
                            std::vector<MonitorChunk>& out) {
  std::string bytes;
  char buf[65536];
  while (bytes.size() < budget) {
    std::size_t want = std::min(sizeof buf, budget - bytes.size());
    ssize_t n = ::pread(t.fd, buf, want, static_cast<off_t>(t.read_pos + bytes.size()));
    if (n <= 0) break;
    bytes.append(buf, static_cast<std::size_t>(n));
  }
  t.read_pos += bytes.size();
  bool at_end = bytes.size() < budget;
  bool final = t.rotated && at_end && !t.final_sent;
  if (final) t.final_sent = true;
  if (!bytes.empty() || final) out.push_back(MonitorChunk{slot, t.path, std::move(bytes), final});
}

std::vector<MonitorChunk> FileMonitor::poll(std::size_t max_bytes) {
  std::vector<MonitorChunk> out;
  // Drop rotated files whose tail has been delivered.
  std::erase_if(tracked_, [](const auto& kv) {
    const auto& t = *kv.second;
    return t.rotated && t.final_sent && t.committed == t.read_pos;
  });

  for (const auto& p : expand()) {
    std::string path = p.string();
    struct stat st{};
    if (::stat(path.c_str(), &st) != 0) {
      warnings_.push_back(path + ": " + std::strerror(errno));
      continue;
    }
    FileId id = file_id(st);
    Tracked* current = nullptr;
    for (auto& [slot, t] : tracked_) {
      if (t->path != path || t->rotated) continue;
      if (t->id == id) {
        current = t.get();
      } else {
        t->rotated = true;  // renamed away; its descriptor still reads the old inode
      }
    }
    if (!current) {
      int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
      if (fd < 0) {
        warnings_.push_back(path + ": " + std::strerror(errno));
        continue;
      }
      std::uint64_t offset = 0;
      for (auto it = restored_.begin(); it != restored_.end();) {
        if (it->path != path) {
          ++it;
          continue;
        }
        if (it->id == id) {
          offset = it->offset;
        } else {
          // Rotated while we were down: look for the old inode beside it.
          std::error_code ec;
          for (const auto& entry : fs::directory_iterator(p.parent_path().empty() ? "." : p.parent_path(), ec)) {
            struct stat old{};
            if (::stat(entry.path().c_str(), &old) == 0 && file_id(old) == it->id) {
              int ofd = ::open(entry.path().c_str(), O_RDONLY | O_CLOEXEC);
              if (ofd >= 0) {
                auto& t = track(path, it->id, it->offset, ofd);
                t.rotated = true;
              }
              break;
            }
          }
        }
        it = restored_.erase(it);
      }
      current = &track(path, id, offset, fd);
    }
    if (static_cast<std::uint64_t>(st.st_size) < current->read_pos) {
      // Truncated in place: start over.
      current->committed = current->read_pos = 0;
    }
  }

  // Rotated tails first so old data precedes new data for the same path.
  std::size_t budget = max_bytes;
  for (int pass = 0; pass < 2; ++pass) {
    for (auto& [slot, t] : tracked_) {
      if (t->rotated != (pass == 0) || t->final_sent) continue;
      if (budget == 0) break;
      std::size_t before = out.size();
      read_into(slot, *t, budget, out);
      if (out.size() > before) budget -= std::min(budget, out.back().bytes.size());
    }
  }
  return out;
}

void FileMonitor::advance(std::uint64_t slot, std::uint64_t delivered) {
  auto it = tracked_.find(slot);
  if (it == tracked_.end()) return;
  auto& t = *it->second;
  t.committed = std::min(t.read_pos, t.committed + delivered);
}

std::vector<Checkpoint> FileMonitor::checkpoints() const {
  std::vector<Checkpoint> out;
  std::int64_t now = unix_now();
  for (const auto& [slot, t] : tracked_) {
    if (t->rotated && t->final_sent && t->committed == t->read_pos) continue;
    out.push_back(Checkpoint{t->path, t->id, t->committed, now});
  }
  // Entries for paths not seen this run are kept as they were.
  for (const auto& c : restored_) out.push_back(c);
  return out;
}

void FileMonitor::save() {
  if (checkpoint_file_) save_checkpoints(*checkpoint_file_, checkpoints());
}

// -- forwarder --------------------------------------------------------------

Forwarder::Forwarder(std::vector<fs::path> paths, ForwarderOptions options)
    : monitor_(std::move(paths), options.state_dir
                                     ? std::optional<fs::path>(*options.state_dir / "checkpoints.json")
                                     : std::nullopt),
      options_(std::move(options)) {
  if (options_.host.empty()) options_.host = machine_name();
  if (options_.rules.breaking.empty() && options_.rules.extraction.empty()) {
    options_.rules.breaking = ingest::default_break_rules();
    options_.rules.extraction = ingest::default_extraction_rules();
  }
}

Forwarder::~Forwarder() {
  if (running_) stop(false);
  disconnect();
}

bool Forwarder::ensure_connected() {
  if (fd_ >= 0) return true;
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  std::string port = std::to_string(options_.dest.port);
  if (::getaddrinfo(options_.dest.host.c_str(), port.c_str(), &hints, &res) != 0) return false;
  for (addrinfo* a = res; a; a = a->ai_next) {
    int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      fd_ = fd;
      break;
    }
    ::close(fd);
  }
  ::freeaddrinfo(res);
  return fd_ >= 0;
}

void Forwarder::disconnect() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

bool Forwarder::send_all(std::string_view bytes) {
  while (!bytes.empty()) {
    ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      ++stats_.send_failures;
      disconnect();
      return false;
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
  last_send_ = std::chrono::steady_clock::now();
  return true;
}

std::size_t Forwarder::poll_once(bool flush_pending) {
  std::lock_guard lock(mu_);
  std::size_t shipped = 0;
  bool connected = ensure_connected();
  if (!connected) {
    // Nothing is read while the indexer is unreachable.
    monitor_.save();
    return 0;
  }
  std::set<std::uint64_t> fresh;
  for (auto& chunk : monitor_.poll(options_.max_read_bytes)) {
    auto& p = pending_[chunk.slot];
    p.source = chunk.source;
    p.bytes += chunk.bytes;
    if (!chunk.bytes.empty()) fresh.insert(chunk.slot);
    if (chunk.final) p.final = true;
  }

  for (auto& [slot, p] : pending_) {
    if (fresh.count(slot)) p.quiet_polls = 0;
    else ++p.quiet_polls;
    if (p.bytes.empty() || !connected) continue;

    auto sourcetype = ingest::infer_sourcetype(p.source);
    ingest::EventBreaker breaker(ingest::break_rule_for(options_.rules.breaking, sourcetype));
    auto spans = ingest::break_spans(p.bytes, breaker);
    bool line_mode = breaker.rule().mode == ingest::BreakMode::kLine;
    bool ends_line = p.bytes.back() == '\n';
    // The last event is complete once its file is gone, the caller forces it,
    // or its line is finished and no continuation line has shown up.
    bool release_all = flush_pending || p.final ||
                       (ends_line && (line_mode || p.quiet_polls >= options_.idle_flush_polls));

    std::size_t ship = spans.size();
    if (!release_all && ship > 0) --ship;
    std::size_t consumed = 0;
    bool ok = true;
    for (std::size_t i = 0; i < ship && ok; ++i) {
      Event e;
      e.raw = ingest::sanitize_utf8(std::string_view(p.bytes).substr(spans[i].begin, spans[i].end - spans[i].begin));
      e.host = options_.host;
      e.source = p.source;
      e.sourcetype = sourcetype;
      if (auto ts = ingest::parse_timestamp(e.raw)) p.last_ts = *ts;
      e.timestamp = p.last_ts;
      for (const auto& piece : split_oversize(e)) {
        if (!send_all(encode_frame(piece))) {
          ok = false;
          break;
        }
        ++stats_.frames_sent;
      }
      if (!ok) break;
      ++stats_.events_sent;
      ++shipped;
      consumed = i + 1 < spans.size() ? spans[i + 1].begin : p.bytes.size();
    }
    if (ok && release_all) consumed = p.bytes.size();  // whitespace residue too
    // Unsent bytes stay pending; the checkpoint does not cover them.
    if (!ok) connected = false;
    if (consumed > 0) {
      monitor_.advance(slot, consumed);
      p.bytes.erase(0, consumed);
    }
  }
  std::erase_if(pending_, [](const auto& kv) { return kv.second.bytes.empty(); });

  if (fd_ >= 0 &&
      std::chrono::steady_clock::now() - last_send_ >= options_.heartbeat_interval) {
    if (send_all(encode_heartbeat())) ++stats_.heartbeats_sent;
  }
  monitor_.save();
  return shipped;
}

void Forwarder::flush() { poll_once(true); }

void Forwarder::start() {
  running_ = true;
  loop_ = std::thread([this] {
    while (running_) {
      poll_once(false);
      auto until = std::chrono::steady_clock::now() + options_.poll_interval;
      while (running_ && std::chrono::steady_clock::now() < until)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  });
}

void Forwarder::stop(bool flush_pending) {
  running_ = false;
  if (loop_.joinable()) loop_.join();
  if (flush_pending) flush();
  else {
    std::lock_guard lock(mu_);
    monitor_.save();
  }
  std::lock_guard lock(mu_);
  disconnect();
}

ForwarderStats Forwarder::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

// -- receiver ---------------------------------------------------------------

Receiver::Receiver(index::IndexHandle& index, ReceiverOptions options)
    : index_(index), options_(std::move(options)) {
  if (options_.rules.extraction.empty()) options_.rules.extraction = ingest::default_extraction_rules();
  extractor_ = ingest::Extractor(options_.rules.extraction);
}

Receiver::~Receiver() { stop(); }

void Receiver::start() {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  std::string port = std::to_string(options_.listen.port);
  const char* host = options_.listen.host.empty() ? nullptr : options_.listen.host.c_str();
  if (int rc = ::getaddrinfo(host, port.c_str(), &hints, &res); rc != 0)
    throw Error("cannot resolve listen address: " + std::string(gai_strerror(rc)));
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 64) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw Error("cannot listen on " + options_.listen.host + ":" + port + ": " + std::strerror(errno));
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                           : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  listen_fd_ = fd;
  running_ = true;
  writer_ = std::thread([this] { writer_loop(); });
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Receiver::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  not_full_.notify_all();
  for (auto& t : readers_)
    if (t.joinable()) t.join();
  not_empty_.notify_all();
  if (writer_.joinable()) writer_.join();
  index_.flush();
}

void Receiver::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::lock_guard lock(mu_);
    ++stats_.connections;
    conn_fds_.push_back(fd);
    readers_.emplace_back([this, fd] { serve(fd); });
  }
}

void Receiver::serve(int fd) {
  FrameDecoder decoder;
  char buf[65536];
  // Source-local timestamp inheritance for events sent without one.
  std::map<std::string, Timestamp> last_ts;
  try {
    while (running_) {
      pollfd p{fd, POLLIN, 0};
      int rc = ::poll(&p, 1, 100);
      if (rc == 0) continue;
      if (rc < 0 && errno == EINTR) continue;
      ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      decoder.feed(std::string_view(buf, static_cast<std::size_t>(n)));
      while (auto frame = decoder.next()) {
        if (frame->type == FrameType::kHeartbeat) {
          std::lock_guard lock(mu_);
          ++stats_.heartbeats;
          last_heartbeat_ = std::chrono::steady_clock::now();
          continue;
        }
        Event e = decode_event_payload(frame->payload);
        if (e.timestamp == kUnparsedTime) {
          if (auto ts = ingest::parse_timestamp(e.raw)) e.timestamp = *ts;
          else e.timestamp = last_ts[e.source];
        }
        last_ts[e.source] = e.timestamp;
        enqueue(std::move(e));
      }
    }
    // A partial frame at EOF is dropped: nothing half-decoded is indexed.
  } catch (const ProtocolError& err) {
    std::lock_guard lock(mu_);
    ++stats_.protocol_errors;
  }
  std::lock_guard lock(mu_);
  std::erase(conn_fds_, fd);
  ::close(fd);
}

void Receiver::enqueue(Event e) {
  std::unique_lock lock(mu_);
  not_full_.wait(lock, [&] { return queue_.size() < options_.queue_bound || !running_; });
  queue_.push_back(std::move(e));
  not_empty_.notify_one();
}

void Receiver::writer_loop() {
  std::unique_lock lock(mu_);
  while (true) {
    not_empty_.wait(lock, [&] { return !queue_.empty() || !running_; });
    if (queue_.empty()) {
      if (!running_) break;
      continue;
    }
    Event e = std::move(queue_.front());
    queue_.pop_front();
    writer_busy_ = true;
    not_full_.notify_one();
    lock.unlock();
    extractor_.extract(e);
    index_.index_event(e);
    lock.lock();
    writer_busy_ = false;
    ++stats_.events_indexed;
    progress_.notify_all();
  }
  progress_.notify_all();
}

bool Receiver::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  return progress_.wait_for(lock, timeout, [&] { return queue_.empty() && !writer_busy_; });
}

bool Receiver::wait_for(std::size_t n, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  return progress_.wait_for(lock, timeout, [&] { return stats_.events_indexed >= n; });
}

ReceiverStats Receiver::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::optional<std::chrono::steady_clock::time_point> Receiver::last_heartbeat() const {
  std::lock_guard lock(mu_);
  return last_heartbeat_;
}

}  // namespace logforge::net
