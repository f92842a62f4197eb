#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "logforge/event.hpp"
#include "logforge/ingest.hpp"

namespace logforge::index {
class IndexHandle;
}

namespace logforge::net {

inline constexpr std::uint16_t kDefaultPort = 9997;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::size_t kMaxPayload = 1u << 20;
inline constexpr std::string_view kMagic = "LFWD";
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::string_view kContinuation = "(cont.)";

enum class FrameType : std::uint8_t { kEvent = 0, kHeartbeat = 1 };

struct Frame {
  FrameType type = FrameType::kEvent;
  std::string payload;
};

// Throws ProtocolError when the event does not fit in one frame.
std::string encode_frame(const Event& e);
std::string encode_heartbeat();

// Decodes exactly one complete frame. Heartbeats are rejected here since they
// carry no event.
Event decode_frame(std::string_view bytes);
Event decode_event_payload(std::string_view payload);

// Largest raw that fits a frame together with this event's metadata.
std::size_t raw_budget(const Event& e);

// Splits an oversize raw into frame-sized pieces. Every piece but the last is
// suffixed with kContinuation. Pieces never cut a UTF-8 sequence.
std::vector<Event> split_oversize(const Event& e);

// Incremental decoder for a byte stream. next() returns nullopt until a whole
// frame is buffered and throws ProtocolError on a bad header.
class FrameDecoder {
 public:
  void feed(std::string_view bytes);
  std::optional<Frame> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
};

// "host:port", "host" or ":port". Throws ConfigError.
Endpoint parse_endpoint(std::string_view text, std::uint16_t default_port = kDefaultPort);

struct FileId {
  std::uint64_t dev = 0;
  std::uint64_t ino = 0;
  friend bool operator==(const FileId&, const FileId&) = default;
};

struct Checkpoint {
  std::string path;
  FileId id;
  std::uint64_t offset = 0;
  std::int64_t last_seen = 0;  // unix seconds
};

std::vector<Checkpoint> load_checkpoints(const std::filesystem::path& file);
// Write-temp-then-rename.
void save_checkpoints(const std::filesystem::path& file, const std::vector<Checkpoint>& cps);

// Bytes read from one tracked file. `final` marks the tail of a rotated-away
// file: nothing more will follow for that slot.
struct MonitorChunk {
  std::uint64_t slot = 0;
  std::string source;
  std::string bytes;
  bool final = false;
};

// Tails files (or every regular file in a directory) from their checkpoint.
// Bytes are handed out once; the caller reports delivery through advance()
// and the checkpoint only moves on delivered bytes.
class FileMonitor {
 public:
  FileMonitor(std::vector<std::filesystem::path> paths,
              std::optional<std::filesystem::path> checkpoint_file = std::nullopt);
  ~FileMonitor();
  FileMonitor(const FileMonitor&) = delete;
  FileMonitor& operator=(const FileMonitor&) = delete;

  std::vector<MonitorChunk> poll(std::size_t max_bytes = 4u << 20);
  void advance(std::uint64_t slot, std::uint64_t delivered);
  void save();

  std::vector<Checkpoint> checkpoints() const;
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  struct Tracked;
  std::vector<std::filesystem::path> expand() const;
  Tracked& track(const std::string& path, FileId id, std::uint64_t offset, int fd);
  void read_into(std::uint64_t slot, Tracked& t, std::size_t budget, std::vector<MonitorChunk>& out);

  std::vector<std::filesystem::path> paths_;
  std::optional<std::filesystem::path> checkpoint_file_;
  std::vector<Checkpoint> restored_;
  std::map<std::uint64_t, std::unique_ptr<Tracked>> tracked_;
  std::uint64_t next_slot_ = 1;
  std::vector<std::string> warnings_;
};

struct ForwarderOptions {
  Endpoint dest;
  std::optional<std::filesystem::path> state_dir;  // holds checkpoints.json
  std::chrono::milliseconds poll_interval{500};
  std::chrono::milliseconds heartbeat_interval{5000};
  std::size_t max_read_bytes = 4u << 20;  // per poll, across files
  int idle_flush_polls = 2;  // held-back event ships after this many quiet polls
  std::string host;  // defaults to the machine name
  ingest::RuleSet rules;
};

struct ForwarderStats {
  std::size_t events_sent = 0;
  std::size_t frames_sent = 0;
  std::size_t heartbeats_sent = 0;
  std::size_t send_failures = 0;
};

// monitor -> break -> frame -> TCP. Ships whole events only: the last event of
// a file is held back until more data arrives, the file goes quiet, or
// flush() is called, since a later line may still belong to it.
class Forwarder {
 public:
  Forwarder(std::vector<std::filesystem::path> paths, ForwarderOptions options);
  ~Forwarder();

  // One monitor cycle. Returns events shipped; 0 when the destination is down.
  std::size_t poll_once(bool flush_pending = false);
  // Ships held-back events and saves checkpoints.
  void flush();

  void start();
  // Stops the background loop. flush=true ships held-back events first.
  void stop(bool flush = true);

  ForwarderStats stats() const;

 private:
  bool ensure_connected();
  bool send_all(std::string_view bytes);
  void disconnect();

  struct Pending {
    std::string bytes;
    Timestamp last_ts = kUnparsedTime;
    int quiet_polls = 0;
    bool final = false;
    std::string source;
  };

  FileMonitor monitor_;
  ForwarderOptions options_;
  std::map<std::uint64_t, Pending> pending_;
  int fd_ = -1;
  std::chrono::steady_clock::time_point last_send_{};
  ForwarderStats stats_;
  mutable std::mutex mu_;
  std::atomic<bool> running_{false};
  std::thread loop_;
};

struct ReceiverOptions {
  Endpoint listen;  // port 0 picks a free port
  std::size_t queue_bound = 10000;
  ingest::RuleSet rules;
};

struct ReceiverStats {
  std::size_t connections = 0;
  std::size_t events_indexed = 0;
  std::size_t heartbeats = 0;
  std::size_t protocol_errors = 0;
};

// Accepts forwarder connections. Each connection has its own reader thread;
// decoded events go through a bounded queue to one writer that extracts
// fields and indexes. A full queue blocks readers, which stalls TCP and in
// turn the forwarders.
class Receiver {
 public:
  Receiver(index::IndexHandle& index, ReceiverOptions options);
  ~Receiver();

  void start();
  void stop();
  std::uint16_t port() const { return port_; }

  // Blocks until the queue is empty and the writer is idle, or the timeout.
  bool wait_idle(std::chrono::milliseconds timeout);
  // Blocks until events_indexed >= n or the timeout.
  bool wait_for(std::size_t n, std::chrono::milliseconds timeout);

  ReceiverStats stats() const;
  std::optional<std::chrono::steady_clock::time_point> last_heartbeat() const;

 private:
  void accept_loop();
  void serve(int fd);
  void writer_loop();
  void enqueue(Event e);

  index::IndexHandle& index_;
  ReceiverOptions options_;
  ingest::Extractor extractor_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::thread writer_;
  std::vector<std::thread> readers_;
  std::vector<int> conn_fds_;

  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::condition_variable progress_;
  std::deque<Event> queue_;
  bool writer_busy_ = false;
  ReceiverStats stats_;
  std::optional<std::chrono::steady_clock::time_point> last_heartbeat_;
};

}  // namespace logforge::net
