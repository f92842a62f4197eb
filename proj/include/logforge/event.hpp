#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace logforge {

using Timestamp = std::int64_t;  // microseconds since the Unix epoch, 0 = unparsed
using EventId = std::uint64_t;

inline constexpr Timestamp kUnparsedTime = 0;

struct Event {
  EventId id = 0;
  std::string raw;
  Timestamp timestamp = kUnparsedTime;
  std::string host;
  std::string source;
  std::string sourcetype;
  std::map<std::string, std::string> fields;

  friend bool operator==(const Event&, const Event&) = default;
};

}  // namespace logforge
