#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "logforge/event.hpp"

namespace logforge::gen {

struct GenProfile {
  std::uint64_t seed = 42;
  std::size_t events = 10000;     // app + access events
  double attack_rate = 0.0;       // fraction of all events that carry an attack
  double error_rate = 0.01;       // fraction of app events logged at ERROR
  double access_share = 0.5;
  Timestamp start = 1516176000LL * 1000000;  // 2018-01-17 08:00:00 UTC
  std::size_t pause_every = 700;  // app events between seeded >2 s pauses; 0 = none
};

struct ManifestItem {
  std::string type;  // attack, pause, incomplete_transaction, duration_outlier
  std::string rule;  // attacks only
  std::string file;
  std::size_t line = 0;   // 1-based physical line of the event's first line
  std::size_t event = 0;  // 0-based event index within its file
  std::string detail;     // vector, session id, gap or duration
};

struct Manifest {
  GenProfile profile;
  std::size_t app_events = 0;
  std::size_t access_events = 0;
  std::vector<ManifestItem> attacks;
  std::vector<ManifestItem> anomalies;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

inline constexpr const char* kAppFile = "app.log";
inline constexpr const char* kAccessFile = "access.log";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kLookupFile = "lookup.csv";

// Rule ids in the order attacks are assigned.
const std::vector<std::string>& attack_rules();
// Vectors per rule, decoded form. The first one of each rule is used first.
const std::vector<std::string>& attack_vectors(const std::string& rule);

// domain,ip table that makes the seeded csrf referers cross-site.
std::string referer_lookup_csv();

struct Corpus {
  std::string app_log;
  std::string access_log;
  Manifest manifest;
};

// Same profile, same bytes.
Corpus generate(const GenProfile& p);
// Writes app.log, access.log, manifest.json and lookup.csv into dir.
Manifest generate_corpus(const GenProfile& p, const std::filesystem::path& dir);

}  // namespace logforge::gen
