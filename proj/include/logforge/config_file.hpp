#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

namespace logforge {

// Reads a TOML (by .toml extension) or JSON document into a JSON value.
// Throws ConfigError on I/O or syntax failure.
nlohmann::json read_config_document(const std::filesystem::path& path);

}  // namespace logforge
