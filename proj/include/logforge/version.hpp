#pragma once

namespace logforge {

inline constexpr const char* kVersionString = "0.1.0";

}  // namespace logforge
