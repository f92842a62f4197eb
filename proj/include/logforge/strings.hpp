#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace logforge {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
bool iequals(std::string_view a, std::string_view b);
bool icontains(std::string_view haystack, std::string_view needle);

// Percent-decoding with '+' left untouched. offsets[i] is the position in the
// input where decoded character i starts; offsets has size decoded+1.
struct DecodedText {
  std::string text;
  std::vector<std::size_t> offsets;
};
DecodedText url_decode_mapped(std::string_view in);
std::string url_decode(std::string_view in);

// Formats a number the way result tables print it: integral values without a
// fractional part, everything else with up to 10 significant digits.
std::string format_number(double v);
std::optional<double> parse_number(std::string_view s);

}  // namespace logforge
