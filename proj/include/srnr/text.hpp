#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace srnr::text {

// Shortest round-trip decimal ("0", "1", "0.0214", "inf", "-inf", "nan").
std::string format_double(double v);

// Accepts anything format_double emits. Throws InvalidArgument on junk.
double parse_double(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

// Writes `content` verbatim; throws Io on failure.
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace srnr::text
