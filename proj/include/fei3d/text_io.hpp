#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fei3d::text {

/// Shortest decimal form that parses back to the same double; "-0" prints as "0".
std::string format_double(double value);

/// Full-string parse; throws a format error mentioning `context` otherwise.
double parse_double(std::string_view text, const std::string &context);
long long parse_int(std::string_view text, const std::string &context);

std::vector<std::string_view> split(std::string_view line, char sep);

/// "# <tag> key=value key=value"; returns the key/value map or throws when the
/// line does not start with the tag.
std::map<std::string, std::string> parse_directive(std::string_view line, std::string_view tag,
                                                   const std::string &context);

std::string read_text(const std::filesystem::path &path);
void write_text(const std::filesystem::path &path, std::string_view content);

/// Lines without trailing '\r'.
std::vector<std::string> lines(const std::string &content);

}  // namespace fei3d::text
