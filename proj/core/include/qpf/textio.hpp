#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace qpf {

/// Shortest decimal representation that round-trips the double exactly
/// (std::to_chars); locale-independent, so files are byte-reproducible.
std::string fmt_double(double x);

std::string read_file(const std::string& path);

/// Writes via a temp file in the same directory followed by a rename.
void write_file_atomic(const std::string& path, std::string_view content);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

double parse_double(std::string_view s);   // throws on trailing garbage
long parse_long(std::string_view s);

} // namespace qpf
