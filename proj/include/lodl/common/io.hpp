#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lodl {

/// Malformed, truncated or version-mismatched file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);
std::uint64_t parse_u64(std::string_view s);

std::string join_doubles(std::span<const double> values, char sep = ' ');
std::vector<double> split_doubles(std::string_view s, char sep = ' ');
std::vector<std::string_view> split(std::string_view s, char sep);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// FNV-1a over bytes; used for cache keys.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace lodl
