#ifndef HPIM_IO_HPP_
#define HPIM_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace hpim::io {

/// Formats a double with 17 significant digits (round-trips exactly).
std::string format_double(double v);

/// Parses a decimal produced by format_double (or any strtod input).
double parse_double(std::string_view text);

std::string read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames, so readers never see a
/// partially written artifact.
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Calls fn(json, line_number) for every non-blank line of a JSON-lines file.
/// Malformed lines raise ParseError naming the file and line.
void for_each_json_line(const std::filesystem::path& path,
                        const std::function<void(const nlohmann::json&, std::size_t)>& fn);

/// 64-bit FNV-1a over raw bytes, rendered as 16 hex digits.
std::string content_hash(std::string_view bytes);

}  // namespace hpim::io

#endif  // HPIM_IO_HPP_
