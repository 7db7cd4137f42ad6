#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace doorsim {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// "%.17g"; round-trips every finite double through strtod.
std::string format_double(double v);

/// RFC 4648 base64 of the little-endian bytes of each double.
std::string encode_doubles_base64(std::span<const double> values);
std::vector<double> decode_doubles_base64(std::string_view text);

}  // namespace doorsim
