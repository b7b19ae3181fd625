#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace chartlab {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Canonical one-decimal rendering used for every number shown to the model.
std::string format_one_decimal(double v);
/// Rounds half away from zero to one decimal place.
double round_one_decimal(double v);

}  // namespace chartlab
