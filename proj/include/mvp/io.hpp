// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mvp::io {

std::uint32_t crc32(const void* data, std::size_t size) noexcept;
inline std::uint32_t crc32(std::string_view bytes) noexcept {
  return crc32(bytes.data(), bytes.size());
}
/// 8 lowercase hex digits.
std::string hex32(std::uint32_t value);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file. Creates the parent directory if needed.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mvp::io
