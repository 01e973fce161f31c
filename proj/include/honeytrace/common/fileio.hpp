#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "honeytrace/common/types.hpp"

namespace honeytrace {

Bytes read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

}  // namespace honeytrace
