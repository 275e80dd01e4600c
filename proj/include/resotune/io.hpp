#pragma once

#include <filesystem>
#include <string_view>

#include "resotune/jpeg_scan.hpp"

namespace resotune {

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, ByteView bytes);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace resotune
