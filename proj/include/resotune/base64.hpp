#pragma once

#include <string>
#include <string_view>

#include "resotune/jpeg_scan.hpp"

namespace resotune {

std::string base64_encode(ByteView data);
/// Throws Error(InvalidConfig) on characters outside the standard alphabet.
Bytes base64_decode(std::string_view text);

}  // namespace resotune
