#pragma once

#include <cstdint>
#include <string>

namespace resotune {

/// Locale-independent "%.6g" used for every float in CSV output.
std::string fmt_g6(double v);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& data);

}  // namespace resotune
