#pragma once

#include <vector>

#include "resotune/jpeg_scan.hpp"

namespace resotune {

/// One entry of a progressive scan script (component indices, spectral
/// selection Ss..Se, successive approximation Ah/Al).
struct ScanSpec {
  std::vector<int> components;
  int ss = 0;
  int se = 0;
  int ah = 0;
  int al = 0;
};

struct EncodeOptions {
  int quality = 90;
  bool progressive = true;
  /// Empty selects libjpeg's standard progression.
  std::vector<ScanSpec> scan_script;
  /// Restart interval in MCUs; 0 disables RST markers.
  unsigned restart_interval = 0;
  /// Luma sampling factors for color input (2,2 = 4:2:0; 1,1 = 4:4:4).
  int h_samp = 2;
  int v_samp = 2;
};

struct EncodedJpeg {
  Bytes bytes;
  /// Scan count the encoder reports for the emitted stream.
  int scan_count = 0;
};

/// Thin wrapper over libjpeg's compressor, used to build fixtures and the
/// synthetic dataset. Not a general-purpose encoder.
EncodedJpeg encode_jpeg(const PixelRaster& raster, const EncodeOptions& opts);

/// Spectral-selection-only script for a single gray component using the given
/// band boundaries, e.g. {0, 2, 9, 27, 63} -> DC, 1-2, 3-9, 10-27, 28-63.
std::vector<ScanSpec> spectral_script_gray(const std::vector<int>& band_ends);

}  // namespace resotune
