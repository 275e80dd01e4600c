#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace resotune {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Decoded 8-bit image, row-major, interleaved channels.
struct PixelRaster {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> samples;

  PixelRaster() = default;
  PixelRaster(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c = 0) {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const PixelRaster&) const = default;
};

/// A JPEG byte stream together with the offsets of its SOS markers.
/// The byte buffer is shared and immutable, so copies are cheap.
class ScanIndexedImage {
 public:
  ScanIndexedImage(std::shared_ptr<const Bytes> bytes,
                   std::vector<std::size_t> scan_offsets, int width,
                   int height, int components, bool progressive);

  ByteView bytes() const { return *bytes_; }
  const std::shared_ptr<const Bytes>& shared_bytes() const { return bytes_; }
  const std::vector<std::size_t>& scan_offsets() const { return offsets_; }
  std::size_t scan_count() const { return offsets_.size(); }
  std::size_t header_end() const { return offsets_.front(); }
  std::size_t total_bytes() const { return bytes_->size(); }
  int width() const { return width_; }
  int height() const { return height_; }
  int components() const { return components_; }
  bool progressive() const { return progressive_; }

 private:
  std::shared_ptr<const Bytes> bytes_;
  std::vector<std::size_t> offsets_;
  int width_;
  int height_;
  int components_;
  bool progressive_;
};

/// Walks the marker segments of a JPEG stream and records every SOS offset.
/// Entropy-coded data is skipped byte-wise: 0xFF00 stuffing, RST0..7 and fill
/// bytes never terminate a scan.
ScanIndexedImage index_scans(ByteView bytes);
ScanIndexedImage index_scans(Bytes bytes);

/// Prefix holding the first k scans followed by EOI. k >= scan_count returns
/// the original stream unchanged.
Bytes truncate_at_scan(const ScanIndexedImage& img, std::size_t k);

/// Bytes consumed by the first k scans (header included), excluding the EOI
/// that truncate_at_scan appends.
std::size_t cumulative_bytes(const ScanIndexedImage& img, std::size_t k);

/// Decodes a (possibly scan-truncated) JPEG. Coefficients that were never
/// delivered are left at zero; libjpeg's block smoothing is disabled so a
/// k-scan prefix decodes to exactly what those k scans carry.
PixelRaster decode(ByteView bytes);

/// Decodes every scan prefix of a progressive stream in a single pass using
/// buffered-image mode. Element k-1 equals decode(truncate_at_scan(img, k)).
std::vector<PixelRaster> decode_all_prefixes(const ScanIndexedImage& img);

}  // namespace resotune
