#include "resotune/jpeg_scan.hpp"

#include <csetjmp>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>

#include <jpeglib.h>

#include "resotune/error.hpp"

namespace resotune {

PixelRaster::PixelRaster(int w, int h, int c, std::uint8_t fill)
    : width(w),
      height(h),
      channels(c),
      samples(static_cast<std::size_t>(w) * h * c, fill) {}

ScanIndexedImage::ScanIndexedImage(std::shared_ptr<const Bytes> bytes,
                                   std::vector<std::size_t> scan_offsets,
                                   int width, int height, int components,
                                   bool progressive)
    : bytes_(std::move(bytes)),
      offsets_(std::move(scan_offsets)),
      width_(width),
      height_(height),
      components_(components),
      progressive_(progressive) {}

namespace {

constexpr std::uint8_t kMarkerPrefix = 0xFF;
constexpr std::uint8_t kSOI = 0xD8;
constexpr std::uint8_t kEOI = 0xD9;
constexpr std::uint8_t kSOS = 0xDA;
constexpr std::uint8_t kSOF2 = 0xC2;

bool is_rst(std::uint8_t code) { return code >= 0xD0 && code <= 0xD7; }

bool is_sof(std::uint8_t code) {
  return code >= 0xC0 && code <= 0xCF && code != 0xC4 && code != 0xC8 &&
         code != 0xCC;
}

struct ScanSegment {
  std::size_t marker_offset;   // position of the 0xFF of FF DA
  std::size_t entropy_begin;   // first byte after the SOS header
  std::size_t entropy_end;     // position of the next marker (or stream end)
};

struct MarkerWalk {
  std::vector<ScanSegment> scans;
  int width = 0;
  int height = 0;
  int components = 0;
  bool progressive = false;
};

// Skips entropy-coded data starting at pos. Returns the offset of the 0xFF
// that begins the next real marker, or bytes.size().
std::size_t skip_entropy(ByteView bytes, std::size_t pos) {
  const std::size_t n = bytes.size();
  while (pos < n) {
    if (bytes[pos] != kMarkerPrefix) {
      ++pos;
      continue;
    }
    if (pos + 1 >= n) return n;
    const std::uint8_t next = bytes[pos + 1];
    if (next == 0x00 || is_rst(next)) {
      pos += 2;
    } else if (next == kMarkerPrefix) {
      ++pos;  // fill byte
    } else {
      return pos;
    }
  }
  return n;
}

MarkerWalk walk_markers(ByteView bytes) {
  const std::size_t n = bytes.size();
  if (n < 2 || bytes[0] != kMarkerPrefix || bytes[1] != kSOI) {
    throw Error(ErrorCode::NotAJpeg, "stream does not start with SOI", 0);
  }
  MarkerWalk walk;
  bool frame_seen = false;
  std::size_t pos = 2;
  while (pos < n) {
    if (bytes[pos] != kMarkerPrefix) {
      throw Error(ErrorCode::MalformedMarker,
                  "expected marker at offset " + std::to_string(pos), pos);
    }
    while (pos < n && bytes[pos] == kMarkerPrefix) ++pos;
    if (pos >= n) break;
    const std::uint8_t code = bytes[pos];
    const std::size_t marker_offset = pos - 1;
    ++pos;

    if (code == kEOI) break;
    if (is_rst(code) || code == 0x01) continue;
    if (code == kSOI || code == 0x00) {
      throw Error(ErrorCode::MalformedMarker,
                  "unexpected marker at offset " + std::to_string(marker_offset),
                  marker_offset);
    }

    if (pos + 2 > n) break;
    const std::size_t len = (std::size_t{bytes[pos]} << 8) | bytes[pos + 1];
    if (len < 2) {
      throw Error(ErrorCode::MalformedMarker,
                  "segment length < 2 at offset " + std::to_string(pos), pos);
    }
    if (pos + len > n) break;

    if (is_sof(code)) {
      if (len < 8) {
        throw Error(ErrorCode::MalformedMarker, "short frame header", pos);
      }
      walk.height = (bytes[pos + 3] << 8) | bytes[pos + 4];
      walk.width = (bytes[pos + 5] << 8) | bytes[pos + 6];
      walk.components = bytes[pos + 7];
      walk.progressive = code == kSOF2;
      frame_seen = true;
      pos += len;
    } else if (code == kSOS) {
      if (!frame_seen) {
        throw Error(ErrorCode::MalformedMarker, "SOS before frame header",
                    marker_offset);
      }
      const std::size_t entropy_begin = pos + len;
      const std::size_t entropy_end = skip_entropy(bytes, entropy_begin);
      walk.scans.push_back({marker_offset, entropy_begin, entropy_end});
      pos = entropy_end;
    } else {
      pos += len;
    }
  }
  if (walk.scans.empty()) {
    throw Error(ErrorCode::TruncatedHeader,
                "stream ends before the first SOS marker", n);
  }
  return walk;
}

ScanIndexedImage make_indexed(std::shared_ptr<const Bytes> owned) {
  MarkerWalk walk = walk_markers(*owned);
  std::vector<std::size_t> offsets;
  offsets.reserve(walk.scans.size());
  for (const auto& s : walk.scans) offsets.push_back(s.marker_offset);
  return ScanIndexedImage(std::move(owned), std::move(offsets), walk.width,
                          walk.height, walk.components, walk.progressive);
}

// ---- libjpeg glue -------------------------------------------------------

struct ErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<ErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

// Warnings (premature end of data, corrupt bytes) are expected on truncated
// streams and are not failures.
void on_emit_message(j_common_ptr, int) {}

struct DecodeSink {
  // Called once the output geometry is known; returns the row buffer base.
  std::function<std::uint8_t*(int w, int h, int c)> begin_image;
  std::function<void()> end_image;
};

struct DecodeStatus {
  bool ok = true;
  std::size_t offset = 0;
  char message[JMSG_LENGTH_MAX] = {};
};

// All C++ objects with destructors live in the caller; this frame holds
// only trivially destructible state so longjmp is well-defined.
void decode_with_libjpeg(ByteView bytes, bool all_prefixes,
                         const DecodeSink& sink, DecodeStatus& status) {
  jpeg_decompress_struct cinfo;
  ErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_error_exit;
  err.pub.emit_message = on_emit_message;
  err.message[0] = '\0';

  if (setjmp(err.jump)) {
    status.ok = false;
    status.offset = cinfo.src != nullptr
                        ? bytes.size() - cinfo.src->bytes_in_buffer
                        : 0;
    std::snprintf(status.message, sizeof(status.message), "%s", err.message);
    jpeg_destroy_decompress(&cinfo);
    return;
  }

  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.do_block_smoothing = FALSE;
  cinfo.dct_method = JDCT_ISLOW;
  if (cinfo.jpeg_color_space == JCS_GRAYSCALE) {
    cinfo.out_color_space = JCS_GRAYSCALE;
  } else if (cinfo.jpeg_color_space == JCS_YCbCr ||
             cinfo.jpeg_color_space == JCS_RGB) {
    cinfo.out_color_space = JCS_RGB;
  } else {
    std::snprintf(err.message, sizeof(err.message),
                  "unsupported color space %d",
                  static_cast<int>(cinfo.jpeg_color_space));
    std::longjmp(err.jump, 1);
  }
  cinfo.buffered_image = all_prefixes ? TRUE : FALSE;
  jpeg_start_decompress(&cinfo);

  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  const int c = cinfo.output_components;
  const std::size_t stride = static_cast<std::size_t>(w) * c;

  auto read_rows = [&](std::uint8_t* base) {
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = base + cinfo.output_scanline * stride;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
  };

  if (all_prefixes) {
    while (!jpeg_input_complete(&cinfo)) {
      jpeg_start_output(&cinfo, cinfo.input_scan_number);
      read_rows(sink.begin_image(w, h, c));
      jpeg_finish_output(&cinfo);
      sink.end_image();
    }
  } else {
    read_rows(sink.begin_image(w, h, c));
    sink.end_image();
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
}

// libjpeg silently accepts a scan with no entropy data (it zero-fills and
// warns); treat that as malformed.
void check_scan_payloads(ByteView bytes) {
  MarkerWalk walk;
  try {
    walk = walk_markers(bytes);
  } catch (const Error& e) {
    throw Error(ErrorCode::DecodeFailure, e.what(), e.offset().value_or(0));
  }
  for (const auto& scan : walk.scans) {
    if (scan.entropy_begin >= scan.entropy_end) {
      throw Error(ErrorCode::DecodeFailure,
                  "scan at offset " + std::to_string(scan.marker_offset) +
                      " has no entropy-coded data",
                  scan.entropy_begin);
    }
  }
}

}  // namespace

ScanIndexedImage index_scans(ByteView bytes) {
  return make_indexed(std::make_shared<const Bytes>(bytes.begin(), bytes.end()));
}

ScanIndexedImage index_scans(Bytes bytes) {
  return make_indexed(std::make_shared<const Bytes>(std::move(bytes)));
}

Bytes truncate_at_scan(const ScanIndexedImage& img, std::size_t k) {
  if (k == 0) {
    throw Error(ErrorCode::ZeroScans, "at least one scan must be read");
  }
  const ByteView all = img.bytes();
  if (k >= img.scan_count()) return Bytes(all.begin(), all.end());
  const std::size_t end = img.scan_offsets()[k];
  Bytes out;
  out.reserve(end + 2);
  out.insert(out.end(), all.begin(), all.begin() + static_cast<std::ptrdiff_t>(end));
  out.push_back(kMarkerPrefix);
  out.push_back(kEOI);
  return out;
}

std::size_t cumulative_bytes(const ScanIndexedImage& img, std::size_t k) {
  if (k == 0) {
    throw Error(ErrorCode::ZeroScans, "at least one scan must be read");
  }
  if (k >= img.scan_count()) return img.total_bytes();
  return img.scan_offsets()[k];
}

PixelRaster decode(ByteView bytes) {
  check_scan_payloads(bytes);
  PixelRaster raster;
  DecodeSink sink{
      [&](int w, int h, int c) {
        raster = PixelRaster(w, h, c);
        return raster.samples.data();
      },
      [] {}};
  DecodeStatus status;
  decode_with_libjpeg(bytes, false, sink, status);
  if (!status.ok) {
    throw Error(ErrorCode::DecodeFailure,
                std::string("decode failed: ") + status.message, status.offset);
  }
  return raster;
}

std::vector<PixelRaster> decode_all_prefixes(const ScanIndexedImage& img) {
  check_scan_payloads(img.bytes());
  std::vector<PixelRaster> out;
  out.reserve(img.scan_count());
  PixelRaster current;
  DecodeSink sink{
      [&](int w, int h, int c) {
        current = PixelRaster(w, h, c);
        return current.samples.data();
      },
      [&] { out.push_back(std::move(current)); }};
  DecodeStatus status;
  decode_with_libjpeg(img.bytes(), true, sink, status);
  if (!status.ok) {
    throw Error(ErrorCode::DecodeFailure,
                std::string("decode failed: ") + status.message, status.offset);
  }
  // Buffered mode emits one pass per scan; a baseline stream yields one.
  while (out.size() < img.scan_count()) out.push_back(out.back());
  return out;
}

}  // namespace resotune
