#include "resotune/jpeg_encode.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <string>

#include <jpeglib.h>

#include "resotune/error.hpp"

namespace resotune {

namespace {

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

void on_emit_message(j_common_ptr, int) {}

struct EncodeStatus {
  bool ok = true;
  char message[JMSG_LENGTH_MAX] = {};
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  int scans = 0;
};

void encode_with_libjpeg(const PixelRaster& raster, const EncodeOptions& opts,
                         jpeg_scan_info* script, int script_len,
                         EncodeStatus& status) {
  jpeg_compress_struct cinfo;
  ErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_error_exit;
  err.pub.emit_message = on_emit_message;

  if (setjmp(err.jump)) {
    status.ok = false;
    std::snprintf(status.message, sizeof(status.message), "%s", err.message);
    jpeg_destroy_compress(&cinfo);
    return;
  }

  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &status.buffer, &status.size);
  cinfo.image_width = static_cast<JDIMENSION>(raster.width);
  cinfo.image_height = static_cast<JDIMENSION>(raster.height);
  cinfo.input_components = raster.channels;
  cinfo.in_color_space = raster.channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, opts.quality, TRUE);
  cinfo.optimize_coding = TRUE;
  cinfo.dct_method = JDCT_ISLOW;
  if (raster.channels == 3) {
    cinfo.comp_info[0].h_samp_factor = opts.h_samp;
    cinfo.comp_info[0].v_samp_factor = opts.v_samp;
    cinfo.comp_info[1].h_samp_factor = 1;
    cinfo.comp_info[1].v_samp_factor = 1;
    cinfo.comp_info[2].h_samp_factor = 1;
    cinfo.comp_info[2].v_samp_factor = 1;
  }
  cinfo.restart_interval = opts.restart_interval;
  if (opts.progressive) {
    if (script_len > 0) {
      cinfo.scan_info = script;
      cinfo.num_scans = script_len;
    } else {
      jpeg_simple_progression(&cinfo);
    }
    status.scans = cinfo.num_scans;
  } else {
    status.scans = 1;
  }

  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride =
      static_cast<std::size_t>(raster.width) * raster.channels;
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(raster.samples.data() +
                                     cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

}  // namespace

EncodedJpeg encode_jpeg(const PixelRaster& raster, const EncodeOptions& opts) {
  if (raster.channels != 1 && raster.channels != 3) {
    throw Error(ErrorCode::InvalidConfig, "encoder accepts 1 or 3 channels");
  }
  std::vector<jpeg_scan_info> script;
  for (const auto& s : opts.scan_script) {
    if (s.components.empty() ||
        s.components.size() > static_cast<std::size_t>(MAX_COMPS_IN_SCAN)) {
      throw Error(ErrorCode::InvalidConfig, "bad scan component list");
    }
    jpeg_scan_info info{};
    info.comps_in_scan = static_cast<int>(s.components.size());
    for (std::size_t i = 0; i < s.components.size(); ++i) {
      info.component_index[i] = s.components[i];
    }
    info.Ss = s.ss;
    info.Se = s.se;
    info.Ah = s.ah;
    info.Al = s.al;
    script.push_back(info);
  }

  EncodeStatus status;
  encode_with_libjpeg(raster, opts, script.data(),
                      static_cast<int>(script.size()), status);
  EncodedJpeg out;
  if (status.buffer != nullptr) {
    if (status.ok) out.bytes.assign(status.buffer, status.buffer + status.size);
    std::free(status.buffer);
  }
  if (!status.ok) {
    throw Error(ErrorCode::InvalidConfig,
                std::string("encode failed: ") + status.message);
  }
  out.scan_count = status.scans;
  return out;
}

std::vector<ScanSpec> spectral_script_gray(const std::vector<int>& band_ends) {
  std::vector<ScanSpec> script;
  int start = 0;
  for (int end : band_ends) {
    script.push_back({{0}, start, end, 0, 0});
    start = end + 1;
  }
  return script;
}

}  // namespace resotune
