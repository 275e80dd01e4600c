#include "resotune/quality.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "resotune/error.hpp"
#include "resotune/ssim_reference.hpp"

namespace resotune {

CropSpec::CropSpec(double area_ratio)
    : area_ratio_(area_ratio), linear_ratio_(std::sqrt(area_ratio)) {
  if (!(area_ratio > 0.0 && area_ratio <= 1.0)) {
    throw Error(ErrorCode::InvalidCrop,
                "crop area ratio must lie in (0, 1], got " +
                    std::to_string(area_ratio));
  }
}

// The epsilon absorbs sqrt() rounding so that e.g. 0.875 * 448 stays 392.
int CropSpec::crop_width(int width) const {
  return static_cast<int>(std::floor(linear_ratio_ * width + 1e-9));
}

int CropSpec::crop_height(int height) const {
  return static_cast<int>(std::floor(linear_ratio_ * height + 1e-9));
}

namespace {

struct Tap {
  int i0;
  int i1;
  double frac;
};

std::vector<Tap> bilinear_taps(int src, int dst) {
  std::vector<Tap> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int d = 0; d < dst; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    taps[static_cast<std::size_t>(d)] = {i0, i1, s - i0};
  }
  return taps;
}

}  // namespace

PixelRaster resize(const PixelRaster& r, Size2 target) {
  if (target.width < 1 || target.height < 1) {
    throw Error(ErrorCode::EmptyTarget, "resize target must be at least 1x1");
  }
  if (r.width < 1 || r.height < 1) {
    throw Error(ErrorCode::EmptyTarget, "cannot resize an empty raster");
  }
  if (target.width == r.width && target.height == r.height) return r;

  const auto xs = bilinear_taps(r.width, target.width);
  const auto ys = bilinear_taps(r.height, target.height);
  const int c = r.channels;
  const std::size_t src_stride = static_cast<std::size_t>(r.width) * c;
  const std::size_t dst_stride = static_cast<std::size_t>(target.width) * c;

  // Horizontal interpolation of every source row first; the vertical lerp
  // below then combines two of these rows, which is the same arithmetic as
  // evaluating the 4-tap formula point by point.
  std::vector<double> horiz(dst_stride * static_cast<std::size_t>(r.height));
  for (int y = 0; y < r.height; ++y) {
    const std::uint8_t* row = r.samples.data() + y * src_stride;
    double* out = horiz.data() + y * dst_stride;
    for (const Tap& tx : xs) {
      const std::size_t o0 = static_cast<std::size_t>(tx.i0) * c;
      const std::size_t o1 = static_cast<std::size_t>(tx.i1) * c;
      for (int ch = 0; ch < c; ++ch) {
        const double p0 = row[o0 + ch];
        const double p1 = row[o1 + ch];
        *out++ = p0 + tx.frac * (p1 - p0);
      }
    }
  }

  PixelRaster out(target.width, target.height, c);
  std::uint8_t* dst = out.samples.data();
  for (const Tap& ty : ys) {
    const double* top = horiz.data() + ty.i0 * dst_stride;
    const double* bottom = horiz.data() + ty.i1 * dst_stride;
    for (std::size_t i = 0; i < dst_stride; ++i) {
      const double v = top[i] + ty.frac * (bottom[i] - top[i]);
      // Convex combination of 8-bit samples: v is within [0, 255].
      *dst++ = static_cast<std::uint8_t>(v + 0.5);
    }
  }
  return out;
}

PixelRaster center_crop(const PixelRaster& r, const CropSpec& c) {
  const int cw = c.crop_width(r.width);
  const int ch = c.crop_height(r.height);
  if (cw < 1 || ch < 1) {
    throw Error(ErrorCode::InvalidCrop, "crop leaves an empty raster");
  }
  if (cw == r.width && ch == r.height) return r;
  const int x0 = (r.width - cw) / 2;
  const int y0 = (r.height - ch) / 2;
  PixelRaster out(cw, ch, r.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(cw) * r.channels;
  for (int y = 0; y < ch; ++y) {
    const std::uint8_t* src =
        r.samples.data() +
        (static_cast<std::size_t>(y0 + y) * r.width + x0) * r.channels;
    std::copy_n(src, row_bytes,
                out.samples.data() + static_cast<std::size_t>(y) * row_bytes);
  }
  return out;
}

LumaPlane to_luma(const PixelRaster& r) {
  LumaPlane p{r.width, r.height, {}};
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  p.values.resize(n);
  if (r.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) p.values[i] = r.samples[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* s = r.samples.data() + i * 3;
      p.values[i] = 0.299 * s[0] + 0.587 * s[1] + 0.114 * s[2];
    }
  }
  return p;
}

double ssim(const LumaPlane& a, const LumaPlane& b, const SsimParams& p) {
  return SsimReference(a, p).score(b);
}

double ssim(const PixelRaster& a, const PixelRaster& b, const SsimParams& p) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(ErrorCode::DimensionMismatch,
                "ssim inputs differ in dimensions");
  }
  return ssim(to_luma(a), to_luma(b), p);
}

std::optional<double> psnr(const PixelRaster& a, const PixelRaster& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw Error(ErrorCode::DimensionMismatch,
                "psnr inputs differ in dimensions");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const double d = static_cast<double>(a.samples[i]) - b.samples[i];
    sum += d * d;
  }
  if (sum == 0.0) return std::nullopt;
  const double mse = sum / static_cast<double>(a.samples.size());
  return 20.0 * std::log10(255.0) - 10.0 * std::log10(mse);
}

PixelRaster prepare_input(const PixelRaster& decoded, const CropSpec& crop,
                          Size2 inference_res) {
  return resize(center_crop(decoded, crop), inference_res);
}

double quality_at_scan(const ScanIndexedImage& img, std::size_t k,
                       Size2 inference_res, const CropSpec& crop,
                       const SsimParams& p) {
  if (!img.progressive()) {
    throw Error(ErrorCode::NotProgressive,
                "quality_at_scan requires a progressive stream");
  }
  const PixelRaster reference =
      prepare_input(decode(img.bytes()), crop, inference_res);
  const PixelRaster candidate =
      prepare_input(decode(truncate_at_scan(img, k)), crop, inference_res);
  return ssim(reference, candidate, p);
}

}  // namespace resotune
