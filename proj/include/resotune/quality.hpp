#pragma once

#include <optional>
#include <vector>

#include "resotune/jpeg_scan.hpp"

namespace resotune {

/// Center crop expressed as a retained *area* fraction. The linear factor
/// applied to each side is sqrt(area_ratio).
class CropSpec {
 public:
  explicit CropSpec(double area_ratio = 1.0);

  double area_ratio() const { return area_ratio_; }
  double linear_ratio() const { return linear_ratio_; }

  int crop_width(int width) const;
  int crop_height(int height) const;

  bool operator==(const CropSpec& o) const { return area_ratio_ == o.area_ratio_; }

 private:
  double area_ratio_;
  double linear_ratio_;
};

enum class SsimWindow { Uniform, Gaussian };

struct SsimParams {
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
  SsimWindow window = SsimWindow::Uniform;
  int window_size = 8;
  double gaussian_sigma = 1.5;  // only for SsimWindow::Gaussian
};

struct Size2 {
  int width = 0;
  int height = 0;
  static Size2 square(int s) { return {s, s}; }
};

/// Single-channel floating-point plane used for metric computation.
struct LumaPlane {
  int width = 0;
  int height = 0;
  std::vector<double> values;
};

/// Bilinear interpolation, half-pixel-centered (align_corners = false),
/// edge clamped; results are rounded to nearest.
PixelRaster resize(const PixelRaster& r, Size2 target);

PixelRaster center_crop(const PixelRaster& r, const CropSpec& c);

/// BT.601 luma (0.299, 0.587, 0.114) for RGB input; gray passes through.
LumaPlane to_luma(const PixelRaster& r);

double ssim(const PixelRaster& a, const PixelRaster& b,
            const SsimParams& p = SsimParams{});
double ssim(const LumaPlane& a, const LumaPlane& b,
            const SsimParams& p = SsimParams{});

/// Peak signal-to-noise ratio in dB; std::nullopt stands for +infinity
/// (identical inputs).
std::optional<double> psnr(const PixelRaster& a, const PixelRaster& b);

/// resize(center_crop(x, crop), res): the preprocessing applied before both
/// inference and quality measurement.
PixelRaster prepare_input(const PixelRaster& decoded, const CropSpec& crop,
                          Size2 inference_res);

/// SSIM of the k-scan truncation against the full decode after both are
/// cropped and resized to the inference resolution.
double quality_at_scan(const ScanIndexedImage& img, std::size_t k,
                       Size2 inference_res, const CropSpec& crop,
                       const SsimParams& p = SsimParams{});

}  // namespace resotune
