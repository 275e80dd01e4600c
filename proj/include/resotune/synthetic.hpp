#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resotune/jpeg_encode.hpp"
#include "resotune/jpeg_scan.hpp"
#include "resotune/quality.hpp"

namespace resotune {

enum class Shape : int { Disc = 0, Square = 1, Cross = 2, Ring = 3 };
inline constexpr int kShapeClasses = 4;

const char* shape_name(Shape s);

/// Pixel band (apparent object size at the inference resolution) inside which
/// the synthetic backbone recognises objects.
struct ScaleBand {
  double lo = 48.0;
  double hi = 96.0;
  /// Smallest resolvable discriminative detail (ring hole, cross arm).
  double detail_min = 8.0;
  /// Luma threshold separating object from background.
  double object_threshold = 168.0;
};

/// Apparent object side, in pixels, after center-cropping by `crop` and
/// resizing to `resolution`. `object_scale` is the side relative to the full
/// image side.
double apparent_size(double object_scale, const CropSpec& crop, int resolution);

struct SyntheticParams {
  int image_size = 256;
  double scale_log_mean = -1.7147984280919266;  // ln(0.18)
  double scale_log_sigma = 0.35;
  double scale_min = 0.08;
  double scale_max = 0.40;
  double center_jitter = 0.04;
  /// Background texture amplitudes (gray levels) for the smooth value-noise
  /// field and the per-pixel grain.
  double coarse_noise = 30.0;
  double fine_noise = 4.0;
  int quality = 90;
  /// Spectral bands of the gray scan script (6 scans).
  std::vector<int> scan_bands = {0, 2, 5, 10, 27, 63};
};

struct LabeledImage {
  std::string id;
  int label = 0;
  double object_scale = 0.0;
  ScanIndexedImage image;
};

struct Dataset {
  std::vector<LabeledImage> images;
  std::string identifier;  // e.g. "synthetic:n=500,seed=7" or a directory
};

/// Deterministic in (n, seed, params); image i depends only on (seed, i), so
/// a smaller n yields a prefix of a larger one.
Dataset generate_synthetic_scale_dataset(std::size_t n, std::uint64_t seed,
                                         const SyntheticParams& params = {});

/// Renders the raster of image i before encoding (exposed for tests).
PixelRaster render_synthetic_image(std::uint64_t seed, std::size_t index,
                                   const SyntheticParams& params,
                                   int* label_out, double* scale_out);

/// Writes images/<id>.jpg and labels.csv (file,label,object_scale).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Reads labels.csv and the referenced JPEGs.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace resotune
