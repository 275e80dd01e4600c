#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resotune/autotune.hpp"
#include "resotune/jpeg_encode.hpp"
#include "resotune/jpeg_scan.hpp"

namespace fixtures {

/// Smooth shading, a few hard edges and per-pixel grain. The grain keeps
/// plenty of 0xFF bytes (hence 0xFF00 stuffing) in the entropy data.
resotune::PixelRaster natural_raster(int width, int height, int channels,
                                     std::uint64_t seed);

struct Fixture {
  std::string name;
  resotune::EncodeOptions options;
  resotune::PixelRaster source;
  resotune::EncodedJpeg encoded;
};

/// Progressive fixtures over gray and color inputs, several scan scripts
/// (standard, spectral-only, successive approximation), restart intervals
/// and chroma subsampling. At least 20 entries.
const std::vector<Fixture>& corpus();

/// Baseline (SOF0) encoding of a natural raster.
resotune::Bytes baseline_jpeg(int width = 64, int height = 48, int channels = 3);

/// Gray progressive image with exactly `bands.size()` spectral scans.
resotune::EncodedJpeg spectral_gray(int width, int height,
                                    const std::vector<int>& band_ends,
                                    std::uint64_t seed = 3);

/// Count of 0xFF 0xDA pairs that start a marker segment, found by walking
/// segment lengths and skipping entropy data: an independent re-derivation
/// of the scan count for cross-checking.
std::size_t count_sos(const resotune::Bytes& bytes);

/// True if the entropy-coded data of `bytes` contains the pair 0xFF `second`.
bool entropy_contains(const resotune::Bytes& bytes, std::uint8_t second_lo,
                      std::uint8_t second_hi);

/// Convolution written out directly from the definition, double sums.
std::vector<double> naive_conv(const std::vector<float>& input,
                               const std::vector<float>& weights,
                               const resotune::ConvShape& shape);

struct ConvCase {
  resotune::ConvShape shape;
  resotune::ConvSchedule schedule;
};

/// Small random shape (odd sizes, strides, padding) and a random schedule
/// drawn from its space until one is valid.
ConvCase random_conv_case(std::uint64_t seed);

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace fixtures
