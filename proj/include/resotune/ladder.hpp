#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "resotune/backend.hpp"
#include "resotune/quality.hpp"
#include "resotune/ssim_reference.hpp"
#include "resotune/synthetic.hpp"

namespace resotune {

/// Per-image memo of everything derived from its scan prefixes at one crop:
/// prefix decodes, prepared inputs, SSIM against the full decode and backbone
/// labels. All prefixes are decoded on first use. Labels are memoized by
/// (resolution, k), so one ladder must only ever be asked about one backbone.
/// Not thread-safe; evaluate different images on different threads.
class ScanLadder {
 public:
  ScanLadder(const ScanIndexedImage& img, const CropSpec& crop,
             const SsimParams& params = {});

  std::size_t scan_count() const { return img_.scan_count(); }
  std::size_t bytes_at(std::size_t k) const;
  const ScanIndexedImage& image() const { return img_; }
  const CropSpec& crop() const { return crop_; }

  const PixelRaster& decoded(std::size_t k);
  const PixelRaster& input(int resolution, std::size_t k);
  /// Exactly 1.0 at the final scan.
  double ssim(int resolution, std::size_t k);
  /// Smallest k with ssim(resolution, k) >= threshold, else scan_count().
  /// A threshold of 1.0 or more always reads everything.
  std::size_t min_scans(int resolution, double threshold);
  int label(const ModelBackend& backbone, int resolution, std::size_t k);

 private:
  ScanIndexedImage img_;
  CropSpec crop_;
  SsimParams params_;
  std::vector<PixelRaster> decoded_;
  std::map<std::pair<int, std::size_t>, PixelRaster> inputs_;
  std::map<int, std::unique_ptr<SsimReference>> refs_;
  std::map<std::pair<int, std::size_t>, double> ssim_;
  std::map<std::pair<int, std::size_t>, int> labels_;
};

/// Direct (unmemoized) form: decodes the prefixes of `img` and scans k
/// upwards with quality_at_scan semantics.
std::size_t min_scans_for_threshold(const ScanIndexedImage& img, int resolution,
                                    const CropSpec& crop, double threshold,
                                    const SsimParams& params = {});

}  // namespace resotune
