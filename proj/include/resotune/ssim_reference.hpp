#pragma once

#include <vector>

#include "resotune/quality.hpp"

namespace resotune {

/// Precomputes the reference-side window statistics so that many candidates
/// can be scored against one reference (one SSIM per scan prefix).
class SsimReference {
 public:
  SsimReference(const LumaPlane& reference, const SsimParams& params);

  double score(const LumaPlane& candidate) const;
  double score(const PixelRaster& candidate) const;

  int width() const { return ref_.width; }
  int height() const { return ref_.height; }

 private:
  double score_uniform(const LumaPlane& b) const;
  double score_gaussian(const LumaPlane& b) const;

  LumaPlane ref_;
  SsimParams params_;
  int window_;
  double c1_;
  double c2_;
  // Gaussian window: filtered a and a^2 over valid positions.
  std::vector<double> mu_a_;
  std::vector<double> ex_aa_;
  std::vector<double> kernel_;
};

}  // namespace resotune
