#include "resotune/ladder.hpp"

#include "resotune/error.hpp"

namespace resotune {

ScanLadder::ScanLadder(const ScanIndexedImage& img, const CropSpec& crop,
                       const SsimParams& params)
    : img_(img), crop_(crop), params_(params) {
  if (!img.progressive()) {
    throw Error(ErrorCode::NotProgressive,
                "scan ladder requires a progressive stream");
  }
}

std::size_t ScanLadder::bytes_at(std::size_t k) const {
  return cumulative_bytes(img_, k);
}

const PixelRaster& ScanLadder::decoded(std::size_t k) {
  if (k == 0) throw Error(ErrorCode::ZeroScans, "at least one scan is read");
  if (decoded_.empty()) decoded_ = decode_all_prefixes(img_);
  return decoded_[std::min(k, scan_count()) - 1];
}

const PixelRaster& ScanLadder::input(int resolution, std::size_t k) {
  k = std::min(k, scan_count());
  const auto key = std::make_pair(resolution, k);
  auto it = inputs_.find(key);
  if (it == inputs_.end()) {
    it = inputs_
             .emplace(key, prepare_input(decoded(k), crop_, Size2::square(resolution)))
             .first;
  }
  return it->second;
}

double ScanLadder::ssim(int resolution, std::size_t k) {
  k = std::min(k, scan_count());
  if (k == 0) throw Error(ErrorCode::ZeroScans, "at least one scan is read");
  if (k == scan_count()) return 1.0;
  const auto key = std::make_pair(resolution, k);
  if (auto it = ssim_.find(key); it != ssim_.end()) return it->second;
  auto& ref = refs_[resolution];
  if (!ref) {
    ref = std::make_unique<SsimReference>(
        to_luma(input(resolution, scan_count())), params_);
  }
  const double s = ref->score(input(resolution, k));
  ssim_.emplace(key, s);
  return s;
}

std::size_t ScanLadder::min_scans(int resolution, double threshold) {
  if (threshold >= 1.0) return scan_count();
  for (std::size_t k = 1; k < scan_count(); ++k) {
    if (ssim(resolution, k) >= threshold) return k;
  }
  return scan_count();
}

int ScanLadder::label(const ModelBackend& backbone, int resolution,
                      std::size_t k) {
  k = std::min(k, scan_count());
  const auto key = std::make_pair(resolution, k);
  if (auto it = labels_.find(key); it != labels_.end()) return it->second;
  const int l = backbone.classify(input(resolution, k), resolution);
  labels_.emplace(key, l);
  return l;
}

std::size_t min_scans_for_threshold(const ScanIndexedImage& img, int resolution,
                                    const CropSpec& crop, double threshold,
                                    const SsimParams& params) {
  if (!img.progressive()) {
    throw Error(ErrorCode::NotProgressive,
                "min_scans_for_threshold requires a progressive stream");
  }
  const std::size_t n = img.scan_count();
  if (threshold >= 1.0) return n;
  const Size2 res = Size2::square(resolution);
  const SsimReference ref(to_luma(prepare_input(decode(img.bytes()), crop, res)),
                          params);
  for (std::size_t k = 1; k < n; ++k) {
    const PixelRaster cand =
        prepare_input(decode(truncate_at_scan(img, k)), crop, res);
    if (ref.score(cand) >= threshold) return k;
  }
  return n;
}

}  // namespace resotune
