#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "resotune/backend.hpp"
#include "resotune/ladder.hpp"
#include "resotune/quality.hpp"
#include "resotune/synthetic.hpp"

namespace resotune {

struct CalibrationConfig {
  double ssim_lo = 0.94;
  double ssim_hi = 1.0;
  double step_epsilon = 0.0001;
  double accuracy_budget = 0.0005;
  std::size_t sample_size = 10000;
  std::vector<int> resolutions = {112, 168, 224, 280, 336, 392, 448};
  /// Seeds the calibration subset shuffle.
  std::uint64_t seed = 0;
  SsimParams ssim;

  /// Throws Error(InvalidConfig).
  void validate() const;
  /// Misses tolerated on n images: floor(budget * n), with a small epsilon so
  /// 0.0005 * 2000 counts as exactly 1.
  std::size_t allowed_misses(std::size_t n) const;
  /// ceil(log2((ssim_hi - ssim_lo) / step_epsilon)).
  int max_evaluations() const;
};

nlohmann::json to_json(const CalibrationConfig& cfg);
CalibrationConfig calibration_config_from_json(const nlohmann::json& j);

struct SearchResult {
  double threshold = 1.0;
  int evaluations = 0;
  /// No probed threshold below ssim_hi was feasible.
  bool fallback = false;
  std::vector<std::pair<double, bool>> trace;
};

/// Bisects [ssim_lo, ssim_hi] for the smallest feasible threshold, keeping
/// hi feasible (ssim_hi is assumed so) and lo infeasible or untested. Stops
/// once hi - lo < step_epsilon and returns hi.
SearchResult binary_search_threshold(const std::function<bool(double)>& feasible,
                                     const CalibrationConfig& cfg);

/// Everything calibration needs to know about one image, computed once:
/// per resolution, SSIM at every k and the backbone label at every k that
/// some threshold in [ssim_lo, ssim_hi] can select.
struct LadderSummary {
  std::string id;
  int truth = 0;
  std::vector<std::size_t> bytes;  // bytes[k-1] = cumulative_bytes(k)
  struct Rung {
    std::vector<double> ssim;  // index k-1
    std::vector<int> label;    // index k-1; -1 where never selectable
  };
  std::map<int, Rung> rungs;

  std::size_t scan_count() const { return bytes.size(); }
  std::size_t scans_at(int resolution, double threshold) const;
  bool correct_at(int resolution, double threshold) const;
  bool correct_full(int resolution) const;
};

LadderSummary summarize(ScanLadder& ladder, const LabeledImage& image,
                        const ModelBackend& backbone,
                        const std::vector<int>& resolutions, double ssim_lo);

struct SkippedImage {
  std::string id;
  std::string reason;
  std::size_t total_bytes = 0;
};

struct CalibrationSet {
  std::vector<LadderSummary> images;
  /// Images whose prefixes failed to decode.
  std::vector<SkippedImage> skipped;
};

/// Seeded Fisher-Yates over [0, n), first min(sample, n) indices, sorted.
std::vector<std::size_t> calibration_subset(std::size_t n, std::size_t sample,
                                            std::uint64_t seed);

/// Summarizes the seeded calibration subset of `dataset`. Non-progressive
/// inputs throw Error(NotProgressive) naming the image.
CalibrationSet build_calibration_set(const ModelBackend& backbone,
                                     const Dataset& dataset, const CropSpec& crop,
                                     const std::vector<int>& resolutions,
                                     const CalibrationConfig& cfg, int workers = 1);

struct ResolutionCalibration {
  int resolution = 0;
  double threshold = 1.0;
  int evaluations = 0;
  bool fallback = false;
  std::size_t n = 0;
  std::size_t correct_full = 0;
  std::size_t correct_calibrated = 0;
  std::size_t allowed_misses = 0;
  std::vector<std::pair<double, bool>> trace;

  std::size_t loss() const {
    return correct_full > correct_calibrated ? correct_full - correct_calibrated : 0;
  }
};

ResolutionCalibration calibrate_on(const CalibrationSet& set, int resolution,
                                   const CalibrationConfig& cfg);

ResolutionCalibration calibrate_threshold(const ModelBackend& model, int resolution,
                                          const CropSpec& crop, const Dataset& dataset,
                                          const CalibrationConfig& cfg, int workers = 1);

struct ThresholdEntry {
  int resolution = 0;
  double ssim = 1.0;
  /// Calibration found nothing feasible below ssim_hi.
  bool fallback = false;
  bool operator==(const ThresholdEntry&) const = default;
};

struct QualityThresholdTable {
  std::string model_id;
  double crop = 1.0;
  std::vector<ThresholdEntry> entries;  // strictly increasing resolution
  CalibrationConfig config;
  std::string calibration_set;

  /// Throws Error(MissingThreshold).
  double threshold(int resolution) const;
  bool covers(int resolution) const;
  std::string config_hash() const;

  std::string to_json() const;
  static QualityThresholdTable from_json(const std::string& text);
};

struct CalibrationResult {
  QualityThresholdTable table;
  std::vector<ResolutionCalibration> per_resolution;
  CalibrationSet set;
};

/// Calibrates every resolution on one shared calibration set. The table is
/// only returned whole; any per-resolution failure propagates.
CalibrationResult build_threshold_table(const ModelBackend& model,
                                        std::vector<int> resolutions,
                                        const CropSpec& crop, const Dataset& dataset,
                                        const CalibrationConfig& cfg, int workers = 1);

struct ReadRow {
  std::string label;  // resolution, or e.g. "dynamic"
  std::size_t n = 0;
  std::size_t correct_default = 0;
  std::size_t correct_calibrated = 0;
  std::uint64_t bytes_default = 0;
  std::uint64_t bytes_calibrated = 0;
  bool fallback = false;

  double accuracy_default() const;
  double accuracy_calibrated() const;
  /// 1 - bytes_calibrated / bytes_default.
  double savings() const;
};

struct ReadReport {
  double crop = 1.0;
  std::vector<ReadRow> rows;
  std::vector<std::string> invalid;

  /// resolution,default_acc,calibrated_acc,default_bytes,calibrated_bytes,savings_pct
  /// followed by "#" footer lines for fallbacks and invalid images.
  std::string to_csv() const;
};

/// Accuracy and bytes under full reads vs. calibrated truncation over the
/// whole dataset. Undecodable images count as incorrect and are listed.
ReadReport read_savings(const QualityThresholdTable& table, const ModelBackend& model,
                        const Dataset& dataset, const CropSpec& crop,
                        std::vector<int> resolutions = {}, int workers = 1);

/// Same report computed from an existing calibration set (valid when the set
/// covers the images of interest, e.g. sample_size >= dataset size).
ReadReport read_savings(const QualityThresholdTable& table, const CalibrationSet& set,
                        std::vector<int> resolutions = {});

}  // namespace resotune
