#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "resotune/calibrate.hpp"
#include "resotune/pipeline.hpp"

namespace resotune {

struct ExperimentConfig {
  struct Synthetic {
    std::size_t n = 500;
    std::uint64_t seed = 0;
  };
  std::optional<Synthetic> synthetic;
  std::optional<std::filesystem::path> dataset_path;
  std::vector<double> crops = {0.25, 0.56, 0.75, 1.0};
  std::vector<int> resolutions = {112, 168, 224, 280, 336, 392, 448};
  /// Crop the threshold table and storage report are computed at.
  double calibration_crop = 1.0;
  std::optional<std::string> scale_uri;
  std::optional<std::string> backbone_uri;
  CalibrationConfig calibration;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  int workers = 1;

  /// Throws Error(InvalidConfig) before any work is done.
  void validate() const;
  /// Every default filled in, seeds included. `workers` is left out: it
  /// never changes the outputs.
  nlohmann::json resolved() const;
};

/// Unknown keys are rejected. Seeds left out of the synthetic and
/// calibration blocks take the master `seed`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ExperimentReport {
  CalibrationResult calibration;
  SweepResult sweep;
  ReadReport storage;
  /// Failed invariant checks; empty on success.
  std::vector<std::string> violations;
  std::vector<std::filesystem::path> written;

  bool ok() const { return violations.empty(); }
};

/// calibrate -> threshold table -> crop sweep -> read savings. Writes
/// thresholds.json, accflops.csv, storage.csv and resolved_config.json into
/// cfg.out.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

}  // namespace resotune
