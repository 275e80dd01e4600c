#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "resotune/backend.hpp"
#include "resotune/calibrate.hpp"
#include "resotune/ladder.hpp"
#include "resotune/synthetic.hpp"

namespace resotune {

/// GFLOPs per (model, resolution). Model FLOPs only; decode and resize are
/// not charged.
class FlopsTable {
 public:
  /// ResNet-18 at 112..448 and the scale model at 112.
  static FlopsTable defaults();

  /// Throws Error(InvalidConfig) if the model's entries would stop being
  /// strictly increasing in resolution.
  void set(const std::string& model_id, int resolution, double gflops);
  /// Throws Error(UnknownEntry).
  double lookup(const std::string& model_id, int resolution) const;

  const std::map<std::string, std::map<int, double>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::map<int, double>> entries_;
};

double flops_lookup(const std::string& model_id, int resolution);

/// Argmax; ties go to the lowest resolution. Throws Error(EmptyScores).
int choose_resolution(const ResolutionScores& scores);

struct ResolutionDecision {
  std::string image_id;
  ResolutionScores scores;
  int chosen_resolution = 0;
  std::size_t scale_scans = 0;
  std::size_t scans_read = 0;
  std::size_t bytes_read = 0;
  double flops_charged = 0.0;
};

struct DynamicResult {
  ResolutionDecision decision;
  int label = -1;
};

struct PipelineModels {
  const ModelBackend& scale;
  const ModelBackend& backbone;
  const QualityThresholdTable& table;
  const FlopsTable& flops;
};

/// Reads the scans the lowest-resolution threshold asks for, scores
/// resolutions on the 112x112 input, picks one, extends the read to that
/// resolution's threshold (never below what was already read) and
/// classifies.
DynamicResult run_dynamic(ScanLadder& ladder, const PipelineModels& models);
DynamicResult run_dynamic(const ScanIndexedImage& img, const CropSpec& crop,
                          const PipelineModels& models);

struct StaticResult {
  int resolution = 0;
  std::size_t scans_read = 0;
  std::size_t bytes_read = 0;
  double flops_charged = 0.0;
  int label = -1;
};

/// `table == nullptr` reads the whole stream.
StaticResult run_static(ScanLadder& ladder, const ModelBackend& backbone,
                        int resolution, const QualityThresholdTable* table,
                        const FlopsTable& flops);
StaticResult run_static(const ScanIndexedImage& img, const CropSpec& crop,
                        const ModelBackend& backbone, int resolution,
                        const QualityThresholdTable* table, const FlopsTable& flops);

struct EvalMode {
  bool dynamic = false;
  int resolution = 0;  // static only

  static EvalMode fixed(int r) { return {false, r}; }
  static EvalMode adaptive() { return {true, 0}; }
  /// "static-224" or "dynamic".
  std::string name() const;
  bool operator==(const EvalMode&) const = default;
};

struct EvalRecord {
  std::string image_id;
  double crop_ratio = 1.0;
  EvalMode mode;
  bool valid = true;
  bool correct = false;
  int resolution = 0;  // chosen resolution for dynamic records
  std::size_t scans_read = 0;
  std::size_t bytes_read = 0;
  double flops = 0.0;
  std::string error;
};

struct SweepAggregate {
  double crop = 1.0;
  EvalMode mode;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t valid = 0;
  double mean_gflops = 0.0;  // over valid records
  double mean_bytes = 0.0;   // over valid records

  /// Invalid records count as incorrect.
  double accuracy() const;
};

struct SweepOptions {
  std::vector<double> crops = {0.25, 0.56, 0.75, 1.0};
  /// Static modes; empty means the backbone's resolutions.
  std::vector<int> resolutions;
  bool include_dynamic = true;
  /// Static modes read everything instead of following the table.
  bool full_read = false;
  int workers = 1;
};

struct SweepResult {
  std::vector<EvalRecord> records;
  std::vector<SweepAggregate> aggregates;  // crop-major, statics then dynamic

  const SweepAggregate& aggregate(double crop, const EvalMode& mode) const;
  /// crop,mode,accuracy,mean_gflops,mean_bytes,n plus "#" invalid footer.
  std::string to_csv() const;
};

/// Full (crop x image x mode) evaluation. Static modes read according to the
/// table (unless full_read), the dynamic mode runs the two-model pipeline.
SweepResult crop_sweep(const Dataset& dataset, const PipelineModels& models,
                       const SweepOptions& options);

/// Aggregates records in the order of `crops` x `modes`.
std::vector<SweepAggregate> aggregate_records(const std::vector<EvalRecord>& records,
                                              const std::vector<double>& crops,
                                              const std::vector<EvalMode>& modes);

struct ShardPlan {
  std::size_t dataset_size = 0;
  int num_backbones = 0;
  /// Contiguous [begin, end) ranges; the first (size % backbones) shards get
  /// one extra index.
  std::vector<std::pair<std::size_t, std::size_t>> shards;

  std::vector<std::size_t> held_out(int backbone) const;
  std::vector<std::size_t> train_indices(int backbone) const;
  /// Deterministic JSON consumed by the training scripts.
  std::string manifest_json() const;
};

/// Throws Error(TooFewExamples) when dataset_size < num_backbones and
/// Error(InvalidConfig) when num_backbones < 2.
ShardPlan train_shard_plan(std::size_t dataset_size, int num_backbones = 4);

}  // namespace resotune
