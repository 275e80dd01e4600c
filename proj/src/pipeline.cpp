#include "resotune/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <json.hpp>

#include "resotune/error.hpp"
#include "resotune/format.hpp"
#include "resotune/parallel.hpp"

namespace resotune {

// ---- FLOPs ----------------------------------------------------------------

FlopsTable FlopsTable::defaults() {
  FlopsTable t;
  const std::pair<int, double> resnet18[] = {{112, 0.5}, {168, 1.1}, {224, 1.8},
                                             {280, 2.9}, {336, 4.2}, {392, 5.8},
                                             {448, 7.3}};
  for (const auto& [r, g] : resnet18) t.set("resnet18", r, g);
  t.set("scale-mobilenetv2", 112, 0.08);
  return t;
}

void FlopsTable::set(const std::string& model_id, int resolution, double gflops) {
  if (!(gflops > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "FLOPs entries must be positive");
  }
  auto& m = entries_[model_id];
  m[resolution] = gflops;
  double prev = 0.0;
  for (const auto& [r, g] : m) {
    if (g <= prev) {
      m.erase(resolution);
      throw Error(ErrorCode::InvalidConfig,
                  "FLOPs for " + model_id + " must increase with resolution");
    }
    prev = g;
  }
}

double FlopsTable::lookup(const std::string& model_id, int resolution) const {
  const auto m = entries_.find(model_id);
  if (m != entries_.end()) {
    const auto e = m->second.find(resolution);
    if (e != m->second.end()) return e->second;
  }
  throw Error(ErrorCode::UnknownEntry,
              "no FLOPs entry for " + model_id + "@" + std::to_string(resolution));
}

double flops_lookup(const std::string& model_id, int resolution) {
  static const FlopsTable table = FlopsTable::defaults();
  return table.lookup(model_id, resolution);
}

int choose_resolution(const ResolutionScores& scores) {
  if (scores.empty()) throw Error(ErrorCode::EmptyScores, "no resolution scores");
  // std::map iterates in increasing resolution, so a strict > keeps the
  // lowest resolution among ties.
  auto best = scores.begin();
  for (auto it = scores.begin(); it != scores.end(); ++it) {
    if (!(it->second >= 0.0 && it->second <= 1.0)) {
      throw Error(ErrorCode::BackendFailure,
                  "score for " + std::to_string(it->first) + " outside [0, 1]");
    }
    if (it->second > best->second) best = it;
  }
  return best->first;
}

// ---- single-image pipelines -------------------------------------------------

DynamicResult run_dynamic(ScanLadder& ladder, const PipelineModels& m) {
  if (m.table.entries.empty()) {
    throw Error(ErrorCode::MissingThreshold, "threshold table is empty");
  }
  DynamicResult out;
  ResolutionDecision& d = out.decision;

  const ThresholdEntry& low = m.table.entries.front();
  d.scale_scans = ladder.min_scans(low.resolution, low.ssim);
  d.scores = m.scale.score(ladder.input(kScaleInputResolution, d.scale_scans));
  // Only resolutions the table was calibrated at are candidates.
  ResolutionScores candidates;
  for (const auto& [res, score] : d.scores) {
    if (m.table.covers(res)) candidates.emplace(res, score);
  }
  if (candidates.empty()) {
    throw Error(ErrorCode::MissingThreshold,
                "no scored resolution is covered by the threshold table");
  }
  d.chosen_resolution = choose_resolution(candidates);
  const auto& supported = m.backbone.info().resolutions;
  if (std::find(supported.begin(), supported.end(), d.chosen_resolution) ==
      supported.end()) {
    throw Error(ErrorCode::BackendFailure,
                "scale model chose " + std::to_string(d.chosen_resolution) +
                    ", which the backbone does not support");
  }
  const std::size_t need =
      ladder.min_scans(d.chosen_resolution, m.table.threshold(d.chosen_resolution));
  d.scans_read = std::max(d.scale_scans, need);
  d.bytes_read = ladder.bytes_at(d.scans_read);
  d.flops_charged = m.flops.lookup(m.scale.info().model_id, kScaleInputResolution) +
                    m.flops.lookup(m.backbone.info().model_id, d.chosen_resolution);
  out.label = ladder.label(m.backbone, d.chosen_resolution, d.scans_read);
  return out;
}

DynamicResult run_dynamic(const ScanIndexedImage& img, const CropSpec& crop,
                          const PipelineModels& models) {
  ScanLadder ladder(img, crop, models.table.config.ssim);
  return run_dynamic(ladder, models);
}

StaticResult run_static(ScanLadder& ladder, const ModelBackend& backbone,
                        int resolution, const QualityThresholdTable* table,
                        const FlopsTable& flops) {
  StaticResult s;
  s.resolution = resolution;
  s.scans_read = table ? ladder.min_scans(resolution, table->threshold(resolution))
                       : ladder.scan_count();
  s.bytes_read = ladder.bytes_at(s.scans_read);
  s.flops_charged = flops.lookup(backbone.info().model_id, resolution);
  s.label = ladder.label(backbone, resolution, s.scans_read);
  return s;
}

StaticResult run_static(const ScanIndexedImage& img, const CropSpec& crop,
                        const ModelBackend& backbone, int resolution,
                        const QualityThresholdTable* table, const FlopsTable& flops) {
  ScanLadder ladder(img, crop, table ? table->config.ssim : SsimParams{});
  return run_static(ladder, backbone, resolution, table, flops);
}

// ---- sweep ------------------------------------------------------------------

std::string EvalMode::name() const {
  return dynamic ? "dynamic" : "static-" + std::to_string(resolution);
}

double SweepAggregate::accuracy() const {
  return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

const SweepAggregate& SweepResult::aggregate(double crop, const EvalMode& mode) const {
  for (const auto& a : aggregates) {
    if (a.crop == crop && a.mode == mode) return a;
  }
  throw Error(ErrorCode::UnknownEntry, "no aggregate for crop " + fmt_g6(crop) +
                                           " mode " + mode.name());
}

std::string SweepResult::to_csv() const {
  std::string out = "crop,mode,accuracy,mean_gflops,mean_bytes,n\n";
  for (const auto& a : aggregates) {
    out += fmt_g6(a.crop) + "," + a.mode.name() + "," + fmt_g6(a.accuracy()) + "," +
           fmt_g6(a.mean_gflops) + "," + fmt_g6(a.mean_bytes) + "," + std::to_string(a.n) +
           "\n";
  }
  for (const auto& r : records) {
    if (!r.valid) {
      out += "# invalid crop=" + fmt_g6(r.crop_ratio) + " mode=" + r.mode.name() +
             " id=" + r.image_id + "\n";
    }
  }
  return out;
}

std::vector<SweepAggregate> aggregate_records(const std::vector<EvalRecord>& records,
                                              const std::vector<double>& crops,
                                              const std::vector<EvalMode>& modes) {
  std::vector<SweepAggregate> out;
  for (double c : crops) {
    for (const EvalMode& m : modes) {
      SweepAggregate a;
      a.crop = c;
      a.mode = m;
      // Running means: a constant column (static FLOPs) stays exact.
      for (const auto& r : records) {
        if (r.crop_ratio != c || !(r.mode == m)) continue;
        ++a.n;
        if (!r.valid) continue;
        ++a.valid;
        a.correct += r.correct;
        const double k = static_cast<double>(a.valid);
        a.mean_gflops += (r.flops - a.mean_gflops) / k;
        a.mean_bytes += (static_cast<double>(r.bytes_read) - a.mean_bytes) / k;
      }
      out.push_back(a);
    }
  }
  return out;
}

SweepResult crop_sweep(const Dataset& dataset, const PipelineModels& models,
                       const SweepOptions& options) {
  if (dataset.images.empty()) {
    throw Error(ErrorCode::EmptyDataset, "crop sweep on an empty dataset");
  }
  std::vector<int> resolutions = options.resolutions.empty()
                                     ? models.backbone.info().resolutions
                                     : options.resolutions;
  std::sort(resolutions.begin(), resolutions.end());
  std::vector<EvalMode> modes;
  for (int r : resolutions) modes.push_back(EvalMode::fixed(r));
  if (options.include_dynamic) modes.push_back(EvalMode::adaptive());
  for (double c : options.crops) (void)CropSpec(c);
  if (!options.full_read) {
    for (int r : resolutions) models.table.threshold(r);
  }
  for (const auto& img : dataset.images) {
    if (!img.image.progressive()) {
      throw Error(ErrorCode::NotProgressive,
                  "image '" + img.id + "' is not a progressive JPEG");
    }
  }

  const std::size_t n_img = dataset.images.size();
  const std::size_t per_job = modes.size();
  std::vector<EvalRecord> records(options.crops.size() * n_img * per_job);
  parallel_for(options.crops.size() * n_img, options.workers, [&](std::size_t job) {
    const std::size_t ci = job / n_img;
    const LabeledImage& img = dataset.images[job % n_img];
    const CropSpec crop(options.crops[ci]);
    EvalRecord* out = &records[job * per_job];
    ScanLadder ladder(img.image, crop, models.table.config.ssim);
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
      EvalRecord& rec = out[mi];
      rec.image_id = img.id;
      rec.crop_ratio = crop.area_ratio();
      rec.mode = modes[mi];
      try {
        if (modes[mi].dynamic) {
          const DynamicResult d = run_dynamic(ladder, models);
          rec.resolution = d.decision.chosen_resolution;
          rec.scans_read = d.decision.scans_read;
          rec.bytes_read = d.decision.bytes_read;
          rec.flops = d.decision.flops_charged;
          rec.correct = d.label == img.label;
        } else {
          const StaticResult s =
              run_static(ladder, models.backbone, modes[mi].resolution,
                         options.full_read ? nullptr : &models.table, models.flops);
          rec.resolution = s.resolution;
          rec.scans_read = s.scans_read;
          rec.bytes_read = s.bytes_read;
          rec.flops = s.flops_charged;
          rec.correct = s.label == img.label;
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DecodeFailure && e.code() != ErrorCode::NotAJpeg &&
            e.code() != ErrorCode::TruncatedHeader &&
            e.code() != ErrorCode::MalformedMarker) {
          throw;
        }
        rec.valid = false;
        rec.correct = false;
        rec.error = e.what();
      }
    }
  });

  SweepResult result;
  result.aggregates = aggregate_records(records, options.crops, modes);
  result.records = std::move(records);
  return result;
}

// ---- shard plan -------------------------------------------------------------

std::vector<std::size_t> ShardPlan::held_out(int backbone) const {
  const auto& [b, e] = shards.at(static_cast<std::size_t>(backbone));
  std::vector<std::size_t> out;
  for (std::size_t i = b; i < e; ++i) out.push_back(i);
  return out;
}

std::vector<std::size_t> ShardPlan::train_indices(int backbone) const {
  std::vector<std::size_t> out;
  for (int s = 0; s < num_backbones; ++s) {
    if (s == backbone) continue;
    const auto h = held_out(s);
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

std::string ShardPlan::manifest_json() const {
  using nlohmann::json;
  json shards_j = json::array();
  for (std::size_t s = 0; s < shards.size(); ++s) {
    shards_j.push_back({{"shard", s},
                        {"begin", shards[s].first},
                        {"end", shards[s].second},
                        {"size", shards[s].second - shards[s].first}});
  }
  json backbones = json::array();
  for (int b = 0; b < num_backbones; ++b) {
    json train = json::array();
    for (int s = 0; s < num_backbones; ++s) {
      if (s != b) train.push_back(s);
    }
    backbones.push_back({{"backbone", b}, {"train_shards", train}, {"held_out_shard", b}});
  }
  const json j = {{"dataset_size", dataset_size},
                  {"num_backbones", num_backbones},
                  {"shards", shards_j},
                  {"backbones", backbones}};
  return j.dump(2) + "\n";
}

ShardPlan train_shard_plan(std::size_t dataset_size, int num_backbones) {
  if (num_backbones < 2) {
    throw Error(ErrorCode::InvalidConfig, "need at least 2 backbones");
  }
  const std::size_t b = static_cast<std::size_t>(num_backbones);
  if (dataset_size < b) {
    throw Error(ErrorCode::TooFewExamples,
                std::to_string(dataset_size) + " examples cannot fill " +
                    std::to_string(num_backbones) + " shards");
  }
  ShardPlan plan;
  plan.dataset_size = dataset_size;
  plan.num_backbones = num_backbones;
  std::size_t begin = 0;
  for (std::size_t s = 0; s < b; ++s) {
    const std::size_t size = dataset_size / b + (s < dataset_size % b ? 1 : 0);
    plan.shards.emplace_back(begin, begin + size);
    begin += size;
  }
  return plan;
}

}  // namespace resotune
