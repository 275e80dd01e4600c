#include "resotune/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "resotune/error.hpp"
#include "resotune/format.hpp"
#include "resotune/io.hpp"
#include "resotune/ladder.hpp"
#include "resotune/parallel.hpp"
#include "resotune/synthetic.hpp"

namespace resotune {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!keys.count(key)) {
      throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (synthetic.has_value() == dataset_path.has_value()) {
    bad("dataset needs exactly one of 'synthetic' or 'path'");
  }
  if (synthetic && synthetic->n == 0) bad("synthetic dataset size must be positive");
  if (dataset_path && (!scale_uri || !backbone_uri)) {
    bad("a dataset path needs explicit 'scale' and 'backbone' backend URIs");
  }
  if (crops.empty()) bad("no crops");
  for (double c : crops) {
    if (!(c > 0.0 && c <= 1.0)) bad("crop " + fmt_g6(c) + " outside (0, 1]");
  }
  if (!(calibration_crop > 0.0 && calibration_crop <= 1.0)) bad("calibration crop outside (0, 1]");
  if (resolutions.empty()) bad("no resolutions");
  for (std::size_t i = 0; i < resolutions.size(); ++i) {
    if (resolutions[i] < 1) bad("resolutions must be positive");
    if (i > 0 && resolutions[i] <= resolutions[i - 1]) {
      bad("resolutions must be strictly increasing");
    }
  }
  if (workers < 1) bad("workers must be >= 1");
  calibration.validate();
}

json ExperimentConfig::resolved() const {
  json ds;
  if (synthetic) {
    ds["synthetic"] = {{"n", synthetic->n}, {"seed", synthetic->seed}};
  } else {
    ds["path"] = dataset_path->string();
  }
  CalibrationConfig cal = calibration;
  cal.resolutions = resolutions;
  return json{{"dataset", ds},
              {"crops", crops},
              {"resolutions", resolutions},
              {"calibration_crop", calibration_crop},
              {"backends",
               {{"scale", scale_uri.value_or("synthetic")},
                {"backbone", backbone_uri.value_or("synthetic")}}},
              {"calibration", to_json(cal)},
              {"out", out.string()},
              {"seed", seed}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j,
                 {"dataset", "crops", "resolutions", "calibration_crop", "backends",
                  "calibration", "out", "seed", "workers"},
                 "experiment config");
  ExperimentConfig cfg;
  try {
    cfg.seed = j.value("seed", cfg.seed);
    if (!j.contains("dataset")) throw Error(ErrorCode::InvalidConfig, "missing 'dataset'");
    const json& ds = j["dataset"];
    reject_unknown(ds, {"synthetic", "path"}, "dataset");
    if (ds.contains("synthetic")) {
      const json& s = ds["synthetic"];
      reject_unknown(s, {"n", "seed"}, "dataset.synthetic");
      ExperimentConfig::Synthetic syn;
      syn.n = s.value("n", syn.n);
      syn.seed = s.value("seed", cfg.seed);
      cfg.synthetic = syn;
    }
    if (ds.contains("path")) cfg.dataset_path = ds["path"].get<std::string>();
    cfg.crops = j.value("crops", cfg.crops);
    cfg.resolutions = j.value("resolutions", cfg.resolutions);
    cfg.calibration_crop = j.value("calibration_crop", cfg.calibration_crop);
    if (j.contains("backends")) {
      const json& b = j["backends"];
      reject_unknown(b, {"scale", "backbone"}, "backends");
      if (b.contains("scale")) cfg.scale_uri = b["scale"].get<std::string>();
      if (b.contains("backbone")) cfg.backbone_uri = b["backbone"].get<std::string>();
    }
    json cal = j.value("calibration", json::object());
    if (!cal.is_object()) throw Error(ErrorCode::InvalidConfig, "calibration must be an object");
    if (!cal.contains("seed")) cal["seed"] = cfg.seed;
    if (cal.contains("resolutions") && cal["resolutions"] != json(cfg.resolutions)) {
      throw Error(ErrorCode::InvalidConfig,
                  "calibration.resolutions disagrees with the experiment resolutions");
    }
    cal["resolutions"] = cfg.resolutions;
    cfg.calibration = calibration_config_from_json(cal);
    if (j.contains("out")) cfg.out = j["out"].get<std::string>();
    cfg.workers = j.value("workers", default_workers());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("bad experiment config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const Bytes raw = read_file(path);
  json j;
  try {
    j = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

namespace {

// Dynamic pipeline under calibrated vs. full reads at one crop.
ReadRow dynamic_read_row(const Dataset& dataset, const PipelineModels& calibrated,
                         const PipelineModels& full, const CropSpec& crop, int workers) {
  struct Item {
    bool valid = false;
    bool ok_full = false, ok_cal = false;
    std::size_t total = 0, bytes_cal = 0;
  };
  std::vector<Item> items(dataset.images.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    const LabeledImage& img = dataset.images[i];
    Item& it = items[i];
    it.total = img.image.total_bytes();
    try {
      ScanLadder ladder(img.image, crop, calibrated.table.config.ssim);
      const DynamicResult c = run_dynamic(ladder, calibrated);
      const DynamicResult f = run_dynamic(ladder, full);
      it.ok_cal = c.label == img.label;
      it.ok_full = f.label == img.label;
      it.bytes_cal = c.decision.bytes_read;
      it.valid = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DecodeFailure && e.code() != ErrorCode::NotAJpeg &&
          e.code() != ErrorCode::TruncatedHeader && e.code() != ErrorCode::MalformedMarker) {
        throw;
      }
    }
  });
  ReadRow row;
  row.label = "dynamic";
  for (const Item& it : items) {
    ++row.n;
    row.bytes_default += it.total;
    row.bytes_calibrated += it.valid ? it.bytes_cal : it.total;
    row.correct_default += it.valid && it.ok_full;
    row.correct_calibrated += it.valid && it.ok_cal;
  }
  return row;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset dataset = cfg.synthetic
                              ? generate_synthetic_scale_dataset(cfg.synthetic->n,
                                                                 cfg.synthetic->seed)
                              : load_dataset(*cfg.dataset_path);
  if (dataset.images.empty()) throw Error(ErrorCode::EmptyDataset, "experiment dataset is empty");
  const auto scale = make_backend(cfg.scale_uri.value_or("synthetic"), BackendKind::Scale);
  const auto backbone =
      make_backend(cfg.backbone_uri.value_or("synthetic"), BackendKind::Backbone);
  const FlopsTable flops = FlopsTable::defaults();
  const CropSpec cal_crop(cfg.calibration_crop);

  ExperimentReport rep;
  CalibrationConfig cal = cfg.calibration;
  cal.resolutions = cfg.resolutions;
  rep.calibration =
      build_threshold_table(*backbone, cfg.resolutions, cal_crop, dataset, cal, cfg.workers);
  const QualityThresholdTable& table = rep.calibration.table;

  const PipelineModels models{*scale, *backbone, table, flops};
  SweepOptions opt;
  opt.crops = cfg.crops;
  opt.resolutions = cfg.resolutions;
  opt.workers = cfg.workers;
  rep.sweep = crop_sweep(dataset, models, opt);

  const bool covers_all = rep.calibration.set.images.size() + rep.calibration.set.skipped.size() ==
                          dataset.images.size();
  rep.storage = covers_all ? read_savings(table, rep.calibration.set, cfg.resolutions)
                           : read_savings(table, *backbone, dataset, cal_crop, cfg.resolutions,
                                          cfg.workers);
  QualityThresholdTable full_table = table;
  for (auto& e : full_table.entries) e.ssim = cal.ssim_hi;
  const PipelineModels full_models{*scale, *backbone, full_table, flops};
  rep.storage.rows.push_back(
      dynamic_read_row(dataset, models, full_models, cal_crop, cfg.workers));

  // Invariants.
  auto& v = rep.violations;
  for (const auto& pr : rep.calibration.per_resolution) {
    if (pr.loss() > pr.allowed_misses) {
      v.push_back("calibration loss at " + std::to_string(pr.resolution) + " exceeds budget");
    }
  }
  const std::size_t want_rows = cfg.crops.size() * (cfg.resolutions.size() + 1);
  if (rep.sweep.aggregates.size() != want_rows) {
    v.push_back("accflops has " + std::to_string(rep.sweep.aggregates.size()) +
                " rows, expected " + std::to_string(want_rows));
  }
  for (const auto& a : rep.sweep.aggregates) {
    if (a.n != dataset.images.size()) {
      v.push_back("aggregate " + fmt_g6(a.crop) + "/" + a.mode.name() + " covers " +
                  std::to_string(a.n) + " images");
    }
  }
  const double max_flops = flops.lookup(scale->info().model_id, kScaleInputResolution) +
                           flops.lookup(backbone->info().model_id, cfg.resolutions.back());
  for (const auto& r : rep.sweep.records) {
    if (r.valid && r.mode.dynamic && r.flops > max_flops + 1e-12) {
      v.push_back("dynamic record " + r.image_id + " charged more than the largest model");
    }
  }
  for (const auto& row : rep.storage.rows) {
    if (row.bytes_calibrated > row.bytes_default) {
      v.push_back("storage row " + row.label + " reads more than the full files");
    }
  }

  fs::create_directories(cfg.out);
  auto emit = [&](const char* name, const std::string& content) {
    const fs::path p = cfg.out / name;
    write_text(p, content);
    rep.written.push_back(p);
  };
  emit("thresholds.json", table.to_json());
  emit("accflops.csv", rep.sweep.to_csv());
  emit("storage.csv", rep.storage.to_csv());
  emit("resolved_config.json", cfg.resolved().dump(2) + "\n");
  return rep;
}

}  // namespace resotune
