#include "resotune/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "resotune/error.hpp"
#include "resotune/format.hpp"
#include "resotune/parallel.hpp"
#include "resotune/rng.hpp"

namespace resotune {

using nlohmann::json;

namespace {

void check_resolutions(const std::vector<int>& resolutions) {
  if (resolutions.empty()) {
    throw Error(ErrorCode::InvalidConfig, "resolution list is empty");
  }
  for (std::size_t i = 0; i < resolutions.size(); ++i) {
    if (resolutions[i] < 1) {
      throw Error(ErrorCode::InvalidConfig, "resolutions must be positive");
    }
    if (i > 0 && resolutions[i] <= resolutions[i - 1]) {
      throw Error(ErrorCode::InvalidConfig,
                  "resolutions must be strictly increasing");
    }
  }
}

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

// ---- config ---------------------------------------------------------------

void CalibrationConfig::validate() const {
  if (!(ssim_lo < ssim_hi)) {
    throw Error(ErrorCode::InvalidConfig, "ssim_lo must be below ssim_hi");
  }
  if (!(step_epsilon > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "step_epsilon must be positive");
  }
  if (!(accuracy_budget >= 0.0 && accuracy_budget <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "accuracy_budget must lie in [0, 1]");
  }
  if (sample_size < 1) {
    throw Error(ErrorCode::InvalidConfig, "sample_size must be at least 1");
  }
  if (!(ssim.k1 > 0.0 && ssim.k2 > 0.0) || ssim.window_size < 1) {
    throw Error(ErrorCode::InvalidConfig, "invalid SSIM parameters");
  }
  check_resolutions(resolutions);
}

std::size_t CalibrationConfig::allowed_misses(std::size_t n) const {
  return static_cast<std::size_t>(
      std::floor(accuracy_budget * static_cast<double>(n) + 1e-9));
}

int CalibrationConfig::max_evaluations() const {
  const double ratio = (ssim_hi - ssim_lo) / step_epsilon;
  return ratio <= 1.0 ? 0 : static_cast<int>(std::ceil(std::log2(ratio)));
}

json to_json(const CalibrationConfig& cfg) {
  return json{
      {"ssim_lo", cfg.ssim_lo},
      {"ssim_hi", cfg.ssim_hi},
      {"step_epsilon", cfg.step_epsilon},
      {"accuracy_budget", cfg.accuracy_budget},
      {"sample_size", cfg.sample_size},
      {"resolutions", cfg.resolutions},
      {"seed", cfg.seed},
      {"ssim",
       {{"k1", cfg.ssim.k1},
        {"k2", cfg.ssim.k2},
        {"dynamic_range", cfg.ssim.dynamic_range},
        {"window", cfg.ssim.window == SsimWindow::Uniform ? "uniform" : "gaussian"},
        {"window_size", cfg.ssim.window_size},
        {"gaussian_sigma", cfg.ssim.gaussian_sigma}}},
  };
}

CalibrationConfig calibration_config_from_json(const json& j) {
  static const std::set<std::string> kKeys = {
      "ssim_lo", "ssim_hi", "step_epsilon", "accuracy_budget",
      "sample_size", "resolutions", "seed", "ssim"};
  static const std::set<std::string> kSsimKeys = {
      "k1", "k2", "dynamic_range", "window", "window_size", "gaussian_sigma"};
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "calibration config must be an object");
  }
  CalibrationConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (!kKeys.count(key)) {
        throw Error(ErrorCode::InvalidConfig, "unknown calibration key '" + key + "'");
      }
    }
    cfg.ssim_lo = j.value("ssim_lo", cfg.ssim_lo);
    cfg.ssim_hi = j.value("ssim_hi", cfg.ssim_hi);
    cfg.step_epsilon = j.value("step_epsilon", cfg.step_epsilon);
    cfg.accuracy_budget = j.value("accuracy_budget", cfg.accuracy_budget);
    cfg.sample_size = j.value("sample_size", cfg.sample_size);
    cfg.resolutions = j.value("resolutions", cfg.resolutions);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("ssim")) {
      const json& s = j["ssim"];
      for (const auto& [key, value] : s.items()) {
        if (!kSsimKeys.count(key)) {
          throw Error(ErrorCode::InvalidConfig, "unknown ssim key '" + key + "'");
        }
      }
      cfg.ssim.k1 = s.value("k1", cfg.ssim.k1);
      cfg.ssim.k2 = s.value("k2", cfg.ssim.k2);
      cfg.ssim.dynamic_range = s.value("dynamic_range", cfg.ssim.dynamic_range);
      cfg.ssim.window_size = s.value("window_size", cfg.ssim.window_size);
      cfg.ssim.gaussian_sigma = s.value("gaussian_sigma", cfg.ssim.gaussian_sigma);
      const std::string w = s.value("window", std::string("uniform"));
      if (w == "uniform") {
        cfg.ssim.window = SsimWindow::Uniform;
      } else if (w == "gaussian") {
        cfg.ssim.window = SsimWindow::Gaussian;
      } else {
        throw Error(ErrorCode::InvalidConfig, "unknown SSIM window '" + w + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig,
                std::string("bad calibration config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---- search ---------------------------------------------------------------

SearchResult binary_search_threshold(const std::function<bool(double)>& feasible,
                                     const CalibrationConfig& cfg) {
  cfg.validate();
  SearchResult r;
  double lo = cfg.ssim_lo;
  double hi = cfg.ssim_hi;
  bool any = false;
  while (hi - lo >= cfg.step_epsilon) {
    const double mid = lo + (hi - lo) / 2.0;
    const bool ok = feasible(mid);
    r.trace.emplace_back(mid, ok);
    ++r.evaluations;
    if (ok) {
      hi = mid;
      any = true;
    } else {
      lo = mid;
    }
  }
  r.threshold = hi;
  r.fallback = !any;
  return r;
}

// ---- ladder summaries -----------------------------------------------------

std::size_t LadderSummary::scans_at(int resolution, double threshold) const {
  const Rung& rung = rungs.at(resolution);
  const std::size_t n = scan_count();
  if (threshold >= 1.0) return n;
  for (std::size_t k = 1; k < n; ++k) {
    if (rung.ssim[k - 1] >= threshold) return k;
  }
  return n;
}

bool LadderSummary::correct_at(int resolution, double threshold) const {
  const std::size_t k = scans_at(resolution, threshold);
  const int label = rungs.at(resolution).label[k - 1];
  if (label < 0) {
    throw Error(ErrorCode::InvalidConfig,
                "threshold " + fmt_g6(threshold) + " lies below the summarized range");
  }
  return label == truth;
}

bool LadderSummary::correct_full(int resolution) const {
  return rungs.at(resolution).label.back() == truth;
}

LadderSummary summarize(ScanLadder& ladder, const LabeledImage& image,
                        const ModelBackend& backbone,
                        const std::vector<int>& resolutions, double ssim_lo) {
  LadderSummary s;
  s.id = image.id;
  s.truth = image.label;
  const std::size_t n = ladder.scan_count();
  for (std::size_t k = 1; k <= n; ++k) s.bytes.push_back(ladder.bytes_at(k));
  for (int r : resolutions) {
    LadderSummary::Rung rung;
    rung.ssim.resize(n);
    rung.label.assign(n, -1);
    for (std::size_t k = 1; k <= n; ++k) rung.ssim[k - 1] = ladder.ssim(r, k);
    for (std::size_t k = ladder.min_scans(r, ssim_lo); k <= n; ++k) {
      rung.label[k - 1] = ladder.label(backbone, r, k);
    }
    s.rungs.emplace(r, std::move(rung));
  }
  return s;
}

std::vector<std::size_t> calibration_subset(std::size_t n, std::size_t sample,
                                            std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, 0xCA1B));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
  idx.resize(std::min(sample, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

void require_progressive(const LabeledImage& img) {
  if (!img.image.progressive()) {
    throw Error(ErrorCode::NotProgressive,
                "image '" + img.id + "' is not a progressive JPEG");
  }
}

bool is_decode_error(const Error& e) {
  return e.code() == ErrorCode::DecodeFailure || e.code() == ErrorCode::NotAJpeg ||
         e.code() == ErrorCode::TruncatedHeader ||
         e.code() == ErrorCode::MalformedMarker;
}

}  // namespace

CalibrationSet build_calibration_set(const ModelBackend& backbone,
                                     const Dataset& dataset, const CropSpec& crop,
                                     const std::vector<int>& resolutions,
                                     const CalibrationConfig& cfg, int workers) {
  cfg.validate();
  if (dataset.images.empty()) {
    throw Error(ErrorCode::EmptyDataset, "calibration dataset is empty");
  }
  if (backbone.info().kind != BackendKind::Backbone) {
    throw Error(ErrorCode::InvalidConfig, "calibration needs a backbone model");
  }
  const auto subset =
      calibration_subset(dataset.images.size(), cfg.sample_size, cfg.seed);
  for (std::size_t i : subset) require_progressive(dataset.images[i]);

  std::vector<std::optional<LadderSummary>> summaries(subset.size());
  std::vector<std::optional<SkippedImage>> skipped(subset.size());
  parallel_for(subset.size(), workers, [&](std::size_t j) {
    const LabeledImage& img = dataset.images[subset[j]];
    try {
      ScanLadder ladder(img.image, crop, cfg.ssim);
      summaries[j] = summarize(ladder, img, backbone, resolutions, cfg.ssim_lo);
    } catch (const Error& e) {
      if (!is_decode_error(e)) throw;
      skipped[j] = SkippedImage{img.id, e.what(), img.image.total_bytes()};
    }
  });

  CalibrationSet set;
  for (std::size_t j = 0; j < subset.size(); ++j) {
    if (summaries[j]) set.images.push_back(std::move(*summaries[j]));
    if (skipped[j]) set.skipped.push_back(std::move(*skipped[j]));
  }
  if (set.images.empty()) {
    throw Error(ErrorCode::EmptyDataset, "no calibration image could be decoded");
  }
  return set;
}

// ---- calibration ----------------------------------------------------------

ResolutionCalibration calibrate_on(const CalibrationSet& set, int resolution,
                                   const CalibrationConfig& cfg) {
  if (set.images.empty()) {
    throw Error(ErrorCode::EmptyDataset, "calibration set is empty");
  }
  ResolutionCalibration rc;
  rc.resolution = resolution;
  rc.n = set.images.size();
  rc.allowed_misses = cfg.allowed_misses(rc.n);
  for (const auto& s : set.images) rc.correct_full += s.correct_full(resolution);

  auto correct_at = [&](double t) {
    std::size_t c = 0;
    for (const auto& s : set.images) c += s.correct_at(resolution, t);
    return c;
  };
  const SearchResult sr = binary_search_threshold(
      [&](double t) {
        const std::size_t c = correct_at(t);
        return c >= rc.correct_full || rc.correct_full - c <= rc.allowed_misses;
      },
      cfg);
  rc.threshold = sr.threshold;
  rc.evaluations = sr.evaluations;
  rc.fallback = sr.fallback;
  rc.trace = sr.trace;
  rc.correct_calibrated = correct_at(rc.threshold);
  return rc;
}

ResolutionCalibration calibrate_threshold(const ModelBackend& model, int resolution,
                                          const CropSpec& crop, const Dataset& dataset,
                                          const CalibrationConfig& cfg, int workers) {
  const CalibrationSet set =
      build_calibration_set(model, dataset, crop, {resolution}, cfg, workers);
  return calibrate_on(set, resolution, cfg);
}

CalibrationResult build_threshold_table(const ModelBackend& model,
                                        std::vector<int> resolutions,
                                        const CropSpec& crop, const Dataset& dataset,
                                        const CalibrationConfig& cfg, int workers) {
  resolutions = sorted_unique(resolutions.empty() ? cfg.resolutions : resolutions);
  check_resolutions(resolutions);

  CalibrationResult out;
  out.set = build_calibration_set(model, dataset, crop, resolutions, cfg, workers);
  for (int r : resolutions) {
    ResolutionCalibration rc = calibrate_on(out.set, r, cfg);
    if (rc.loss() > rc.allowed_misses) {
      throw std::logic_error("calibrated loss exceeds the budget at resolution " +
                             std::to_string(r));
    }
    out.table.entries.push_back({r, rc.threshold, rc.fallback});
    out.per_resolution.push_back(std::move(rc));
  }
  out.table.model_id = model.info().model_id;
  out.table.crop = crop.area_ratio();
  out.table.config = cfg;
  out.table.config.resolutions = resolutions;
  out.table.calibration_set = dataset.identifier + ";sample=" +
                              std::to_string(out.set.images.size() + out.set.skipped.size()) +
                              ",seed=" + std::to_string(cfg.seed);
  return out;
}

// ---- threshold table ------------------------------------------------------

double QualityThresholdTable::threshold(int resolution) const {
  for (const auto& e : entries) {
    if (e.resolution == resolution) return e.ssim;
  }
  throw Error(ErrorCode::MissingThreshold,
              "no threshold for resolution " + std::to_string(resolution));
}

bool QualityThresholdTable::covers(int resolution) const {
  return std::any_of(entries.begin(), entries.end(),
                     [&](const ThresholdEntry& e) { return e.resolution == resolution; });
}

std::string QualityThresholdTable::config_hash() const {
  return fnv1a_hex(resotune::to_json(config).dump());
}

std::string QualityThresholdTable::to_json() const {
  json entries_j = json::array();
  for (const auto& e : entries) {
    entries_j.push_back({{"resolution", e.resolution}, {"ssim", e.ssim}, {"fallback", e.fallback}});
  }
  const json j = {
      {"model_id", model_id},
      {"crop", crop},
      {"entries", entries_j},
      {"config", resotune::to_json(config)},
      {"provenance", {{"config_hash", config_hash()}, {"calibration_set", calibration_set}}},
  };
  return j.dump(2) + "\n";
}

QualityThresholdTable QualityThresholdTable::from_json(const std::string& text) {
  QualityThresholdTable t;
  try {
    const json j = json::parse(text);
    t.model_id = j.at("model_id").get<std::string>();
    t.crop = j.at("crop").get<double>();
    if (j.contains("config")) t.config = calibration_config_from_json(j["config"]);
    for (const json& e : j.at("entries")) {
      t.entries.push_back({e.at("resolution").get<int>(), e.at("ssim").get<double>(),
                           e.value("fallback", false)});
    }
    if (j.contains("provenance")) {
      t.calibration_set = j["provenance"].value("calibration_set", std::string());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("bad threshold table: ") + e.what());
  }
  (void)CropSpec(t.crop);
  std::vector<int> res;
  for (const auto& e : t.entries) {
    res.push_back(e.resolution);
    if (!(e.ssim >= t.config.ssim_lo && e.ssim <= t.config.ssim_hi)) {
      throw Error(ErrorCode::InvalidConfig,
                  "threshold for " + std::to_string(e.resolution) +
                      " lies outside the search interval");
    }
  }
  check_resolutions(res);
  return t;
}

// ---- read savings ---------------------------------------------------------

double ReadRow::accuracy_default() const {
  return n == 0 ? 0.0 : static_cast<double>(correct_default) / static_cast<double>(n);
}

double ReadRow::accuracy_calibrated() const {
  return n == 0 ? 0.0 : static_cast<double>(correct_calibrated) / static_cast<double>(n);
}

double ReadRow::savings() const {
  if (bytes_default == 0) return 0.0;
  return 1.0 - static_cast<double>(bytes_calibrated) / static_cast<double>(bytes_default);
}

std::string ReadReport::to_csv() const {
  std::string out =
      "resolution,default_acc,calibrated_acc,default_bytes,calibrated_bytes,savings_pct\n";
  for (const auto& r : rows) {
    out += r.label + "," + fmt_g6(r.accuracy_default()) + "," +
           fmt_g6(r.accuracy_calibrated()) + "," + std::to_string(r.bytes_default) +
           "," + std::to_string(r.bytes_calibrated) + "," + fmt_g6(100.0 * r.savings()) +
           "\n";
  }
  for (const auto& r : rows) {
    if (r.fallback) out += "# fallback " + r.label + ": no threshold below ssim_hi met the budget\n";
  }
  for (const auto& id : invalid) out += "# invalid " + id + "\n";
  return out;
}

namespace {

struct ImageReads {
  bool valid = false;
  std::size_t total = 0;
  // per resolution: bytes at threshold, correct at threshold, correct at full
  std::vector<std::size_t> bytes;
  std::vector<bool> correct_cal;
  std::vector<bool> correct_full;
};

ReadReport assemble(const QualityThresholdTable& table, const std::vector<int>& res,
                    const std::vector<std::string>& ids, const std::vector<ImageReads>& reads) {
  ReadReport rep;
  rep.crop = table.crop;
  for (std::size_t ri = 0; ri < res.size(); ++ri) {
    ReadRow row;
    row.label = std::to_string(res[ri]);
    for (const auto& e : table.entries) {
      if (e.resolution == res[ri]) row.fallback = e.fallback;
    }
    for (const auto& r : reads) {
      ++row.n;
      row.bytes_default += r.total;
      if (!r.valid) {
        row.bytes_calibrated += r.total;
        continue;
      }
      row.bytes_calibrated += r.bytes[ri];
      row.correct_default += r.correct_full[ri];
      row.correct_calibrated += r.correct_cal[ri];
    }
    rep.rows.push_back(row);
  }
  for (std::size_t i = 0; i < reads.size(); ++i) {
    if (!reads[i].valid) rep.invalid.push_back(ids[i]);
  }
  return rep;
}

std::vector<int> report_resolutions(const QualityThresholdTable& table,
                                    std::vector<int> resolutions) {
  if (resolutions.empty()) {
    for (const auto& e : table.entries) resolutions.push_back(e.resolution);
  }
  resolutions = sorted_unique(resolutions);
  for (int r : resolutions) table.threshold(r);
  return resolutions;
}

}  // namespace

ReadReport read_savings(const QualityThresholdTable& table, const ModelBackend& model,
                        const Dataset& dataset, const CropSpec& crop,
                        std::vector<int> resolutions, int workers) {
  resolutions = report_resolutions(table, std::move(resolutions));
  if (dataset.images.empty()) {
    throw Error(ErrorCode::EmptyDataset, "read_savings on an empty dataset");
  }
  for (const auto& img : dataset.images) require_progressive(img);

  std::vector<ImageReads> reads(dataset.images.size());
  std::vector<std::string> ids;
  for (const auto& img : dataset.images) ids.push_back(img.id);
  parallel_for(dataset.images.size(), workers, [&](std::size_t i) {
    const LabeledImage& img = dataset.images[i];
    ImageReads& r = reads[i];
    r.total = img.image.total_bytes();
    try {
      ScanLadder ladder(img.image, crop, table.config.ssim);
      const std::size_t n = ladder.scan_count();
      for (int res : resolutions) {
        const std::size_t k = ladder.min_scans(res, table.threshold(res));
        r.bytes.push_back(ladder.bytes_at(k));
        r.correct_cal.push_back(ladder.label(model, res, k) == img.label);
        r.correct_full.push_back(ladder.label(model, res, n) == img.label);
      }
      r.valid = true;
    } catch (const Error& e) {
      if (!is_decode_error(e)) throw;
      r.valid = false;
    }
  });
  return assemble(table, resolutions, ids, reads);
}

ReadReport read_savings(const QualityThresholdTable& table, const CalibrationSet& set,
                        std::vector<int> resolutions) {
  resolutions = report_resolutions(table, std::move(resolutions));
  std::vector<ImageReads> reads;
  std::vector<std::string> ids;
  for (const auto& s : set.images) {
    for (int res : resolutions) {
      if (!s.rungs.count(res)) {
        throw Error(ErrorCode::MissingThreshold, "calibration set was not summarized at " +
                                                     std::to_string(res));
      }
    }
    ImageReads r;
    r.valid = true;
    r.total = s.bytes.back();
    for (int res : resolutions) {
      const double t = table.threshold(res);
      r.bytes.push_back(s.bytes[s.scans_at(res, t) - 1]);
      r.correct_cal.push_back(s.correct_at(res, t));
      r.correct_full.push_back(s.correct_full(res));
    }
    reads.push_back(std::move(r));
    ids.push_back(s.id);
  }
  for (const auto& sk : set.skipped) {
    ImageReads r;
    r.total = sk.total_bytes;
    reads.push_back(std::move(r));
    ids.push_back(sk.id);
  }
  return assemble(table, resolutions, ids, reads);
}

}  // namespace resotune
