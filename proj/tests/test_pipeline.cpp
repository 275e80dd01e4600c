#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "resotune/error.hpp"
#include "resotune/pipeline.hpp"
#include "resotune/rng.hpp"

using namespace resotune;

namespace {

const std::vector<int> kRes = {112, 168, 224, 280, 336, 392, 448};

const Dataset& dataset() {
  static const Dataset d = generate_synthetic_scale_dataset(24, 5);
  return d;
}

// Mid-range thresholds so truncated reads actually happen.
QualityThresholdTable fixed_table(double ssim = 0.97) {
  QualityThresholdTable t;
  t.model_id = "resnet18";
  for (int r : kRes) t.entries.push_back({r, ssim, false});
  return t;
}

class PeakedScale final : public ModelBackend {
 public:
  explicit PeakedScale(int peak) : peak_(peak) {
    info_.model_id = "scale-mobilenetv2";
    info_.kind = BackendKind::Scale;
    info_.resolutions = kRes;
  }
  const BackendInfo& info() const override { return info_; }
  ResolutionScores score(const PixelRaster&) const override {
    ResolutionScores s;
    for (int r : kRes) s[r] = r == peak_ ? 0.9 : 0.1;
    return s;
  }

 private:
  BackendInfo info_;
  int peak_;
};

}  // namespace

TEST_CASE("default FLOPs table") {
  const double resnet18[] = {0.5, 1.1, 1.8, 2.9, 4.2, 5.8, 7.3};
  for (std::size_t i = 0; i < kRes.size(); ++i) {
    CHECK(flops_lookup("resnet18", kRes[i]) == resnet18[i]);
  }
  CHECK(flops_lookup("scale-mobilenetv2", 112) == 0.08);
  try {
    flops_lookup("resnet18", 500);
    FAIL("unknown entry accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownEntry);
  }
  FlopsTable t = FlopsTable::defaults();
  CHECK_THROWS_AS(t.set("resnet18", 200, 9.0), Error);
  CHECK(t.lookup("resnet18", 224) == 1.8);
  CHECK_THROWS_AS(t.lookup("resnet18", 200), Error);
}

TEST_CASE("choose_resolution") {
  CHECK(choose_resolution({{112, 0.2}, {224, 0.9}, {448, 0.6}}) == 224);
  CHECK(choose_resolution({{112, 0.5}, {224, 0.5}}) == 112);
  CHECK(choose_resolution({{448, 0.7}, {224, 0.7}, {336, 0.1}}) == 224);
  CHECK_THROWS_AS(choose_resolution({}), Error);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    ResolutionScores s, half, cube;
    for (int r : kRes) {
      const double v = std::round(rng.uniform() * 8) / 8;  // frequent ties
      s[r] = v;
      half[r] = 0.5 * v;
      cube[r] = v * v * v;
    }
    const int c = choose_resolution(s);
    CHECK(choose_resolution(half) == c);
    CHECK(choose_resolution(cube) == c);
    for (const auto& [r, v] : s) {
      CHECK(v <= s[c]);
      if (v == s[c]) CHECK(r >= c);
    }
  }
}

TEST_CASE("apparent size follows crop and resolution") {
  CHECK(apparent_size(0.25, CropSpec(1.0), 224) == doctest::Approx(56.0));
  CHECK(apparent_size(0.25, CropSpec(0.25), 224) == doctest::Approx(112.0));
  CHECK(apparent_size(0.1, CropSpec(0.5625), 448) == doctest::Approx(0.1 * 448 / 0.75));
}

TEST_CASE("synthetic dataset is deterministic and balanced") {
  const Dataset a = generate_synthetic_scale_dataset(37, 9);
  const Dataset b = generate_synthetic_scale_dataset(37, 9);
  const Dataset prefix = generate_synthetic_scale_dataset(10, 9);
  const Dataset other = generate_synthetic_scale_dataset(10, 10);
  REQUIRE(a.images.size() == 37);
  std::map<int, int> counts;
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    const auto& x = a.images[i];
    CHECK(x.image.progressive());
    CHECK(std::equal(x.image.bytes().begin(), x.image.bytes().end(),
                     b.images[i].image.bytes().begin(), b.images[i].image.bytes().end()));
    CHECK(x.label == b.images[i].label);
    if (i < 10) {
      CHECK(x.id == prefix.images[i].id);
      CHECK(x.object_scale == prefix.images[i].object_scale);
    }
    ++counts[x.label];
  }
  CHECK(counts.size() == 4);
  for (const auto& [label, n] : counts) {
    CHECK(n >= 37 / 4);
    CHECK(n <= 37 / 4 + 1);
  }
  CHECK(other.images[0].object_scale != prefix.images[0].object_scale);
}

TEST_CASE("backbone is right inside the scale band and wrong outside it") {
  const SyntheticBackbone bb;
  const Dataset ds = generate_synthetic_scale_dataset(60, 21);
  int checked = 0;
  for (const auto& img : ds.images) {
    const double at224 = apparent_size(img.object_scale, CropSpec(1.0), 224);
    const double at448 = apparent_size(img.object_scale, CropSpec(1.0), 448);
    if (!(at224 > 56 && at224 < 88 && at448 > 110)) continue;
    const PixelRaster full = decode(img.image.bytes());
    CHECK(bb.classify(prepare_input(full, CropSpec(1.0), Size2::square(224)), 224) == img.label);
    CHECK(bb.classify(prepare_input(full, CropSpec(1.0), Size2::square(448)), 448) != img.label);
    ++checked;
  }
  CHECK(checked >= 3);
}

TEST_CASE("run_static") {
  const SyntheticBackbone bb;
  const FlopsTable flops = FlopsTable::defaults();
  const QualityThresholdTable full_table = fixed_table(1.0);
  const QualityThresholdTable table = fixed_table();
  for (const auto& img : dataset().images) {
    const StaticResult f = run_static(img.image, CropSpec(0.75), bb, 224, nullptr, flops);
    CHECK(f.bytes_read == img.image.total_bytes());
    CHECK(f.scans_read == img.image.scan_count());
    CHECK(f.flops_charged == 1.8);
    const StaticResult one =
        run_static(img.image, CropSpec(0.75), bb, 224, &full_table, flops);
    CHECK(one.bytes_read == f.bytes_read);
    CHECK(one.label == f.label);
    const StaticResult cal = run_static(img.image, CropSpec(0.75), bb, 224, &table, flops);
    CHECK(cal.bytes_read <= f.bytes_read);
    CHECK(cal.bytes_read == cumulative_bytes(img.image, cal.scans_read));
  }
  CHECK_THROWS_AS(run_static(dataset().images[0].image, CropSpec(1.0), bb, 224,
                             &table, FlopsTable{}),
                  Error);
}

TEST_CASE("run_dynamic reads monotonically and charges both models") {
  const SyntheticBackbone bb;
  const SyntheticScale scale;
  const FlopsTable flops = FlopsTable::defaults();
  const QualityThresholdTable table = fixed_table();
  const PipelineModels m{scale, bb, table, flops};
  for (const auto& img : dataset().images) {
    CAPTURE(img.id);
    ScanLadder ladder(img.image, CropSpec(0.56));
    const DynamicResult d = run_dynamic(ladder, m);
    const DynamicResult direct = run_dynamic(img.image, CropSpec(0.56), m);
    CHECK(d.decision.chosen_resolution == direct.decision.chosen_resolution);
    CHECK(d.decision.bytes_read == direct.decision.bytes_read);
    CHECK(d.label == direct.label);

    const std::size_t scale_bytes = cumulative_bytes(img.image, d.decision.scale_scans);
    CHECK(d.decision.bytes_read >= scale_bytes);
    CHECK(d.decision.bytes_read <= img.image.total_bytes());
    CHECK(d.decision.chosen_resolution == choose_resolution(d.decision.scores));
    CHECK(d.decision.flops_charged ==
          doctest::Approx(0.08 + flops_lookup("resnet18", d.decision.chosen_resolution)));
    CHECK(d.decision.scale_scans == ladder.min_scans(112, table.threshold(112)));

    // Static read at the chosen resolution dominates when it needs more scans.
    const StaticResult s =
        run_static(ladder, bb, d.decision.chosen_resolution, &table, flops);
    CHECK(d.decision.scans_read == std::max(s.scans_read, d.decision.scale_scans));
    CHECK(d.label == ladder.label(bb, d.decision.chosen_resolution, d.decision.scans_read));
  }
}

TEST_CASE("scale peaks decide how much more is read") {
  const SyntheticBackbone bb;
  const FlopsTable flops = FlopsTable::defaults();
  const QualityThresholdTable table = fixed_table();
  const PeakedScale low(112), high(448);
  for (const auto& img : dataset().images) {
    ScanLadder ladder(img.image, CropSpec(1.0));
    const DynamicResult a = run_dynamic(ladder, {low, bb, table, flops});
    CHECK(a.decision.chosen_resolution == 112);
    CHECK(a.decision.bytes_read == ladder.bytes_at(ladder.min_scans(112, 0.97)));
    CHECK(a.decision.flops_charged == doctest::Approx(0.58));
    const DynamicResult b = run_dynamic(ladder, {high, bb, table, flops});
    CHECK(b.decision.chosen_resolution == 448);
    CHECK(b.decision.bytes_read >= a.decision.bytes_read);
  }
}

TEST_CASE("dynamic choice is limited to calibrated resolutions") {
  const SyntheticBackbone bb;
  const FlopsTable flops = FlopsTable::defaults();
  QualityThresholdTable table;
  table.entries = {{112, 0.97}, {224, 0.98}, {448, 1.0}};
  const PeakedScale peak(280);
  const auto& img = dataset().images.front();
  ScanLadder ladder(img.image, CropSpec(1.0));
  // 280 is out; the rest tie at 0.1 and the smallest wins.
  CHECK(run_dynamic(ladder, {peak, bb, table, flops}).decision.chosen_resolution == 112);
  table.entries = {{300, 1.0}};
  CHECK_THROWS_AS(run_dynamic(ladder, {peak, bb, table, flops}), Error);
}

TEST_CASE("crop sweep aggregates") {
  const SyntheticBackbone bb;
  const SyntheticScale scale;
  const FlopsTable flops = FlopsTable::defaults();
  const QualityThresholdTable table = fixed_table();
  const PipelineModels m{scale, bb, table, flops};
  SweepOptions opt;
  opt.workers = 2;
  const SweepResult r = crop_sweep(dataset(), m, opt);
  REQUIRE(r.aggregates.size() == 4 * 8);
  CHECK(r.records.size() == 4 * 8 * dataset().images.size());

  for (double crop : opt.crops) {
    std::map<int, int> choices;
    std::size_t n = 0;
    for (const auto& rec : r.records) {
      if (rec.crop_ratio != crop || !rec.mode.dynamic) continue;
      REQUIRE(rec.valid);
      ++choices[rec.resolution];
      ++n;
    }
    double expected = 0.08;
    for (const auto& [res, count] : choices) {
      expected += flops_lookup("resnet18", res) * count / static_cast<double>(n);
    }
    const SweepAggregate& dyn = r.aggregate(crop, EvalMode::adaptive());
    CHECK(dyn.mean_gflops == doctest::Approx(expected).epsilon(1e-12));
    CHECK(dyn.n == dataset().images.size());
    for (int res : kRes) {
      const SweepAggregate& a = r.aggregate(crop, EvalMode::fixed(res));
      CHECK(a.mean_gflops == flops_lookup("resnet18", res));
      CHECK(a.accuracy() >= 0.0);
      CHECK(a.accuracy() <= 1.0);
    }
  }
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("crop,mode,accuracy,mean_gflops,mean_bytes,n\n0.25,static-112,", 0) == 0);
  CHECK(csv.find("\n1,dynamic,") != std::string::npos);

  // Re-aggregating the records reproduces the sweep's own aggregates.
  std::vector<EvalMode> modes;
  for (int res : kRes) modes.push_back(EvalMode::fixed(res));
  modes.push_back(EvalMode::adaptive());
  const auto again = aggregate_records(r.records, opt.crops, modes);
  REQUIRE(again.size() == r.aggregates.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].correct == r.aggregates[i].correct);
    CHECK(again[i].mean_bytes == r.aggregates[i].mean_bytes);
  }

  SweepOptions full = opt;
  full.full_read = true;
  full.crops = {1.0};
  const SweepResult fr = crop_sweep(dataset(), m, full);
  for (const auto& rec : fr.records) {
    if (!rec.mode.dynamic) CHECK(rec.scans_read > 0);
  }
  double total = 0;
  for (const auto& img : dataset().images) total += static_cast<double>(img.image.total_bytes());
  CHECK(fr.aggregate(1.0, EvalMode::fixed(224)).mean_bytes ==
        doctest::Approx(total / dataset().images.size()));
}

TEST_CASE("undecodable images are counted as incorrect") {
  Dataset ds;
  ds.images.push_back(dataset().images[0]);
  const LabeledImage& good = dataset().images[1];
  // First SOS header straight into EOI: indexes fine, cannot be decoded.
  const ByteView src = good.image.bytes();
  const std::size_t sos = good.image.scan_offsets()[0];
  const std::size_t len = (std::size_t{src[sos + 2]} << 8) | src[sos + 3];
  Bytes broken(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(sos + 2 + len));
  broken.push_back(0xFF);
  broken.push_back(0xD9);
  ds.images.push_back({"broken", good.label, good.object_scale, index_scans(broken)});

  const SyntheticBackbone bb;
  const SyntheticScale scale;
  const FlopsTable flops = FlopsTable::defaults();
  const QualityThresholdTable table = fixed_table(1.0);
  SweepOptions opt;
  opt.crops = {1.0};
  opt.resolutions = {224};
  const SweepResult r = crop_sweep(ds, {scale, bb, table, flops}, opt);
  const SweepAggregate& a = r.aggregate(1.0, EvalMode::fixed(224));
  CHECK(a.n == 2);
  CHECK(a.valid == 1);
  CHECK(a.correct <= 1);
  CHECK(r.to_csv().find("# invalid crop=1 mode=static-224 id=broken") != std::string::npos);
  CHECK(r.to_csv().find("# invalid crop=1 mode=dynamic id=broken") != std::string::npos);
}

TEST_CASE("shard plan") {
  const ShardPlan p = train_shard_plan(8, 4);
  REQUIRE(p.shards.size() == 4);
  for (const auto& [b, e] : p.shards) CHECK(e - b == 2);
  CHECK(p.train_indices(0) == std::vector<std::size_t>{2, 3, 4, 5, 6, 7});
  CHECK(p.held_out(0) == std::vector<std::size_t>{0, 1});

  const ShardPlan q = train_shard_plan(10, 4);
  std::vector<std::size_t> sizes;
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (int b = 0; b < 4; ++b) {
    const auto h = q.held_out(b);
    sizes.push_back(h.size());
    total += h.size();
    seen.insert(h.begin(), h.end());
    const auto t = q.train_indices(b);
    CHECK(t.size() + h.size() == 10);
    for (std::size_t i : h) CHECK(std::find(t.begin(), t.end(), i) == t.end());
  }
  CHECK(sizes == std::vector<std::size_t>{3, 3, 2, 2});
  CHECK(total == 10);
  CHECK(seen.size() == 10);

  const auto j = nlohmann::json::parse(q.manifest_json());
  CHECK(j["dataset_size"] == 10);
  CHECK(j["backbones"][1]["train_shards"] == nlohmann::json::array({0, 2, 3}));
  CHECK(j["backbones"][1]["held_out_shard"] == 1);
  CHECK(j["shards"][0]["end"] == 3);
  CHECK(train_shard_plan(10, 4).manifest_json() == q.manifest_json());

  try {
    train_shard_plan(3, 4);
    FAIL("too few examples accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewExamples);
  }
  CHECK_THROWS_AS(train_shard_plan(10, 1), Error);
}
