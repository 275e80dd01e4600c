// resotune command line: thin wrappers over the library.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "resotune/autotune.hpp"
#include "resotune/backend.hpp"
#include "resotune/calibrate.hpp"
#include "resotune/error.hpp"
#include "resotune/experiment.hpp"
#include "resotune/format.hpp"
#include "resotune/io.hpp"
#include "resotune/jpeg_scan.hpp"
#include "resotune/parallel.hpp"
#include "resotune/pipeline.hpp"
#include "resotune/quality.hpp"
#include "resotune/scan_server.hpp"
#include "resotune/synthetic.hpp"

using namespace resotune;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  int workers = default_workers();
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Writes to --out when given, stdout otherwise.
void emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
  } else {
    write_text(g.out, text);
  }
}

struct DatasetArgs {
  std::string dir;
  std::size_t synthetic = 0;

  void add(CLI::App* sub) {
    auto* d = sub->add_option("--dataset", dir, "directory written by `synth`");
    auto* s = sub->add_option("--synthetic", synthetic, "generate N synthetic images");
    d->excludes(s);
  }
  Dataset load(const Globals& g) const {
    if (!dir.empty()) return load_dataset(dir);
    if (synthetic == 0) throw Error(ErrorCode::InvalidConfig, "need --dataset or --synthetic N");
    return generate_synthetic_scale_dataset(synthetic, g.seed.value_or(0));
  }
};

std::vector<int> backbone_resolutions(const ModelBackend& m, std::vector<int> given) {
  return given.empty() ? m.info().resolutions : given;
}

std::pair<std::string, int> split_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "expected host:port");
  return {s.substr(0, colon), std::stoi(s.substr(colon + 1))};
}

QualityThresholdTable load_table(const std::string& path) {
  const Bytes raw = read_file(path);
  return QualityThresholdTable::from_json(std::string(raw.begin(), raw.end()));
}

json decision_json(const DynamicResult& d) {
  json scores = json::object();
  for (const auto& [r, s] : d.decision.scores) scores[std::to_string(r)] = s;
  return {{"scores", scores},
          {"chosen_resolution", d.decision.chosen_resolution},
          {"scale_scans", d.decision.scale_scans},
          {"scans_read", d.decision.scans_read},
          {"bytes_read", d.decision.bytes_read},
          {"gflops", d.decision.flops_charged},
          {"label", d.label}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resolution-aware progressive JPEG inference toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--workers", g.workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output file or directory");

  // index
  std::string file;
  auto* index = app.add_subcommand("index", "list the scans of a JPEG");
  index->add_option("file", file)->required();

  // truncate
  std::size_t scans = 1;
  auto* truncate = app.add_subcommand("truncate", "keep the first k scans");
  truncate->add_option("file", file)->required();
  truncate->add_option("--scans,-k", scans)->required()->check(CLI::PositiveNumber);

  // ssim
  std::string other;
  int resolution = 0;
  double crop = 1.0;
  auto* ssim_cmd = app.add_subcommand("ssim", "SSIM and PSNR of two images");
  ssim_cmd->add_option("a", file)->required();
  ssim_cmd->add_option("b", other)->required();
  ssim_cmd->add_option("--resolution", resolution, "compare after crop + resize");
  ssim_cmd->add_option("--crop", crop);

  // quality-sweep
  std::vector<int> resolutions;
  auto* qsweep = app.add_subcommand("quality-sweep", "SSIM at every scan and resolution");
  qsweep->add_option("file", file)->required();
  qsweep->add_option("--resolutions", resolutions)->delimiter(',');
  qsweep->add_option("--crop", crop);

  // calibrate
  DatasetArgs data;
  std::string model_uri = "synthetic";
  auto* calibrate = app.add_subcommand("calibrate", "build a threshold table");
  data.add(calibrate);
  calibrate->add_option("--model", model_uri, "backbone URI");
  calibrate->add_option("--resolutions", resolutions)->delimiter(',');
  calibrate->add_option("--crop", crop);

  // savings
  std::string thresholds;
  auto* savings = app.add_subcommand("savings", "bytes read: full vs. calibrated");
  data.add(savings);
  savings->add_option("--thresholds", thresholds)->required();
  savings->add_option("--model", model_uri, "backbone URI");
  savings->add_option("--resolutions", resolutions)->delimiter(',');

  // pipeline
  std::string scale_uri = "synthetic";
  auto* pipeline = app.add_subcommand("pipeline", "dynamic resolution for one image");
  pipeline->add_option("file", file)->required();
  pipeline->add_option("--thresholds", thresholds)->required();
  pipeline->add_option("--scale", scale_uri);
  pipeline->add_option("--backbone", model_uri);
  pipeline->add_option("--crop", crop);

  // crop-sweep
  std::vector<double> crops = {0.25, 0.56, 0.75, 1.0};
  bool full_read = false;
  auto* csweep = app.add_subcommand("crop-sweep", "accuracy/FLOPs per crop and mode");
  data.add(csweep);
  csweep->add_option("--thresholds", thresholds)->required();
  csweep->add_option("--scale", scale_uri);
  csweep->add_option("--backbone", model_uri);
  csweep->add_option("--crops", crops)->delimiter(',');
  csweep->add_option("--resolutions", resolutions)->delimiter(',');
  csweep->add_flag("--full-read", full_read, "static modes read whole files");

  // tune
  std::string shape_text;
  TuneOptions topt;
  std::string strategy = "hill-climb";
  auto* tune_cmd = app.add_subcommand("tune", "search conv schedules for one shape");
  tune_cmd->add_option("--shape", shape_text, "ic,oc,h,w,k,stride,pad")->required();
  tune_cmd->add_option("--budget", topt.budget)->check(CLI::PositiveNumber);
  tune_cmd->add_option("--strategy", strategy)->check(CLI::IsMember({"random", "hill-climb"}));
  tune_cmd->add_option("--reps", topt.reps);

  // scaling-report
  int divisor = 4;
  auto* scaling = app.add_subcommand("scaling-report", "default vs. tuned time per resolution");
  scaling->add_option("--resolutions", resolutions)->delimiter(',');
  scaling->add_option("--budget", topt.budget)->check(CLI::PositiveNumber);
  scaling->add_option("--channel-divisor", divisor)->check(CLI::PositiveNumber);
  scaling->add_option("--strategy", strategy)->check(CLI::IsMember({"random", "hill-climb"}));

  // serve
  std::string root, listen = "127.0.0.1:8080";
  auto* serve = app.add_subcommand("serve", "HTTP server for calibrated partial reads");
  serve->add_option("--root", root)->required();
  serve->add_option("--thresholds", thresholds)->required();
  serve->add_option("--listen", listen);

  // synth
  std::size_t n = 500;
  auto* synth = app.add_subcommand("synth", "write a synthetic scale dataset");
  synth->add_option("--n", n)->check(CLI::PositiveNumber);

  // backend
  std::string kind = "backbone";
  double noise = 0.0;
  bool stdio = false;
  std::string backend_listen;
  auto* backend = app.add_subcommand("backend", "serve a synthetic model over the wire protocol");
  backend->add_option("--kind", kind)->check(CLI::IsMember({"scale", "backbone"}));
  backend->add_option("--noise", noise, "score noise sigma (scale only)");
  auto* o_stdio = backend->add_flag("--stdio", stdio);
  auto* o_listen = backend->add_option("--listen", backend_listen, "host:port");
  o_stdio->excludes(o_listen);

  // shard-plan
  std::size_t size = 0;
  int backbones = 4;
  auto* shard = app.add_subcommand("shard-plan", "cross-validation shard manifest");
  shard->add_option("--size", size)->required();
  shard->add_option("--backbones", backbones);

  // experiment
  auto* experiment = app.add_subcommand("experiment", "full run from --config");

  // conformance
  std::string uri;
  auto* conform = app.add_subcommand("conformance", "check a backend against the protocol");
  conform->add_option("uri", uri)->required();
  conform->add_option("--kind", kind)->check(CLI::IsMember({"scale", "backbone"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (index->parsed()) {
      const ScanIndexedImage img = index_scans(read_file(file));
      json j = {{"width", img.width()},           {"height", img.height()},
                {"components", img.components()}, {"progressive", img.progressive()},
                {"total_bytes", img.total_bytes()}, {"scan_offsets", img.scan_offsets()}};
      std::vector<std::size_t> cum;
      for (std::size_t k = 1; k <= img.scan_count(); ++k) cum.push_back(cumulative_bytes(img, k));
      j["cumulative_bytes"] = cum;
      emit(g, j.dump(2) + "\n");
    } else if (truncate->parsed()) {
      if (g.out.empty()) throw Error(ErrorCode::InvalidConfig, "truncate needs --out");
      write_file(g.out, truncate_at_scan(index_scans(read_file(file)), scans));
    } else if (ssim_cmd->parsed()) {
      PixelRaster a = decode(read_file(file)), b = decode(read_file(other));
      if (resolution > 0) {
        a = prepare_input(a, CropSpec(crop), Size2::square(resolution));
        b = prepare_input(b, CropSpec(crop), Size2::square(resolution));
      }
      const auto p = psnr(a, b);
      json j = {{"ssim", ssim(a, b)}, {"psnr", p ? json(*p) : json("inf")}};
      emit(g, j.dump(2) + "\n");
    } else if (qsweep->parsed()) {
      const ScanIndexedImage img = index_scans(read_file(file));
      if (resolutions.empty()) resolutions = CalibrationConfig{}.resolutions;
      ScanLadder ladder(img, CropSpec(crop));
      std::string csv = "resolution,scans,bytes,ssim\n";
      for (int r : resolutions) {
        for (std::size_t k = 1; k <= ladder.scan_count(); ++k) {
          csv += std::to_string(r) + "," + std::to_string(k) + "," +
                 std::to_string(ladder.bytes_at(k)) + "," + fmt_g6(ladder.ssim(r, k)) + "\n";
        }
      }
      emit(g, csv);
    } else if (calibrate->parsed()) {
      CalibrationConfig cfg;
      if (!g.config.empty()) cfg = load_experiment_config(g.config).calibration;
      if (g.seed) cfg.seed = *g.seed;
      const auto model = make_backend(model_uri, BackendKind::Backbone);
      if (!resolutions.empty()) cfg.resolutions = resolutions;
      const CalibrationResult r = build_threshold_table(*model, cfg.resolutions, CropSpec(crop),
                                                        data.load(g), cfg, g.workers);
      for (const auto& pr : r.per_resolution) {
        std::cerr << pr.resolution << ": threshold " << fmt_g6(pr.threshold) << " after "
                  << pr.evaluations << " evaluations, " << pr.loss() << " of "
                  << pr.allowed_misses << " allowed misses on " << pr.n << " images"
                  << (pr.fallback ? " (fallback)" : "") << "\n";
      }
      emit(g, r.table.to_json());
    } else if (savings->parsed()) {
      const QualityThresholdTable table = load_table(thresholds);
      const auto model = make_backend(model_uri, BackendKind::Backbone);
      emit(g, read_savings(table, *model, data.load(g), CropSpec(table.crop), resolutions,
                           g.workers)
                  .to_csv());
    } else if (pipeline->parsed()) {
      const QualityThresholdTable table = load_table(thresholds);
      const auto scale = make_backend(scale_uri, BackendKind::Scale);
      const auto bb = make_backend(model_uri, BackendKind::Backbone);
      const FlopsTable flops = FlopsTable::defaults();
      const DynamicResult d = run_dynamic(index_scans(read_file(file)), CropSpec(crop),
                                          PipelineModels{*scale, *bb, table, flops});
      emit(g, decision_json(d).dump(2) + "\n");
    } else if (csweep->parsed()) {
      const QualityThresholdTable table = load_table(thresholds);
      const auto scale = make_backend(scale_uri, BackendKind::Scale);
      const auto bb = make_backend(model_uri, BackendKind::Backbone);
      const FlopsTable flops = FlopsTable::defaults();
      SweepOptions opt;
      opt.crops = crops;
      opt.resolutions = backbone_resolutions(*bb, resolutions);
      opt.full_read = full_read;
      opt.workers = g.workers;
      emit(g, crop_sweep(data.load(g), PipelineModels{*scale, *bb, table, flops}, opt).to_csv());
    } else if (tune_cmd->parsed()) {
      topt.seed = g.seed.value_or(1);
      topt.strategy = strategy == "random" ? SearchStrategy::Random : SearchStrategy::RandomHillClimb;
      const TuneResult r = tune(parse_shape(shape_text), topt);
      std::cerr << "best " << r.best_schedule.to_string() << ": " << fmt_g6(r.best_gflops_per_s)
                << " GFLOP/s (default " << fmt_g6(r.ideal_flops / r.trials.front().median_seconds / 1e9)
                << ")\n";
      emit(g, r.to_json());
    } else if (scaling->parsed()) {
      topt.seed = g.seed.value_or(1);
      topt.strategy = strategy == "random" ? SearchStrategy::Random : SearchStrategy::RandomHillClimb;
      if (resolutions.empty()) resolutions = CalibrationConfig{}.resolutions;
      std::map<int, std::vector<ConvShape>> stacks;
      for (int r : resolutions) stacks[r] = resnet_stage_shapes(r, divisor);
      const ScalingReport rep = resolution_scaling_report(stacks, topt);
      std::cerr << "ideal " << fmt_g6(rep.ideal_ratio) << "x, default " << fmt_g6(rep.default_ratio)
                << "x, tuned " << fmt_g6(rep.tuned_ratio) << "x\n";
      emit(g, rep.to_csv());
    } else if (serve->parsed()) {
      ImageStore store = ImageStore::load(root);
      for (const auto& r : store.rejected()) std::cerr << "skipped " << r.file << ": " << r.reason << "\n";
      const ScanService service(std::move(store), load_table(thresholds), g.workers);
      ScanServer server(service);
      const auto [host, port] = split_host_port(listen);
      const int bound = server.bind(host, port);
      std::cerr << "serving " << service.store().images().size() << " images on " << host << ":"
                << bound << "\n";
      server.listen();
    } else if (synth->parsed()) {
      if (g.out.empty()) throw Error(ErrorCode::InvalidConfig, "synth needs --out DIR");
      save_dataset(generate_synthetic_scale_dataset(n, g.seed.value_or(0)), g.out);
    } else if (backend->parsed()) {
      std::unique_ptr<ModelBackend> m;
      if (kind == "scale") {
        m = std::make_unique<SyntheticScale>(ScaleBand{}, CalibrationConfig{}.resolutions, noise,
                                             g.seed.value_or(0));
      } else {
        if (noise != 0.0) throw Error(ErrorCode::InvalidConfig, "--noise applies to scale models");
        m = std::make_unique<SyntheticBackbone>();
      }
      if (!backend_listen.empty()) {
        const auto [host, port] = split_host_port(backend_listen);
        serve_backend_http(*m, host, port);
      } else {
        serve_backend_stream(*m, std::cin, std::cout);
      }
    } else if (shard->parsed()) {
      emit(g, train_shard_plan(size, backbones).manifest_json());
    } else if (conform->parsed()) {
      const auto m = make_backend(uri, kind == "scale" ? BackendKind::Scale : BackendKind::Backbone);
      const auto failures = check_backend_conformance(*m);
      for (const auto& f : failures) std::cout << "FAIL " << f << "\n";
      std::cout << (failures.empty() ? "conformant\n" : "not conformant\n");
      return failures.empty() ? 0 : 1;
    } else if (experiment->parsed()) {
      if (g.config.empty()) throw Error(ErrorCode::InvalidConfig, "experiment needs --config");
      const Bytes raw = read_file(g.config);
      json j;
      try {
        j = json::parse(raw.begin(), raw.end());
      } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, e.what());
      }
      if (g.seed) j["seed"] = *g.seed;
      if (!g.out.empty()) j["out"] = g.out;
      if (app.get_option("--workers")->count() > 0) j["workers"] = g.workers;
      const ExperimentReport rep = run_experiment(experiment_config_from_json(j));
      for (const auto& p : rep.written) std::cerr << "wrote " << p.string() << "\n";
      if (!rep.ok()) {
        for (const auto& v : rep.violations) {
          std::cerr << json{{"error", "InvariantViolation"}, {"message", v}}.dump() << "\n";
        }
        return 1;
      }
    }
  } catch (const Error& e) {
    json err = {{"error", std::string(to_string(e.code()))}, {"message", e.what()}};
    if (e.offset()) err["offset"] = *e.offset();
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  }
  return 0;
}
