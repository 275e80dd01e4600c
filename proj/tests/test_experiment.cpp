#include <doctest.h>

#include <algorithm>

#include <json.hpp>

#include "resotune/error.hpp"
#include "resotune/experiment.hpp"
#include "resotune/io.hpp"
#include "support/fixtures.hpp"

using namespace resotune;
using nlohmann::json;

namespace {

json small_config(const std::string& out) {
  return json{{"dataset", {{"synthetic", {{"n", 30}}}}},
              {"crops", {0.56, 1.0}},
              {"resolutions", {112, 224, 448}},
              {"calibration", {{"accuracy_budget", 0.05}}},
              {"out", out},
              {"seed", 7},
              {"workers", 1}};
}

std::string slurp(const std::filesystem::path& p) {
  const Bytes b = read_file(p);
  return std::string(b.begin(), b.end());
}

ErrorCode code_of(auto fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("experiment config parsing") {
  const ExperimentConfig cfg = experiment_config_from_json(small_config("x"));
  REQUIRE(cfg.synthetic);
  CHECK(cfg.synthetic->n == 30);
  CHECK(cfg.synthetic->seed == 7);
  CHECK(cfg.calibration.seed == 7);
  CHECK(cfg.calibration.accuracy_budget == 0.05);
  CHECK(cfg.calibration.resolutions == std::vector<int>{112, 224, 448});

  const json r = cfg.resolved();
  CHECK(r["seed"] == 7);
  CHECK(r["dataset"]["synthetic"]["seed"] == 7);
  CHECK(r["backends"]["scale"] == "synthetic");
  CHECK_FALSE(r.contains("workers"));
  // The resolved form parses back to the same thing.
  CHECK(experiment_config_from_json(r).resolved() == r);

  json unknown = small_config("x");
  unknown["colour"] = "blue";
  CHECK(code_of([&] { experiment_config_from_json(unknown); }) == ErrorCode::InvalidConfig);
  json nested = small_config("x");
  nested["dataset"]["synthetic"]["size"] = 3;
  CHECK(code_of([&] { experiment_config_from_json(nested); }) == ErrorCode::InvalidConfig);

  json path = small_config("x");
  path["dataset"] = {{"path", "/nonexistent"}};
  CHECK(code_of([&] { experiment_config_from_json(path); }) == ErrorCode::InvalidConfig);
  path["backends"] = {{"scale", "synthetic"}};
  CHECK(code_of([&] { experiment_config_from_json(path); }) == ErrorCode::InvalidConfig);
  path["backends"]["backbone"] = "synthetic";
  CHECK_NOTHROW(experiment_config_from_json(path));

  json both = small_config("x");
  both["dataset"]["path"] = "/tmp";
  CHECK(code_of([&] { experiment_config_from_json(both); }) == ErrorCode::InvalidConfig);
  json unsorted = small_config("x");
  unsorted["resolutions"] = {224, 112};
  CHECK(code_of([&] { experiment_config_from_json(unsorted); }) == ErrorCode::InvalidConfig);
  json bad_crop = small_config("x");
  bad_crop["crops"] = {0.0};
  CHECK(code_of([&] { experiment_config_from_json(bad_crop); }) == ErrorCode::InvalidConfig);
  json mismatch = small_config("x");
  mismatch["calibration"]["resolutions"] = {112};
  CHECK(code_of([&] { experiment_config_from_json(mismatch); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("experiment runs end to end and reproduces itself") {
  fixtures::TempDir a("exp-a"), b("exp-b");
  const ExperimentReport ra = run_experiment(experiment_config_from_json(small_config(a.path())));
  CHECK_MESSAGE(ra.ok(), (ra.ok() ? "" : ra.violations.front()));
  CHECK(ra.written.size() == 4);
  CHECK(ra.sweep.aggregates.size() == 2 * (3 + 1));

  const std::string csv = slurp(std::filesystem::path(a.path()) / "accflops.csv");
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  CHECK(lines >= 1 + 8);

  const json resolved = json::parse(slurp(std::filesystem::path(a.path()) / "resolved_config.json"));
  CHECK(resolved["seed"] == 7);
  CHECK(resolved["dataset"]["synthetic"]["n"] == 30);

  const QualityThresholdTable t =
      QualityThresholdTable::from_json(slurp(std::filesystem::path(a.path()) / "thresholds.json"));
  CHECK(t.to_json() == ra.calibration.table.to_json());

  run_experiment(experiment_config_from_json(small_config(b.path())));
  for (const char* f : {"thresholds.json", "accflops.csv", "storage.csv"}) {
    CAPTURE(f);
    CHECK(slurp(std::filesystem::path(a.path()) / f) == slurp(std::filesystem::path(b.path()) / f));
  }
}
