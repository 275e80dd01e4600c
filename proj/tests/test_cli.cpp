#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <sys/wait.h>

#include <json.hpp>

#include "resotune/io.hpp"
#include "resotune/jpeg_scan.hpp"
#include "support/fixtures.hpp"

using namespace resotune;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

// stdout captured, stderr dropped.
Run cli(const std::string& args) {
  const std::string cmd = std::string(RESOTUNE_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, got);
  const int raw = ::pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

}  // namespace

TEST_CASE("cli image commands") {
  fixtures::TempDir dir("cli");
  const fs::path root = dir.path();
  REQUIRE(cli("synth --n 5 --seed 3 --out " + (root / "ds").string()).status == 0);
  CHECK(fs::exists(root / "ds" / "labels.csv"));
  const fs::path img = root / "ds" / "images" / "img000000.jpg";
  REQUIRE(fs::exists(img));

  const Run idx = cli("index " + img.string());
  REQUIRE(idx.status == 0);
  const ScanIndexedImage indexed = index_scans(read_file(img));
  const json j = json::parse(idx.out);
  CHECK(j["scan_offsets"].size() == indexed.scan_count());
  CHECK(j["total_bytes"] == indexed.total_bytes());
  CHECK(j["progressive"] == true);

  const fs::path cut = root / "cut.jpg";
  REQUIRE(cli("truncate " + img.string() + " -k 2 --out " + cut.string()).status == 0);
  CHECK(read_file(cut) == truncate_at_scan(indexed, 2));

  const Run ssim = cli("ssim " + img.string() + " " + img.string());
  REQUIRE(ssim.status == 0);
  CHECK(json::parse(ssim.out)["ssim"] == 1.0);

  CHECK(cli("index " + (root / "missing.jpg").string()).status == 2);
  CHECK(cli("truncate " + img.string() + " -k 0").status != 0);
  CHECK(cli("").status != 0);
}

TEST_CASE("cli model commands") {
  const Run plan = cli("shard-plan --size 10 --backbones 4");
  REQUIRE(plan.status == 0);
  CHECK(json::parse(plan.out)["backbones"].size() == 4);
  CHECK(cli("shard-plan --size 3 --backbones 4").status == 2);

  const Run tune = cli("tune --shape 4,4,8,8,3,1,1 --budget 3 --seed 2");
  REQUIRE(tune.status == 0);
  CHECK(json::parse(tune.out)["trials"].size() == 3);
  CHECK(cli("tune --shape 4,4,8 --budget 3").status == 2);

  CHECK(cli("conformance synthetic --kind scale").status == 0);
  CHECK(cli("conformance synthetic --kind backbone").status == 0);
}

TEST_CASE("cli experiment") {
  fixtures::TempDir dir("cli-exp");
  const fs::path cfg = fs::path(dir.path()) / "cfg.json";
  std::ofstream(cfg) << json{{"dataset", {{"synthetic", {{"n", 12}}}}},
                             {"crops", {1.0}},
                             {"resolutions", {112, 224}},
                             {"calibration", {{"accuracy_budget", 0.1}}},
                             {"seed", 3}}
                            .dump();
  const fs::path out = fs::path(dir.path()) / "out";
  REQUIRE(cli("experiment --config " + cfg.string() + " --out " + out.string()).status == 0);
  for (const char* f : {"thresholds.json", "accflops.csv", "storage.csv", "resolved_config.json"}) {
    CHECK(fs::exists(out / f));
  }

  std::ofstream(cfg) << R"({"dataset": {"synthetic": {"n": 4}}, "typo": 1})";
  CHECK(cli("experiment --config " + cfg.string()).status == 2);
  CHECK(cli("experiment").status == 2);
}
