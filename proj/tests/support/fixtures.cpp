#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>

#include <unistd.h>

#include "resotune/rng.hpp"

namespace fixtures {

using resotune::Bytes;
using resotune::EncodedJpeg;
using resotune::EncodeOptions;
using resotune::PixelRaster;
using resotune::ScanSpec;

PixelRaster natural_raster(int width, int height, int channels, std::uint64_t seed) {
  resotune::Rng rng(seed);
  const double fx = rng.uniform(5.0, 11.0), fy = rng.uniform(7.0, 15.0);
  const double cx = rng.uniform(0.3, 0.7) * width, cy = rng.uniform(0.3, 0.7) * height;
  const double radius = 0.25 * std::min(width, height);
  PixelRaster r(width, height, channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double shade = 110.0 + 50.0 * std::sin(x / fx) * std::cos(y / fy) + 0.3 * x;
      const bool inside = std::hypot(x - cx, y - cy) < radius;
      const bool stripe = (y / 6) % 2 == 0 && x > width * 3 / 4;
      for (int c = 0; c < channels; ++c) {
        double v = shade + (inside ? 70.0 - 30.0 * c : 0.0) + (stripe ? -60.0 : 0.0);
        v += 25.0 * c * std::sin((x + y) / 9.0);
        v += rng.uniform(-18.0, 18.0);
        r.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return r;
}

namespace {

std::vector<ScanSpec> color_spectral() {
  return {{{0, 1, 2}, 0, 0, 0, 0},
          {{0}, 1, 5, 0, 0},
          {{1}, 1, 63, 0, 0},
          {{2}, 1, 63, 0, 0},
          {{0}, 6, 63, 0, 0}};
}

std::vector<ScanSpec> color_successive() {
  return {{{0, 1, 2}, 0, 0, 0, 1},
          {{0}, 1, 63, 0, 1},
          {{1}, 1, 63, 0, 0},
          {{2}, 1, 63, 0, 0},
          {{0, 1, 2}, 0, 0, 1, 0},
          {{0}, 1, 63, 1, 0}};
}

std::vector<ScanSpec> gray_successive() {
  return {{{0}, 0, 0, 0, 2},
          {{0}, 0, 0, 2, 1},
          {{0}, 0, 0, 1, 0},
          {{0}, 1, 63, 0, 1},
          {{0}, 1, 63, 1, 0}};
}

std::vector<Fixture> build_corpus() {
  struct Script {
    const char* name;
    std::vector<ScanSpec> scans;
  };
  const std::vector<Script> gray_scripts = {
      {"standard", {}},
      {"spectral3", resotune::spectral_script_gray({0, 5, 63})},
      {"spectral10", resotune::spectral_script_gray({0, 1, 2, 3, 5, 9, 14, 20, 35, 63})},
      {"successive", gray_successive()},
  };
  const std::vector<Script> color_scripts = {
      {"standard", {}},
      {"spectral", color_spectral()},
      {"successive", color_successive()},
  };
  struct Sampling {
    const char* name;
    int h, v;
  };
  const std::vector<Sampling> samplings = {{"420", 2, 2}, {"422", 2, 1}, {"444", 1, 1}};
  const unsigned restarts[] = {0, 3};

  std::vector<Fixture> out;
  std::uint64_t seed = 100;
  auto add = [&](std::string name, int w, int h, int channels, EncodeOptions opts) {
    Fixture f;
    f.name = std::move(name);
    f.options = opts;
    f.source = natural_raster(w, h, channels, seed++);
    f.encoded = resotune::encode_jpeg(f.source, opts);
    out.push_back(std::move(f));
  };
  for (const auto& s : gray_scripts) {
    for (unsigned rst : restarts) {
      EncodeOptions o;
      o.scan_script = s.scans;
      o.restart_interval = rst;
      o.quality = rst ? 75 : 92;
      add(std::string("gray-") + s.name + "-rst" + std::to_string(rst), 96 + 5 * rst, 72 + rst,
          1, o);
    }
  }
  for (const auto& s : color_scripts) {
    for (const auto& smp : samplings) {
      for (unsigned rst : restarts) {
        EncodeOptions o;
        o.scan_script = s.scans;
        o.restart_interval = rst;
        o.h_samp = smp.h;
        o.v_samp = smp.v;
        o.quality = 85;
        add(std::string("color-") + s.name + "-" + smp.name + "-rst" + std::to_string(rst),
            101, 67 + 4 * rst, 3, o);
      }
    }
  }
  return out;
}

// Start of the next non-fill marker at or after `p`, skipping entropy data.
std::size_t skip_entropy(const Bytes& b, std::size_t p) {
  while (p + 1 < b.size()) {
    if (b[p] == 0xFF) {
      const std::uint8_t n = b[p + 1];
      if (n == 0x00 || (n >= 0xD0 && n <= 0xD7)) {
        p += 2;
        continue;
      }
      if (n == 0xFF) {
        ++p;
        continue;
      }
      return p;
    }
    ++p;
  }
  return b.size();
}

// Calls `on_scan(begin, end)` for each entropy-coded segment; returns the SOS count.
std::size_t walk(const Bytes& b, const std::function<void(std::size_t, std::size_t)>& on_scan) {
  if (b.size() < 4 || b[0] != 0xFF || b[1] != 0xD8) return 0;
  std::size_t p = 2, scans = 0;
  while (p + 3 < b.size()) {
    if (b[p] != 0xFF) return scans;
    std::uint8_t m = b[p + 1];
    if (m == 0xFF) {
      ++p;
      continue;
    }
    if (m == 0xD9) break;
    const std::size_t len = (std::size_t{b[p + 2]} << 8) | b[p + 3];
    if (m == 0xDA) {
      ++scans;
      const std::size_t data = p + 2 + len;
      const std::size_t next = skip_entropy(b, data);
      if (on_scan) on_scan(data, next);
      p = next;
    } else {
      p += 2 + len;
    }
  }
  return scans;
}

}  // namespace

const std::vector<Fixture>& corpus() {
  static const std::vector<Fixture> c = build_corpus();
  return c;
}

Bytes baseline_jpeg(int width, int height, int channels) {
  EncodeOptions o;
  o.progressive = false;
  return resotune::encode_jpeg(natural_raster(width, height, channels, 9), o).bytes;
}

EncodedJpeg spectral_gray(int width, int height, const std::vector<int>& band_ends,
                          std::uint64_t seed) {
  EncodeOptions o;
  o.scan_script = resotune::spectral_script_gray(band_ends);
  return resotune::encode_jpeg(natural_raster(width, height, 1, seed), o);
}

std::size_t count_sos(const Bytes& bytes) { return walk(bytes, nullptr); }

bool entropy_contains(const Bytes& bytes, std::uint8_t lo, std::uint8_t hi) {
  bool found = false;
  walk(bytes, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i + 1 < end; ++i) {
      if (bytes[i] == 0xFF && bytes[i + 1] >= lo && bytes[i + 1] <= hi) found = true;
    }
  });
  return found;
}

std::vector<double> naive_conv(const std::vector<float>& input,
                               const std::vector<float>& weights,
                               const resotune::ConvShape& s) {
  const int oh = s.out_height(), ow = s.out_width();
  std::vector<double> out(static_cast<std::size_t>(s.out_channels) * oh * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      for (int o = 0; o < s.out_channels; ++o) {
        double acc = 0;
        for (int c = 0; c < s.in_channels; ++c) {
          for (int ky = 0; ky < s.kernel_h; ++ky) {
            for (int kx = 0; kx < s.kernel_w; ++kx) {
              const int iy = y * s.stride + ky - s.padding;
              const int ix = x * s.stride + kx - s.padding;
              if (iy < 0 || ix < 0 || iy >= s.height || ix >= s.width) continue;
              acc += double{weights[((static_cast<std::size_t>(o) * s.in_channels + c) *
                                         s.kernel_h + ky) * s.kernel_w + kx]} *
                     input[(static_cast<std::size_t>(c) * s.height + iy) * s.width + ix];
            }
          }
        }
        out[(static_cast<std::size_t>(o) * oh + y) * ow + x] = acc;
      }
    }
  }
  return out;
}

ConvCase random_conv_case(std::uint64_t seed) {
  resotune::Rng rng(seed);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); };
  ConvCase c;
  resotune::ConvShape& s = c.shape;
  s.in_channels = pick(1, 12);
  s.out_channels = pick(1, 40);
  s.height = pick(3, 21);
  s.width = pick(3, 21);
  s.kernel_h = s.kernel_w = std::min(2 * pick(0, 2) + 1, std::min(s.height, s.width));
  s.stride = pick(1, 2);
  s.padding = pick(0, s.kernel_h / 2);
  const auto sp = resotune::ScheduleSpace::for_shape(s);
  auto any = [&](const auto& v) { return v[rng.below(v.size())]; };
  for (int attempt = 0; attempt < 100000; ++attempt) {
    resotune::ConvSchedule k;
    k.tile_oc = any(sp.tile_oc);
    k.tile_oh = any(sp.tile_oh);
    k.tile_ow = any(sp.tile_ow);
    k.vector_width = any(sp.vector_width);
    k.unroll = any(sp.unroll);
    k.loop_order = any(sp.orders);
    k.layout = any(sp.layouts);
    if (resotune::is_valid_schedule(s, k)) {
      c.schedule = k;
      return c;
    }
  }
  return c;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() /
                     ("resotune-" + tag + "-" + std::to_string(::getpid()) + "-" +
                      std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  path_ = p.string();
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace fixtures
