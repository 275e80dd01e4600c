#include "resotune/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "resotune/error.hpp"
#include "resotune/io.hpp"
#include "resotune/rng.hpp"

namespace resotune {

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::Disc: return "disc";
    case Shape::Square: return "square";
    case Shape::Cross: return "cross";
    case Shape::Ring: return "ring";
  }
  return "?";
}

double apparent_size(double object_scale, const CropSpec& crop, int resolution) {
  return object_scale * resolution / crop.linear_ratio();
}

namespace {

constexpr double kObjectLevel = 225.0;
constexpr double kBackgroundLevel = 110.0;
constexpr int kNoiseCell = 16;
constexpr int kSupersample = 4;
constexpr double kRingInner = 0.55;  // hole diameter / outer diameter
constexpr double kCrossArm = 1.0 / 3.0;

// Coordinates relative to the object center, in units of the object side.
bool inside(Shape shape, double u, double v) {
  switch (shape) {
    case Shape::Disc:
      return u * u + v * v <= 0.25;
    case Shape::Square:
      return std::abs(u) <= 0.5 && std::abs(v) <= 0.5;
    case Shape::Cross: {
      const double arm = kCrossArm / 2.0;
      const bool in_box = std::abs(u) <= 0.5 && std::abs(v) <= 0.5;
      return in_box && (std::abs(u) <= arm || std::abs(v) <= arm);
    }
    case Shape::Ring: {
      const double r2 = u * u + v * v;
      const double inner = kRingInner / 2.0;
      return r2 <= 0.25 && r2 >= inner * inner;
    }
  }
  return false;
}

std::string image_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img%06zu", index);
  return buf;
}

}  // namespace

PixelRaster render_synthetic_image(std::uint64_t seed, std::size_t index,
                                   const SyntheticParams& params,
                                   int* label_out, double* scale_out) {
  Rng rng(Rng::derive(seed, index));
  const int size = params.image_size;
  const Shape shape = static_cast<Shape>(index % kShapeClasses);

  double scale = std::exp(params.scale_log_mean + params.scale_log_sigma * rng.normal());
  scale = std::clamp(scale, params.scale_min, params.scale_max);
  const double cx = size * (0.5 + rng.uniform(-params.center_jitter, params.center_jitter));
  const double cy = size * (0.5 + rng.uniform(-params.center_jitter, params.center_jitter));
  const double side = scale * size;

  const int cells = size / kNoiseCell + 2;
  std::vector<double> grid(static_cast<std::size_t>(cells) * cells);
  for (double& g : grid) g = rng.uniform(-1.0, 1.0);

  PixelRaster out(size, size, 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double gx = static_cast<double>(x) / kNoiseCell;
      const double gy = static_cast<double>(y) / kNoiseCell;
      const int ix = static_cast<int>(gx);
      const int iy = static_cast<int>(gy);
      double fx = gx - ix;
      double fy = gy - iy;
      fx = fx * fx * (3.0 - 2.0 * fx);
      fy = fy * fy * (3.0 - 2.0 * fy);
      auto g = [&](int i, int j) {
        return grid[static_cast<std::size_t>(j) * cells + i];
      };
      const double coarse =
          (g(ix, iy) * (1 - fx) + g(ix + 1, iy) * fx) * (1 - fy) +
          (g(ix, iy + 1) * (1 - fx) + g(ix + 1, iy + 1) * fx) * fy;
      const double bg = kBackgroundLevel + params.coarse_noise * coarse +
                        params.fine_noise * rng.uniform(-1.0, 1.0);

      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = x + (sx + 0.5) / kSupersample;
          const double py = y + (sy + 0.5) / kSupersample;
          if (inside(shape, (px - cx) / side, (py - cy) / side)) ++hits;
        }
      }
      const double coverage = hits / static_cast<double>(kSupersample * kSupersample);
      const double v = bg + coverage * (kObjectLevel - bg);
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
    }
  }
  if (label_out != nullptr) *label_out = static_cast<int>(shape);
  if (scale_out != nullptr) *scale_out = scale;
  return out;
}

Dataset generate_synthetic_scale_dataset(std::size_t n, std::uint64_t seed,
                                         const SyntheticParams& params) {
  if (n < 1) throw Error(ErrorCode::EmptyDataset, "dataset size must be >= 1");
  EncodeOptions opts;
  opts.quality = params.quality;
  opts.progressive = true;
  opts.scan_script = spectral_script_gray(params.scan_bands);

  Dataset ds;
  ds.identifier = "synthetic:n=" + std::to_string(n) + ",seed=" + std::to_string(seed);
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    int label = 0;
    double scale = 0.0;
    const PixelRaster raster = render_synthetic_image(seed, i, params, &label, &scale);
    EncodedJpeg enc = encode_jpeg(raster, opts);
    ds.images.push_back({image_id(i), label, scale, index_scans(std::move(enc.bytes))});
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw Error(ErrorCode::Io, "cannot write " + (dir / "labels.csv").string());
  labels << "file,label,object_scale\n";
  for (const auto& img : ds.images) {
    const fs::path rel = fs::path("images") / (img.id + ".jpg");
    write_file(dir / rel, img.image.bytes());
    char scale[32];
    std::snprintf(scale, sizeof(scale), "%.6g", img.object_scale);
    labels << rel.generic_string() << ',' << img.label << ',' << scale << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw Error(ErrorCode::Io, "missing " + (dir / "labels.csv").string());
  Dataset ds;
  ds.identifier = dir.string();
  std::string line;
  std::getline(labels, line);  // header
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string file, label, scale;
    std::getline(ss, file, ',');
    std::getline(ss, label, ',');
    std::getline(ss, scale, ',');
    LabeledImage img{std::filesystem::path(file).stem().string(), std::stoi(label),
                     scale.empty() ? 0.0 : std::stod(scale),
                     index_scans(read_file(dir / file))};
    ds.images.push_back(std::move(img));
  }
  if (ds.images.empty()) throw Error(ErrorCode::EmptyDataset, "no images in " + dir.string());
  return ds;
}

}  // namespace resotune
