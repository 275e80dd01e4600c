#include "resotune/ssim_reference.hpp"

#include <algorithm>
#include <cmath>

#include "resotune/error.hpp"

namespace resotune {

namespace {

// Valid-mode separable filter.
std::vector<double> filter_valid(const std::vector<double>& v, int w, int h,
                                 const std::vector<double>& k) {
  const int win = static_cast<int>(k.size());
  const int ow = w - win + 1;
  const int oh = h - win + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < win; ++i) {
        acc += k[static_cast<std::size_t>(i)] *
               v[static_cast<std::size_t>(y) * w + x + i];
      }
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < win; ++i) {
        acc += k[static_cast<std::size_t>(i)] *
               tmp[static_cast<std::size_t>(y + i) * ow + x];
      }
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

std::vector<double> squared(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * v[i];
  return out;
}

std::vector<double> product(const std::vector<double>& a,
                            const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline double ssim_term(double mu_a, double mu_b, double var_a, double var_b,
                        double cov, double c1, double c2) {
  return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

}  // namespace

SsimReference::SsimReference(const LumaPlane& reference,
                             const SsimParams& params)
    : ref_(reference), params_(params) {
  if (!(params.k1 > 0.0 && params.k2 > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "SSIM constants must be positive");
  }
  if (ref_.width < 1 || ref_.height < 1) {
    throw Error(ErrorCode::DimensionMismatch, "SSIM of an empty plane");
  }
  window_ = std::max(1, std::min({params.window_size, ref_.width, ref_.height}));
  c1_ = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  c2_ = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);

  if (params.window == SsimWindow::Gaussian) {
    kernel_.resize(static_cast<std::size_t>(window_));
    const double center = (window_ - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < window_; ++i) {
      const double d = i - center;
      kernel_[static_cast<std::size_t>(i)] =
          std::exp(-(d * d) / (2.0 * params.gaussian_sigma * params.gaussian_sigma));
      total += kernel_[static_cast<std::size_t>(i)];
    }
    for (double& k : kernel_) k /= total;
    mu_a_ = filter_valid(ref_.values, ref_.width, ref_.height, kernel_);
    ex_aa_ = filter_valid(squared(ref_.values), ref_.width, ref_.height, kernel_);
  }
}

double SsimReference::score(const PixelRaster& candidate) const {
  return score(to_luma(candidate));
}

double SsimReference::score(const LumaPlane& candidate) const {
  if (candidate.width != ref_.width || candidate.height != ref_.height) {
    throw Error(ErrorCode::DimensionMismatch,
                "ssim inputs differ in dimensions");
  }
  return params_.window == SsimWindow::Uniform ? score_uniform(candidate)
                                               : score_gaussian(candidate);
}

// Fused sliding-window pass: per output row, column sums over the window's
// rows are updated incrementally, then box sums slide along the row. Inputs
// are 8-bit integers or BT.601 luma, so running sums stay exact or nearly so.
double SsimReference::score_uniform(const LumaPlane& b) const {
  const int w = ref_.width;
  const int h = ref_.height;
  const int win = window_;
  const int nx = w - win + 1;
  const int ny = h - win + 1;
  const double* pa = ref_.values.data();
  const double* pb = b.values.data();

  std::vector<double> col(static_cast<std::size_t>(w) * 5, 0.0);
  double* ca = col.data();
  double* cb = ca + w;
  double* caa = cb + w;
  double* cbb = caa + w;
  double* cab = cbb + w;
  auto accumulate_row = [&](int y, double sign) {
    const double* ra = pa + static_cast<std::size_t>(y) * w;
    const double* rb = pb + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const double va = ra[x];
      const double vb = rb[x];
      ca[x] += sign * va;
      cb[x] += sign * vb;
      caa[x] += sign * (va * va);
      cbb[x] += sign * (vb * vb);
      cab[x] += sign * (va * vb);
    }
  };

  std::vector<double> box(static_cast<std::size_t>(nx) * 5);
  double* sa = box.data();
  double* sb = sa + nx;
  double* saa = sb + nx;
  double* sbb = saa + nx;
  double* sab = sbb + nx;

  const double inv_n = 1.0 / (static_cast<double>(win) * win);
  double total = 0.0;
  for (int y = 0; y < win; ++y) accumulate_row(y, 1.0);
  for (int y = 0; y < ny; ++y) {
    if (y > 0) {
      accumulate_row(y - 1, -1.0);
      accumulate_row(y + win - 1, 1.0);
    }
    double ra = 0, rb = 0, raa = 0, rbb = 0, rab = 0;
    for (int x = 0; x < win; ++x) {
      ra += ca[x];
      rb += cb[x];
      raa += caa[x];
      rbb += cbb[x];
      rab += cab[x];
    }
    for (int x = 0; x < nx; ++x) {
      if (x > 0) {
        const int in = x + win - 1;
        const int out = x - 1;
        ra += ca[in] - ca[out];
        rb += cb[in] - cb[out];
        raa += caa[in] - caa[out];
        rbb += cbb[in] - cbb[out];
        rab += cab[in] - cab[out];
      }
      sa[x] = ra;
      sb[x] = rb;
      saa[x] = raa;
      sbb[x] = rbb;
      sab[x] = rab;
    }
    double row_total = 0.0;
    for (int x = 0; x < nx; ++x) {
      const double mu_a = sa[x] * inv_n;
      const double mu_b = sb[x] * inv_n;
      row_total += ssim_term(mu_a, mu_b, saa[x] * inv_n - mu_a * mu_a,
                             sbb[x] * inv_n - mu_b * mu_b,
                             sab[x] * inv_n - mu_a * mu_b, c1_, c2_);
    }
    total += row_total;
  }
  return total / (static_cast<double>(nx) * ny);
}

double SsimReference::score_gaussian(const LumaPlane& b) const {
  const int w = ref_.width;
  const int h = ref_.height;
  const auto mu_b = filter_valid(b.values, w, h, kernel_);
  const auto ex_bb = filter_valid(squared(b.values), w, h, kernel_);
  const auto ex_ab = filter_valid(product(ref_.values, b.values), w, h, kernel_);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_b.size(); ++i) {
    const double ma = mu_a_[i];
    const double mb = mu_b[i];
    total += ssim_term(ma, mb, ex_aa_[i] - ma * ma, ex_bb[i] - mb * mb,
                       ex_ab[i] - ma * mb, c1_, c2_);
  }
  return total / static_cast<double>(mu_b.size());
}

}  // namespace resotune
