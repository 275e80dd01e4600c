#include "resotune/autotune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include <json.hpp>

#include "resotune/error.hpp"
#include "resotune/format.hpp"
#include "resotune/rng.hpp"

namespace resotune {

// ---- shapes ---------------------------------------------------------------

double ConvShape::ideal_flops() const {
  return 2.0 * out_channels * out_height() * out_width() * in_channels * kernel_h *
         kernel_w * batch;
}

std::size_t ConvShape::input_size() const {
  return static_cast<std::size_t>(in_channels) * height * width;
}

std::size_t ConvShape::weight_size() const {
  return static_cast<std::size_t>(out_channels) * in_channels * kernel_h * kernel_w;
}

std::size_t ConvShape::output_size() const {
  return static_cast<std::size_t>(out_channels) * out_height() * out_width();
}

void ConvShape::validate() const {
  if (in_channels < 1 || out_channels < 1 || height < 1 || width < 1 || kernel_h < 1 ||
      kernel_w < 1 || stride < 1 || padding < 0) {
    throw Error(ErrorCode::ShapeMismatch, "non-positive conv dimension in " + to_string());
  }
  if (batch != 1) throw Error(ErrorCode::ShapeMismatch, "only batch 1 is supported");
  if (height + 2 * padding < kernel_h || width + 2 * padding < kernel_w) {
    throw Error(ErrorCode::ShapeMismatch, "kernel larger than padded input in " + to_string());
  }
}

std::string ConvShape::to_string() const {
  std::ostringstream s;
  s << in_channels << ',' << out_channels << ',' << height << ',' << width << ','
    << kernel_h;
  if (kernel_w != kernel_h) s << 'x' << kernel_w;
  s << ',' << stride << ',' << padding;
  return s.str();
}

ConvShape parse_shape(const std::string& text) {
  std::vector<int> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ShapeMismatch, "bad shape field '" + item + "'");
    }
  }
  if (v.size() != 7) {
    throw Error(ErrorCode::ShapeMismatch, "shape needs ic,oc,h,w,k,stride,pad");
  }
  ConvShape s{v[0], v[1], v[2], v[3], v[4], v[4], v[5], v[6]};
  s.validate();
  return s;
}

// ---- schedules --------------------------------------------------------------

namespace {

constexpr const char* kDimNames[] = {"oc", "oh", "ow", "ic"};

bool is_permutation(const LoopOrder& o) {
  bool seen[4] = {};
  for (LoopDim d : o) {
    const int i = static_cast<int>(d);
    if (i < 0 || i > 3 || seen[i]) return false;
    seen[i] = true;
  }
  return true;
}

}  // namespace

std::string loop_order_name(const LoopOrder& order) {
  std::string s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i) s += '-';
    s += kDimNames[static_cast<int>(order[i])];
  }
  return s;
}

LoopOrder parse_loop_order(const std::string& name) {
  LoopOrder o{};
  std::stringstream ss(name);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, '-')) {
    if (i >= 4) break;
    const auto it = std::find(std::begin(kDimNames), std::end(kDimNames), item);
    if (it == std::end(kDimNames)) {
      throw Error(ErrorCode::InvalidSchedule, "unknown loop dimension '" + item + "'");
    }
    o[i++] = static_cast<LoopDim>(it - std::begin(kDimNames));
  }
  if (i != 4 || !is_permutation(o)) {
    throw Error(ErrorCode::InvalidSchedule, "loop order must permute oc,oh,ow,ic");
  }
  return o;
}

const char* layout_name(Layout layout) {
  return layout == Layout::ChannelMajor ? "channel-major" : "channel-blocked";
}

std::string ConvSchedule::to_string() const {
  std::ostringstream s;
  s << "tiles=" << tile_oc << 'x' << tile_oh << 'x' << tile_ow
    << " order=" << loop_order_name(loop_order) << " vec=" << vector_width
    << " unroll=" << unroll << " layout=" << layout_name(layout);
  return s.str();
}

int host_max_vector_width() {
#if defined(__AVX512F__)
  return 16;
#elif defined(__AVX__)
  return 8;
#else
  return 4;
#endif
}

void validate_schedule(const ConvShape& shape, const ConvSchedule& k) {
  shape.validate();
  auto bad = [&](const std::string& why) {
    throw Error(ErrorCode::InvalidSchedule, why + " (" + k.to_string() + ")");
  };
  if (k.tile_oc < 1 || k.tile_oh < 1 || k.tile_ow < 1) bad("tiles must be >= 1");
  if (k.tile_oc > shape.out_channels || k.tile_oh > shape.out_height() ||
      k.tile_ow > shape.out_width()) {
    bad("tile exceeds the output extent");
  }
  const int v = k.vector_width;
  if (v != 1 && v != 2 && v != 4 && v != 8 && v != 16) bad("vector width not in {1,2,4,8,16}");
  if (v > host_max_vector_width()) bad("vector width unsupported on this host");
  if (k.unroll != 1 && k.unroll != 2 && k.unroll != 4 && k.unroll != 8) {
    bad("unroll not in {1,2,4,8}");
  }
  if (!is_permutation(k.loop_order)) bad("loop order is not a permutation");
  if (k.layout == Layout::ChannelMajor) {
    if (v * k.unroll > k.tile_ow) bad("vector block wider than the ow tile");
  } else {
    if (k.tile_oc % v != 0) bad("oc tile not a multiple of the vector width");
    if (k.unroll > k.tile_oh * k.tile_ow) bad("unroll exceeds the pixels in a tile");
  }
}

bool is_valid_schedule(const ConvShape& shape, const ConvSchedule& sched) {
  try {
    validate_schedule(shape, sched);
    return true;
  } catch (const Error&) {
    return false;
  }
}

// ---- reference --------------------------------------------------------------

namespace {

void check_tensors(const std::vector<float>& input, const std::vector<float>& weights,
                   const ConvShape& s) {
  s.validate();
  if (input.size() != s.input_size()) {
    throw Error(ErrorCode::ShapeMismatch, "input size does not match " + s.to_string());
  }
  if (weights.size() != s.weight_size()) {
    throw Error(ErrorCode::ShapeMismatch, "weight size does not match " + s.to_string());
  }
}

template <class Acc, class Term>
std::vector<Acc> direct_conv(const std::vector<float>& in, const std::vector<float>& w,
                             const ConvShape& s, Term term) {
  const int oh = s.out_height(), ow = s.out_width();
  std::vector<Acc> out(s.output_size());
  for (int o = 0; o < s.out_channels; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int c = 0; c < s.in_channels; ++c) {
          for (int ky = 0; ky < s.kernel_h; ++ky) {
            const int iy = y * s.stride + ky - s.padding;
            if (iy < 0 || iy >= s.height) continue;
            for (int kx = 0; kx < s.kernel_w; ++kx) {
              const int ix = x * s.stride + kx - s.padding;
              if (ix < 0 || ix >= s.width) continue;
              const double wv =
                  w[((static_cast<std::size_t>(o) * s.in_channels + c) * s.kernel_h + ky) *
                        s.kernel_w +
                    kx];
              const double xv =
                  in[(static_cast<std::size_t>(c) * s.height + iy) * s.width + ix];
              acc += term(wv, xv);
            }
          }
        }
        out[(static_cast<std::size_t>(o) * oh + y) * ow + x] = static_cast<Acc>(acc);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<float> conv_reference(const std::vector<float>& input,
                                  const std::vector<float>& weights,
                                  const ConvShape& shape) {
  check_tensors(input, weights, shape);
  return direct_conv<float>(input, weights, shape,
                            [](double w, double x) { return w * x; });
}

std::vector<double> conv_magnitude(const std::vector<float>& input,
                                   const std::vector<float>& weights,
                                   const ConvShape& shape) {
  check_tensors(input, weights, shape);
  return direct_conv<double>(input, weights, shape,
                             [](double w, double x) { return std::abs(w * x); });
}

bool outputs_match(const std::vector<float>& a, const std::vector<float>& ref,
                   const std::vector<double>& magnitude, double rel, double abs_floor) {
  if (a.size() != ref.size() || a.size() != magnitude.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - ref[i]);
    if (!(d <= rel * magnitude[i] + abs_floor)) return false;
  }
  return true;
}

// ---- scheduled kernel -------------------------------------------------------

struct ConvKernel::Impl {
  ConvShape s;
  ConvSchedule k;
  int oh = 0, ow = 0, hp = 0, wp = 0;
  std::vector<float> padded;
  std::vector<float> w;      // OIHW
  std::vector<float> wpack;  // [oc / V][ic][kh][kw][V]
  // Channel-major: (oc, oy, ox). Blocked: oc plus U per-pixel input and
  // output offsets.
  using Major = void (*)(const Impl&, int, int, int, int, int, float*);
  using Blocked = void (*)(const Impl&, int, const std::size_t*, const std::size_t*, int,
                           int, float*);
  Major major = nullptr;
  Blocked blocked = nullptr;
  Blocked blocked_one = nullptr;  // U = 1, for tails
  int step_oc = 1, step_pix = 1;

  void generic(int oc, int noc, int oy, int ox, int nox, int ic0, int ic1,
               float* out) const {
    for (int o = oc; o < oc + noc; ++o) {
      for (int x = ox; x < ox + nox; ++x) {
        float acc = 0.0f;
        for (int c = ic0; c < ic1; ++c) {
          const float* wb = w.data() + (static_cast<std::size_t>(o) * s.in_channels + c) *
                                           s.kernel_h * s.kernel_w;
          const float* ib = padded.data() + static_cast<std::size_t>(c) * hp * wp;
          for (int ky = 0; ky < s.kernel_h; ++ky) {
            const float* row = ib + static_cast<std::size_t>(oy * s.stride + ky) * wp +
                               static_cast<std::size_t>(x) * s.stride;
            for (int kx = 0; kx < s.kernel_w; ++kx) acc += wb[ky * s.kernel_w + kx] * row[kx];
          }
        }
        out[(static_cast<std::size_t>(o) * oh + oy) * ow + x] += acc;
      }
    }
  }
};

namespace {

template <int V>
struct Vec {
  typedef float type __attribute__((vector_size(V * sizeof(float))));
};

// Lanes along ow, U vectors per block.
template <int V, int U, bool S1>
void kernel_channel_major(const ConvKernel::Impl& p, int oc, int oy, int ox, int ic0,
                          int ic1, float* out) {
  using vf = typename Vec<V>::type;
  const ConvShape& s = p.s;
  const int st = S1 ? 1 : s.stride;
  vf acc[U];
  for (int u = 0; u < U; ++u) acc[u] = vf{};
  for (int c = ic0; c < ic1; ++c) {
    const float* wb = p.w.data() +
                      (static_cast<std::size_t>(oc) * s.in_channels + c) * s.kernel_h * s.kernel_w;
    const float* ib = p.padded.data() + static_cast<std::size_t>(c) * p.hp * p.wp;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      const float* row = ib + static_cast<std::size_t>(oy * st + ky) * p.wp;
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        const float wv = wb[ky * s.kernel_w + kx];
        for (int u = 0; u < U; ++u) {
          const float* src = row + static_cast<std::size_t>(ox + u * V) * st + kx;
          vf x;
          if constexpr (S1) {
            std::memcpy(&x, src, sizeof x);
          } else {
            for (int l = 0; l < V; ++l) x[l] = src[l * st];
          }
          acc[u] += wv * x;
        }
      }
    }
  }
  float* o = out + (static_cast<std::size_t>(oc) * p.oh + oy) * p.ow + ox;
  for (int u = 0; u < U; ++u) {
    for (int l = 0; l < V; ++l) o[u * V + l] += acc[u][l];
  }
}

// Lanes along oc (packed weights); U output pixels, not necessarily on one
// row, each broadcasting its own input scalar.
template <int V, int U>
void kernel_channel_blocked(const ConvKernel::Impl& p, int oc, const std::size_t* in_off,
                            const std::size_t* out_off, int ic0, int ic1, float* out) {
  using vf = typename Vec<V>::type;
  const ConvShape& s = p.s;
  const std::size_t ocb = static_cast<std::size_t>(oc / V);
  vf acc[U];
  for (int u = 0; u < U; ++u) acc[u] = vf{};
  for (int c = ic0; c < ic1; ++c) {
    const float* wb = p.wpack.data() +
                      ((ocb * s.in_channels + c) * s.kernel_h * s.kernel_w) * V;
    const float* ib = p.padded.data() + static_cast<std::size_t>(c) * p.hp * p.wp;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      const float* row = ib + static_cast<std::size_t>(ky) * p.wp;
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        vf wv;
        std::memcpy(&wv, wb + static_cast<std::size_t>(ky * s.kernel_w + kx) * V, sizeof wv);
        for (int u = 0; u < U; ++u) acc[u] += row[in_off[u] + kx] * wv;
      }
    }
  }
  const std::size_t plane = static_cast<std::size_t>(p.oh) * p.ow;
  for (int l = 0; l < V; ++l) {
    float* o = out + (static_cast<std::size_t>(oc) + l) * plane;
    for (int u = 0; u < U; ++u) o[out_off[u]] += acc[u][l];
  }
}

template <int V, int U>
void pick(ConvKernel::Impl& p, bool s1) {
  if (p.k.layout == Layout::ChannelMajor) {
    p.major = s1 ? &kernel_channel_major<V, U, true> : &kernel_channel_major<V, U, false>;
  } else {
    p.blocked = &kernel_channel_blocked<V, U>;
    p.blocked_one = &kernel_channel_blocked<V, 1>;
  }
}

template <int V>
void pick_unroll(ConvKernel::Impl& p, bool s1) {
  switch (p.k.unroll) {
    case 1: return pick<V, 1>(p, s1);
    case 2: return pick<V, 2>(p, s1);
    case 4: return pick<V, 4>(p, s1);
    default: return pick<V, 8>(p, s1);
  }
}

void pick_kernel(ConvKernel::Impl& p, bool s1) {
  switch (p.k.vector_width) {
    case 1: return pick_unroll<1>(p, s1);
    case 2: return pick_unroll<2>(p, s1);
    case 4: return pick_unroll<4>(p, s1);
    case 8: return pick_unroll<8>(p, s1);
    default: return pick_unroll<16>(p, s1);
  }
}

}  // namespace

ConvKernel::ConvKernel(const ConvShape& shape, const ConvSchedule& sched,
                       const std::vector<float>& weights)
    : impl_(std::make_unique<Impl>()) {
  validate_schedule(shape, sched);
  if (weights.size() != shape.weight_size()) {
    throw Error(ErrorCode::ShapeMismatch, "weight size does not match " + shape.to_string());
  }
  Impl& p = *impl_;
  p.s = shape;
  p.k = sched;
  p.oh = shape.out_height();
  p.ow = shape.out_width();
  p.hp = shape.height + 2 * shape.padding;
  p.wp = shape.width + 2 * shape.padding;
  p.padded.assign(static_cast<std::size_t>(shape.in_channels) * p.hp * p.wp, 0.0f);
  p.w = weights;
  const int v = sched.vector_width;
  if (sched.layout == Layout::ChannelBlocked) {
    const int blocks = (shape.out_channels + v - 1) / v;
    const std::size_t per_oc =
        static_cast<std::size_t>(shape.in_channels) * shape.kernel_h * shape.kernel_w;
    p.wpack.assign(static_cast<std::size_t>(blocks) * per_oc * v, 0.0f);
    for (int o = 0; o < shape.out_channels; ++o) {
      for (std::size_t i = 0; i < per_oc; ++i) {
        p.wpack[((static_cast<std::size_t>(o / v)) * per_oc + i) * v + o % v] =
            weights[static_cast<std::size_t>(o) * per_oc + i];
      }
    }
    p.step_oc = v;
    p.step_pix = sched.unroll;
  } else {
    p.step_oc = 1;
    p.step_pix = v * sched.unroll;
  }
  pick_kernel(p, shape.stride == 1);
}

ConvKernel::~ConvKernel() = default;
ConvKernel::ConvKernel(ConvKernel&&) noexcept = default;
ConvKernel& ConvKernel::operator=(ConvKernel&&) noexcept = default;

namespace {

enum : int { kOC = 0, kOH = 1, kOW = 2, kIC = 3, kPix = 4 };

struct Level {
  int dim;
  int lo, hi, step;
};

// Odometer over `n` levels, outermost first.
template <class Body>
void iterate(Level* lv, int n, int* pos, Body&& body) {
  for (int i = 0; i < n; ++i) {
    if (lv[i].lo >= lv[i].hi) return;
    pos[lv[i].dim] = lv[i].lo;
  }
  for (;;) {
    body();
    int i = n - 1;
    for (; i >= 0; --i) {
      pos[lv[i].dim] += lv[i].step;
      if (pos[lv[i].dim] < lv[i].hi) break;
      pos[lv[i].dim] = lv[i].lo;
    }
    if (i < 0) return;
  }
}

}  // namespace

void ConvKernel::run(const float* input, float* output) {
  Impl& p = *impl_;
  const ConvShape& s = p.s;
  for (int c = 0; c < s.in_channels; ++c) {
    for (int y = 0; y < s.height; ++y) {
      std::memcpy(p.padded.data() +
                      (static_cast<std::size_t>(c) * p.hp + y + s.padding) * p.wp + s.padding,
                  input + (static_cast<std::size_t>(c) * s.height + y) * s.width,
                  sizeof(float) * s.width);
    }
  }
  std::fill(output, output + s.output_size(), 0.0f);

  const LoopOrder& order = p.k.loop_order;
  const bool blocked = p.k.layout == Layout::ChannelBlocked;
  const bool ic_inner = order[3] == LoopDim::IC;
  const int extent[3] = {s.out_channels, p.oh, p.ow};
  const int tile[3] = {p.k.tile_oc, p.k.tile_oh, p.k.tile_ow};

  // Tile loops follow the loop order with ic dropped (ic is never tiled).
  Level tiles[3];
  int nt = 0;
  for (LoopDim d : order) {
    const int i = static_cast<int>(d);
    if (i != kIC) tiles[nt++] = {i, 0, extent[i], tile[i]};
  }
  // Point loops: the full order; in the blocked layout oh and ow fuse into
  // one flattened pixel loop at the position of whichever comes first.
  Level points[4];
  int np = 0;
  bool pix_placed = false;
  for (LoopDim d : order) {
    const int i = static_cast<int>(d);
    if (blocked && (i == kOH || i == kOW)) {
      if (!pix_placed) points[np++] = {kPix, 0, 0, p.step_pix};
      pix_placed = true;
    } else if (i == kOC) {
      points[np++] = {kOC, 0, 0, p.step_oc};
    } else if (i == kOH) {
      points[np++] = {kOH, 0, 0, 1};
    } else if (i == kOW) {
      points[np++] = {kOW, 0, 0, p.step_pix};
    } else {
      points[np++] = {kIC, 0, s.in_channels, ic_inner ? s.in_channels : 1};
    }
  }

  int t[5] = {};
  int pos[5] = {};
  int lo[3], hi[3];
  std::size_t in_off[8], out_off[8];
  const int U = p.k.unroll;

  auto body = [&] {
    const int oc = pos[kOC];
    const int noc = std::min(p.step_oc, hi[kOC] - oc);
    const int ic0 = ic_inner ? 0 : pos[kIC];
    const int ic1 = ic_inner ? s.in_channels : pos[kIC] + 1;
    if (!blocked) {
      const int oy = pos[kOH], ox = pos[kOW];
      const int nox = std::min(p.step_pix, hi[kOW] - ox);
      if (noc == p.step_oc && nox == p.step_pix) {
        p.major(p, oc, oy, ox, ic0, ic1, output);
      } else {
        p.generic(oc, noc, oy, ox, nox, ic0, ic1, output);
      }
      return;
    }
    const int tw = hi[kOW] - lo[kOW];
    const int npix = std::min(U, (hi[kOH] - lo[kOH]) * tw - pos[kPix]);
    if (noc == p.step_oc) {
      for (int u = 0; u < npix; ++u) {
        const int q = pos[kPix] + u;
        const int oy = lo[kOH] + q / tw, ox = lo[kOW] + q % tw;
        in_off[u] = static_cast<std::size_t>(oy) * s.stride * p.wp +
                    static_cast<std::size_t>(ox) * s.stride;
        out_off[u] = static_cast<std::size_t>(oy) * p.ow + ox;
      }
      if (npix == U) {
        p.blocked(p, oc, in_off, out_off, ic0, ic1, output);
      } else {
        for (int u = 0; u < npix; ++u) {
          p.blocked_one(p, oc, in_off + u, out_off + u, ic0, ic1, output);
        }
      }
    } else {
      for (int u = 0; u < npix; ++u) {
        const int q = pos[kPix] + u;
        p.generic(oc, noc, lo[kOH] + q / tw, lo[kOW] + q % tw, 1, ic0, ic1, output);
      }
    }
  };

  iterate(tiles, nt, t, [&] {
    for (int d = 0; d < 3; ++d) {
      lo[d] = t[d];
      hi[d] = std::min(extent[d], t[d] + tile[d]);
    }
    for (int i = 0; i < np; ++i) {
      Level& l = points[i];
      if (l.dim == kPix) {
        l.lo = 0;
        l.hi = (hi[kOH] - lo[kOH]) * (hi[kOW] - lo[kOW]);
      } else if (l.dim != kIC) {
        l.lo = lo[l.dim];
        l.hi = hi[l.dim];
      }
    }
    iterate(points, np, pos, body);
  });
}

std::vector<float> conv_scheduled(const std::vector<float>& input,
                                  const std::vector<float>& weights,
                                  const ConvShape& shape, const ConvSchedule& sched) {
  check_tensors(input, weights, shape);
  ConvKernel kernel(shape, sched, weights);
  std::vector<float> out(shape.output_size());
  kernel.run(input.data(), out.data());
  return out;
}

// ---- measurement ------------------------------------------------------------

ConvProblem ConvProblem::random(const ConvShape& shape, std::uint64_t seed) {
  shape.validate();
  ConvProblem p;
  p.shape = shape;
  Rng rng(Rng::derive(seed, 0xC0));
  p.input.resize(shape.input_size());
  p.weights.resize(shape.weight_size());
  for (float& v : p.input) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (float& v : p.weights) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return p;
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::InvalidConfig, "median of no samples");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

Measurement time_kernel(ConvKernel& kernel, const float* input, float* output, int reps,
                        int warmups) {
  if (reps < 3 || warmups < 1) {
    throw Error(ErrorCode::InvalidConfig, "measure needs reps >= 3 and warmups >= 1");
  }
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmups; ++i) kernel.run(input, output);
  Measurement m;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = clock::now();
    kernel.run(input, output);
    const auto t1 = clock::now();
    m.samples.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  m.median_seconds = median(m.samples);
  return m;
}

}  // namespace

Measurement measure(const ConvProblem& problem, const ConvSchedule& sched, int reps,
                    int warmups) {
  if (reps < 3 || warmups < 1) {
    throw Error(ErrorCode::InvalidConfig, "measure needs reps >= 3 and warmups >= 1");
  }
  ConvKernel kernel(problem.shape, sched, problem.weights);
  std::vector<float> out(problem.shape.output_size());
  return time_kernel(kernel, problem.input.data(), out.data(), reps, warmups);
}

Measurement measure(const ConvShape& shape, const ConvSchedule& sched, int reps,
                    int warmups, std::uint64_t seed) {
  validate_schedule(shape, sched);
  return measure(ConvProblem::random(shape, seed), sched, reps, warmups);
}

// ---- search -----------------------------------------------------------------

namespace {

std::vector<int> tile_candidates(int extent) {
  std::vector<int> v;
  for (int t = 1; t < extent; t *= 2) v.push_back(t);
  v.push_back(extent);
  return v;
}

template <class T>
std::size_t index_of(const std::vector<T>& v, const T& x) {
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
}

}  // namespace

ScheduleSpace ScheduleSpace::for_shape(const ConvShape& shape) {
  ScheduleSpace sp;
  sp.tile_oc = tile_candidates(shape.out_channels);
  sp.tile_oh = tile_candidates(shape.out_height());
  sp.tile_ow = tile_candidates(shape.out_width());
  for (int v : {1, 2, 4, 8, 16}) {
    if (v <= host_max_vector_width()) sp.vector_width.push_back(v);
  }
  sp.unroll = {1, 2, 4, 8};
  LoopOrder o = {LoopDim::OC, LoopDim::OH, LoopDim::OW, LoopDim::IC};
  std::sort(o.begin(), o.end());
  do {
    sp.orders.push_back(o);
  } while (std::next_permutation(o.begin(), o.end()));
  sp.layouts = {Layout::ChannelMajor, Layout::ChannelBlocked};
  return sp;
}

std::size_t ScheduleSpace::size() const {
  return tile_oc.size() * tile_oh.size() * tile_ow.size() * vector_width.size() *
         unroll.size() * orders.size() * layouts.size();
}

std::string TuneResult::to_json() const {
  using nlohmann::json;
  auto sched_j = [](const ConvSchedule& k) {
    return json{{"tile_oc", k.tile_oc},
                {"tile_oh", k.tile_oh},
                {"tile_ow", k.tile_ow},
                {"loop_order", loop_order_name(k.loop_order)},
                {"vector_width", k.vector_width},
                {"unroll", k.unroll},
                {"layout", layout_name(k.layout)}};
  };
  json trials_j = json::array();
  for (const auto& t : trials) {
    trials_j.push_back({{"schedule", sched_j(t.schedule)},
                        {"median_seconds", t.median_seconds},
                        {"verified", t.verified}});
  }
  const json j = {{"shape", shape.to_string()},
                  {"ideal_flops", ideal_flops},
                  {"best_schedule", sched_j(best_schedule)},
                  {"best_seconds", best_seconds},
                  {"best_gflops_per_s", best_gflops_per_s},
                  {"trials", trials_j}};
  return j.dump(2) + "\n";
}

TuneResult tune(const ConvShape& shape, const TuneOptions& options) {
  if (options.budget < 1) throw Error(ErrorCode::InvalidConfig, "budget must be >= 1");
  try {
    shape.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::NoValidSchedule, e.what());
  }
  const ScheduleSpace space = ScheduleSpace::for_shape(shape);
  const ConvProblem problem = ConvProblem::random(shape, options.seed);
  const std::vector<float> ref = conv_reference(problem.input, problem.weights, shape);
  const std::vector<double> mag = conv_magnitude(problem.input, problem.weights, shape);
  std::vector<float> out(shape.output_size());

  TuneResult result;
  result.shape = shape;
  result.ideal_flops = shape.ideal_flops();
  std::set<std::string> tried;
  int best = -1;

  auto evaluate = [&](const ConvSchedule& k) {
    tried.insert(k.to_string());
    Trial t;
    t.schedule = k;
    ConvKernel kernel(shape, k, problem.weights);
    kernel.run(problem.input.data(), out.data());
    t.verified = outputs_match(out, ref, mag);
    if (t.verified) {
      t.median_seconds =
          time_kernel(kernel, problem.input.data(), out.data(), options.reps, options.warmups)
              .median_seconds;
      if (best < 0 || t.median_seconds < result.trials[best].median_seconds) {
        best = static_cast<int>(result.trials.size());
      }
    }
    result.trials.push_back(t);
    return t.verified;
  };
  auto budget_left = [&] { return static_cast<int>(result.trials.size()) < options.budget; };

  Rng rng(Rng::derive(options.seed, 0x7E));
  auto sample = [&]() -> std::optional<ConvSchedule> {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      ConvSchedule k;
      k.tile_oc = space.tile_oc[rng.below(space.tile_oc.size())];
      k.tile_oh = space.tile_oh[rng.below(space.tile_oh.size())];
      k.tile_ow = space.tile_ow[rng.below(space.tile_ow.size())];
      k.loop_order = space.orders[rng.below(space.orders.size())];
      k.vector_width = space.vector_width[rng.below(space.vector_width.size())];
      k.unroll = space.unroll[rng.below(space.unroll.size())];
      k.layout = space.layouts[rng.below(space.layouts.size())];
      if (is_valid_schedule(shape, k) && !tried.count(k.to_string())) return k;
    }
    return std::nullopt;
  };

  evaluate(ConvSchedule{});
  const int random_trials = options.strategy == SearchStrategy::Random
                                ? options.budget
                                : std::max(1, (options.budget + 1) / 2);
  while (budget_left() && static_cast<int>(result.trials.size()) < random_trials) {
    const auto k = sample();
    if (!k) break;
    evaluate(*k);
  }

  // Hill-climb: try single-field moves around the incumbent in a seeded
  // order; move on improvement, restart from a random sample when stuck.
  while (options.strategy == SearchStrategy::RandomHillClimb && budget_left() && best >= 0) {
    const ConvSchedule inc = result.trials[best].schedule;
    std::vector<ConvSchedule> moves;
    auto step_field = [&](auto& vals, auto get, auto set) {
      const std::size_t i = index_of(vals, get(inc));
      for (std::size_t j : {i - 1, i + 1}) {
        if (j < vals.size()) {
          ConvSchedule m = inc;
          set(m, vals[j]);
          moves.push_back(m);
        }
      }
    };
    step_field(space.tile_oc, [](const ConvSchedule& k) { return k.tile_oc; },
               [](ConvSchedule& k, int v) { k.tile_oc = v; });
    step_field(space.tile_oh, [](const ConvSchedule& k) { return k.tile_oh; },
               [](ConvSchedule& k, int v) { k.tile_oh = v; });
    step_field(space.tile_ow, [](const ConvSchedule& k) { return k.tile_ow; },
               [](ConvSchedule& k, int v) { k.tile_ow = v; });
    step_field(space.vector_width, [](const ConvSchedule& k) { return k.vector_width; },
               [](ConvSchedule& k, int v) { k.vector_width = v; });
    step_field(space.unroll, [](const ConvSchedule& k) { return k.unroll; },
               [](ConvSchedule& k, int v) { k.unroll = v; });
    for (int i = 0; i < 3; ++i) {
      ConvSchedule m = inc;
      std::swap(m.loop_order[i], m.loop_order[i + 1]);
      moves.push_back(m);
    }
    {
      ConvSchedule m = inc;
      m.layout = inc.layout == Layout::ChannelMajor ? Layout::ChannelBlocked
                                                    : Layout::ChannelMajor;
      moves.push_back(m);
    }
    for (std::size_t i = moves.size(); i > 1; --i) {
      std::swap(moves[i - 1], moves[rng.below(i)]);
    }
    const int before = best;
    for (const ConvSchedule& m : moves) {
      if (!budget_left()) break;
      if (!is_valid_schedule(shape, m) || tried.count(m.to_string())) continue;
      evaluate(m);
      if (best != before) break;
    }
    if (best == before && budget_left()) {
      const auto k = sample();
      if (!k) break;
      evaluate(*k);
    }
  }

  if (best < 0) throw Error(ErrorCode::NoValidSchedule, "no schedule verified for " + shape.to_string());
  result.best_schedule = result.trials[best].schedule;
  result.best_seconds = result.trials[best].median_seconds;
  result.best_gflops_per_s = result.ideal_flops / result.best_seconds / 1e9;
  return result;
}

// ---- scaling report -----------------------------------------------------------

std::vector<ConvShape> resnet_stage_shapes(int resolution, int channel_divisor) {
  if (channel_divisor < 1) throw Error(ErrorCode::InvalidConfig, "channel divisor must be >= 1");
  if (resolution < 1) throw Error(ErrorCode::InvalidConfig, "resolution must be >= 1");
  auto down = [](int x, int k, int stride, int pad) { return (x + 2 * pad - k) / stride + 1; };
  // Stem: 7x7/2 conv then 3x3/2 max pool; stages 2..4 open with a 3x3/2 conv.
  int spatial = down(down(resolution, 7, 2, 3), 3, 2, 1);
  std::vector<ConvShape> out;
  for (int stage = 0; stage < 4; ++stage) {
    if (stage > 0) spatial = down(spatial, 3, 2, 1);
    const int ch = std::max(1, (64 << stage) / channel_divisor);
    out.push_back(ConvShape{ch, ch, spatial, spatial, 3, 3, 1, 1});
  }
  return out;
}

std::string ScalingReport::to_csv() const {
  std::string out = "resolution,variant,sum_seconds,gflops_per_s,speedup_vs_448\n";
  for (const auto& r : rows) {
    out += std::to_string(r.resolution) + "," + r.variant + "," + fmt_g6(r.sum_seconds) +
           "," + fmt_g6(r.gflops_per_s) + "," + fmt_g6(r.speedup_vs_448) + "\n";
  }
  return out;
}

ScalingReport resolution_scaling_report(const std::map<int, std::vector<ConvShape>>& stacks,
                                        const TuneOptions& options) {
  if (stacks.empty()) throw Error(ErrorCode::InvalidConfig, "no conv stacks to report");
  ScalingReport rep;
  std::map<int, double> def_sum, tuned_sum, flops;
  std::uint64_t shape_index = 0;
  for (const auto& [res, shapes] : stacks) {
    for (const ConvShape& s : shapes) {
      TuneOptions o = options;
      o.seed = Rng::derive(options.seed, shape_index++);
      TuneResult t = tune(s, o);
      // Trial 0 is the default schedule, measured under the same conditions.
      def_sum[res] += t.trials.front().median_seconds;
      tuned_sum[res] += t.best_seconds;
      flops[res] += s.ideal_flops();
      rep.tuned[res].push_back(std::move(t));
    }
  }
  const int top = stacks.rbegin()->first;
  const int bottom = stacks.begin()->first;
  for (const auto& [res, shapes] : stacks) {
    rep.rows.push_back({res, "default", def_sum[res], flops[res] / def_sum[res] / 1e9,
                        def_sum[top] / def_sum[res]});
    rep.rows.push_back({res, "tuned", tuned_sum[res], flops[res] / tuned_sum[res] / 1e9,
                        tuned_sum[top] / tuned_sum[res]});
  }
  rep.ideal_ratio = flops[top] / flops[bottom];
  rep.default_ratio = def_sum[top] / def_sum[bottom];
  rep.tuned_ratio = tuned_sum[top] / tuned_sum[bottom];
  return rep;
}

}  // namespace resotune
