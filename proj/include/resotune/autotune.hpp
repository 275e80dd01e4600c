#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace resotune {

struct ConvShape {
  int in_channels = 1;
  int out_channels = 1;
  int height = 1;
  int width = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int batch = 1;

  int out_height() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  int out_width() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  /// 2 * oc * oh * ow * ic * kh * kw.
  double ideal_flops() const;
  std::size_t input_size() const;
  std::size_t weight_size() const;
  std::size_t output_size() const;
  /// Throws Error(ShapeMismatch).
  void validate() const;
  std::string to_string() const;  // ic,oc,h,w,k,stride,pad
  bool operator==(const ConvShape&) const = default;
};

/// Parses "ic,oc,h,w,k,stride,pad".
ConvShape parse_shape(const std::string& text);

enum class LoopDim : int { OC = 0, OH = 1, OW = 2, IC = 3 };
using LoopOrder = std::array<LoopDim, 4>;

enum class Layout {
  /// Input and weights in plain CHW / OIHW; vector lanes run along ow.
  ChannelMajor,
  /// Weights packed in blocks of `vector_width` output channels; lanes run
  /// along oc and `unroll` counts adjacent output pixels.
  ChannelBlocked,
};

struct ConvSchedule {
  int tile_oc = 1;
  int tile_oh = 1;
  int tile_ow = 1;
  LoopOrder loop_order = {LoopDim::OC, LoopDim::OH, LoopDim::OW, LoopDim::IC};
  int vector_width = 1;
  int unroll = 1;
  Layout layout = Layout::ChannelMajor;

  std::string to_string() const;
  bool operator==(const ConvSchedule&) const = default;
};

std::string loop_order_name(const LoopOrder& order);  // e.g. "oc-oh-ow-ic"
LoopOrder parse_loop_order(const std::string& name);
const char* layout_name(Layout layout);

/// Widest vector the kernels are built for; wider values are rejected.
int host_max_vector_width();

/// Throws Error(InvalidSchedule) with the reason.
void validate_schedule(const ConvShape& shape, const ConvSchedule& sched);
bool is_valid_schedule(const ConvShape& shape, const ConvSchedule& sched);

/// Direct convolution, double accumulation, float output. Input CHW,
/// weights OIHW, output CHW. Throws Error(ShapeMismatch).
std::vector<float> conv_reference(const std::vector<float>& input,
                                  const std::vector<float>& weights,
                                  const ConvShape& shape);

/// Per-output sum of |w * x| over the receptive field: the scale against
/// which reassociated float sums are compared.
std::vector<double> conv_magnitude(const std::vector<float>& input,
                                   const std::vector<float>& weights,
                                   const ConvShape& shape);

/// |a - ref| <= rel * magnitude + abs_floor elementwise.
bool outputs_match(const std::vector<float>& a, const std::vector<float>& ref,
                   const std::vector<double>& magnitude, double rel = 1e-4,
                   double abs_floor = 1e-6);

/// A schedule bound to one shape and one weight tensor; owns its scratch
/// buffers so repeated runs allocate nothing.
class ConvKernel {
 public:
  ConvKernel(const ConvShape& shape, const ConvSchedule& sched,
             const std::vector<float>& weights);
  ~ConvKernel();
  ConvKernel(ConvKernel&&) noexcept;
  ConvKernel& operator=(ConvKernel&&) noexcept;

  /// `output` must hold shape.output_size() floats.
  void run(const float* input, float* output);

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

std::vector<float> conv_scheduled(const std::vector<float>& input,
                                  const std::vector<float>& weights,
                                  const ConvShape& shape, const ConvSchedule& sched);

/// Seeded input and weights uniform in [-1, 1).
struct ConvProblem {
  ConvShape shape;
  std::vector<float> input;
  std::vector<float> weights;

  static ConvProblem random(const ConvShape& shape, std::uint64_t seed);
};

struct Measurement {
  double median_seconds = 0.0;
  std::vector<double> samples;
};

/// Warmups then `reps` individually timed runs on preallocated buffers.
/// Requires reps >= 3 and warmups >= 1.
Measurement measure(const ConvProblem& problem, const ConvSchedule& sched, int reps,
                    int warmups);
Measurement measure(const ConvShape& shape, const ConvSchedule& sched, int reps,
                    int warmups, std::uint64_t seed = 1);

double median(std::vector<double> v);

enum class SearchStrategy { Random, RandomHillClimb };

struct TuneOptions {
  int budget = 50;
  std::uint64_t seed = 1;
  SearchStrategy strategy = SearchStrategy::RandomHillClimb;
  int reps = 3;
  int warmups = 1;
};

struct Trial {
  ConvSchedule schedule;
  double median_seconds = 0.0;
  bool verified = false;
};

struct TuneResult {
  ConvShape shape;
  ConvSchedule best_schedule;
  double best_seconds = 0.0;
  double best_gflops_per_s = 0.0;
  double ideal_flops = 0.0;
  std::vector<Trial> trials;  // trial 0 is the default schedule

  std::string to_json() const;
};

/// Candidate values per schedule field for `shape`.
struct ScheduleSpace {
  std::vector<int> tile_oc, tile_oh, tile_ow, vector_width, unroll;
  std::vector<LoopOrder> orders;
  std::vector<Layout> layouts;

  static ScheduleSpace for_shape(const ConvShape& shape);
  std::size_t size() const;
};

/// Trial 0 is the default schedule; random samples follow; with hill-climb,
/// the second half of the budget mutates one field of the incumbent at a
/// time. Every candidate is checked against the reference before it is
/// timed. Throws Error(NoValidSchedule).
TuneResult tune(const ConvShape& shape, const TuneOptions& options);

/// The stride-1 3x3 convolution of each ResNet-18 stage at input resolution
/// R, with the stage's real feature-map size (56, 28, 14, 7 at 224; 28, 14,
/// 7, 4 at 112) and channels 64, 128, 256, 512 divided by `channel_divisor`.
std::vector<ConvShape> resnet_stage_shapes(int resolution, int channel_divisor = 1);

struct ScalingRow {
  int resolution = 0;
  std::string variant;  // "default" or "tuned"
  double sum_seconds = 0.0;
  double gflops_per_s = 0.0;
  double speedup_vs_448 = 0.0;  // sum_seconds at the largest resolution / this
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  std::map<int, std::vector<TuneResult>> tuned;
  /// Sum of ideal FLOPs at the largest resolution over that at the smallest.
  double ideal_ratio = 0.0;
  double default_ratio = 0.0;
  double tuned_ratio = 0.0;

  /// resolution,variant,sum_seconds,gflops_per_s,speedup_vs_448
  std::string to_csv() const;
};

ScalingReport resolution_scaling_report(const std::map<int, std::vector<ConvShape>>& stacks,
                                        const TuneOptions& options);

}  // namespace resotune
