#include <doctest.h>

#include <cmath>
#include <set>

#include "resotune/autotune.hpp"
#include "resotune/error.hpp"
#include "support/fixtures.hpp"

using namespace resotune;

namespace {

ErrorCode code_of(auto fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

double worst_relative(const std::vector<float>& got, const std::vector<double>& want,
                      const std::vector<double>& mag) {
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    worst = std::max(worst, std::abs(got[i] - want[i]) / (mag[i] + 1e-12));
  }
  return worst;
}

}  // namespace

TEST_CASE("reference convolution hand cases") {
  const ConvShape ones{1, 1, 5, 5, 3, 3, 1, 0};
  const auto out = conv_reference(std::vector<float>(25, 1.0f), std::vector<float>(9, 1.0f), ones);
  REQUIRE(out.size() == 9);
  for (float v : out) CHECK(v == 9.0f);

  const ConvProblem p = ConvProblem::random({1, 1, 7, 6, 1, 1, 1, 0}, 3);
  CHECK(conv_reference(p.input, {1.0f}, p.shape) == p.input);

  const ConvProblem q = ConvProblem::random({3, 5, 9, 9, 3, 3, 1, 1}, 4);
  const auto zero = conv_reference(q.input, std::vector<float>(q.weights.size(), 0.0f), q.shape);
  for (float v : zero) CHECK(v == 0.0f);

  CHECK(code_of([&] { conv_reference(q.input, p.weights, q.shape); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("reference agrees with a naive oracle") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto c = fixtures::random_conv_case(seed);
    CAPTURE(c.shape.to_string());
    const ConvProblem p = ConvProblem::random(c.shape, seed);
    const auto want = fixtures::naive_conv(p.input, p.weights, c.shape);
    const auto got = conv_reference(p.input, p.weights, c.shape);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == static_cast<float>(want[i]));
    }
  }
}

TEST_CASE("analytic flops and shape parsing") {
  const ConvShape s = parse_shape("64,64,56,56,3,1,1");
  CHECK(s == ConvShape{64, 64, 56, 56, 3, 3, 1, 1});
  CHECK(s.ideal_flops() == 2.0 * 64 * 56 * 56 * 64 * 9);
  CHECK(s.to_string() == "64,64,56,56,3,1,1");
  const ConvShape strided = parse_shape("3,8,15,11,5,2,1");
  CHECK(strided.out_height() == 7);
  CHECK(strided.out_width() == 5);
  CHECK(strided.ideal_flops() == 2.0 * 8 * 7 * 5 * 3 * 25);
  CHECK(code_of([] { parse_shape("1,2,3"); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([] { parse_shape("1,2,3,4,5,1,x"); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([] { parse_shape("1,1,2,2,5,1,0"); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("scheduled kernels match the reference") {
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    const auto c = fixtures::random_conv_case(seed);
    CAPTURE(c.shape.to_string());
    CAPTURE(c.schedule.to_string());
    const ConvProblem p = ConvProblem::random(c.shape, seed);
    const auto mag = conv_magnitude(p.input, p.weights, c.shape);
    const auto got = conv_scheduled(p.input, p.weights, c.shape, c.schedule);
    CHECK(outputs_match(got, conv_reference(p.input, p.weights, c.shape), mag));
    CHECK(worst_relative(got, fixtures::naive_conv(p.input, p.weights, c.shape), mag) <= 1e-4);
  }
}

TEST_CASE("default schedule and pairwise agreement") {
  const ConvShape s{8, 24, 17, 19, 3, 3, 1, 1};
  const ConvProblem p = ConvProblem::random(s, 9);
  const auto mag = conv_magnitude(p.input, p.weights, s);
  const auto ref = conv_reference(p.input, p.weights, s);
  CHECK(outputs_match(conv_scheduled(p.input, p.weights, s, ConvSchedule{}), ref, mag));

  // Several valid schedules on one problem, each checked against every other.
  const ScheduleSpace sp = ScheduleSpace::for_shape(s);
  std::vector<std::vector<float>> outs;
  std::uint64_t k = 0;
  while (outs.size() < 8) {
    ConvSchedule c;
    c.tile_oc = sp.tile_oc[k % sp.tile_oc.size()];
    c.tile_oh = sp.tile_oh[(k * 3) % sp.tile_oh.size()];
    c.tile_ow = sp.tile_ow[(k * 5 + 2) % sp.tile_ow.size()];
    c.vector_width = sp.vector_width[(k * 7) % sp.vector_width.size()];
    c.unroll = sp.unroll[k % sp.unroll.size()];
    c.loop_order = sp.orders[(k * 11) % sp.orders.size()];
    c.layout = sp.layouts[k % 2];
    ++k;
    if (is_valid_schedule(s, c)) outs.push_back(conv_scheduled(p.input, p.weights, s, c));
  }
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (std::size_t j = i + 1; j < outs.size(); ++j) {
      double worst = 0;
      for (std::size_t e = 0; e < ref.size(); ++e) {
        worst = std::max(worst, std::abs(outs[i][e] - outs[j][e]) / (mag[e] + 1e-12));
      }
      CHECK(worst <= 2e-4);
    }
  }
}

TEST_CASE("identity kernel is exact under any schedule") {
  const ConvShape s{1, 1, 13, 29, 1, 1, 1, 0};
  const ConvProblem p = ConvProblem::random(s, 5);
  const std::vector<float> w{1.0f};
  const ScheduleSpace sp = ScheduleSpace::for_shape(s);
  int checked = 0;
  for (int toh : sp.tile_oh) {
    for (int tow : sp.tile_ow) {
      for (int v : sp.vector_width) {
        for (Layout l : sp.layouts) {
          ConvSchedule c;
          c.tile_oh = toh;
          c.tile_ow = tow;
          c.vector_width = v;
          c.layout = l;
          c.loop_order = sp.orders[static_cast<std::size_t>(checked) % sp.orders.size()];
          if (!is_valid_schedule(s, c)) continue;
          CHECK(conv_scheduled(p.input, w, s, c) == p.input);
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("invalid schedules are rejected") {
  const ConvShape s{4, 8, 10, 10, 3, 3, 1, 1};
  auto with = [](auto edit) {
    ConvSchedule c;
    edit(c);
    return c;
  };
  const ConvSchedule bad[] = {
      with([](ConvSchedule& c) { c.tile_oc = 0; }),
      with([](ConvSchedule& c) { c.tile_oc = 9; }),
      with([](ConvSchedule& c) { c.tile_ow = 11; }),
      with([](ConvSchedule& c) { c.vector_width = 3; }),
      with([](ConvSchedule& c) { c.vector_width = 32; }),
      with([](ConvSchedule& c) { c.unroll = 3; }),
      with([](ConvSchedule& c) { c.loop_order = {LoopDim::OC, LoopDim::OC, LoopDim::OW, LoopDim::IC}; }),
      with([](ConvSchedule& c) {
        c.vector_width = 4;
        c.tile_ow = 2;
      }),
      with([](ConvSchedule& c) {
        c.layout = Layout::ChannelBlocked;
        c.vector_width = 4;
        c.tile_oc = 6;
      }),
  };
  for (const auto& c : bad) {
    CAPTURE(c.to_string());
    CHECK_FALSE(is_valid_schedule(s, c));
    CHECK(code_of([&] { validate_schedule(s, c); }) == ErrorCode::InvalidSchedule);
    CHECK(code_of([&] { measure(s, c, 3, 1); }) == ErrorCode::InvalidSchedule);
  }
  CHECK(parse_loop_order("ic-ow-oh-oc") ==
        LoopOrder{LoopDim::IC, LoopDim::OW, LoopDim::OH, LoopDim::OC});
  CHECK(loop_order_name(parse_loop_order("oh-oc-ic-ow")) == "oh-oc-ic-ow");
  CHECK(code_of([] { parse_loop_order("oc-oh-ow"); }) == ErrorCode::InvalidSchedule);
  CHECK(code_of([] { parse_loop_order("oc-oh-ow-oh"); }) == ErrorCode::InvalidSchedule);
}

TEST_CASE("measurement reports the median of its samples") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  const ConvShape s{4, 4, 12, 12, 3, 3, 1, 1};
  for (int reps : {3, 4, 7}) {
    const Measurement m = measure(s, ConvSchedule{}, reps, 1);
    REQUIRE(m.samples.size() == static_cast<std::size_t>(reps));
    std::vector<double> v = m.samples;
    std::sort(v.begin(), v.end());
    const double want = reps % 2 ? v[reps / 2] : 0.5 * (v[reps / 2 - 1] + v[reps / 2]);
    CHECK(m.median_seconds == want);
    CHECK(m.median_seconds > 0);
  }
  CHECK(code_of([&] { measure(s, ConvSchedule{}, 2, 1); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([&] { measure(s, ConvSchedule{}, 3, 0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("four times the spatial work takes at least twice as long") {
  const ConvShape small{16, 16, 24, 24, 3, 3, 1, 1};
  const ConvShape big{16, 16, 48, 48, 3, 3, 1, 1};
  CHECK(big.ideal_flops() == 4 * small.ideal_flops());
  const double ts = measure(small, ConvSchedule{}, 7, 2).median_seconds;
  const double tb = measure(big, ConvSchedule{}, 7, 2).median_seconds;
  CHECK(tb >= 2 * ts);
}

TEST_CASE("tuning") {
  const ConvShape s{8, 16, 14, 14, 3, 3, 1, 1};
  TuneOptions o;
  o.budget = 1;
  const TuneResult one = tune(s, o);
  REQUIRE(one.trials.size() == 1);
  CHECK(one.trials[0].schedule == ConvSchedule{});
  CHECK(one.best_schedule == ConvSchedule{});
  CHECK(one.ideal_flops == s.ideal_flops());
  CHECK(one.best_gflops_per_s == doctest::Approx(s.ideal_flops() / one.best_seconds / 1e9));

  for (SearchStrategy strategy : {SearchStrategy::Random, SearchStrategy::RandomHillClimb}) {
    CAPTURE(static_cast<int>(strategy));
    o.budget = 16;
    o.seed = 42;
    o.strategy = strategy;
    const TuneResult a = tune(s, o), b = tune(s, o);
    REQUIRE(a.trials.size() == 16);
    REQUIRE(b.trials.size() == a.trials.size());
    std::set<std::string> distinct;
    // Hill-climb moves follow measured times; only its random prefix is fixed.
    const std::size_t seeded = strategy == SearchStrategy::Random ? 16 : 8;
    for (std::size_t i = 0; i < a.trials.size(); ++i) {
      if (i < seeded) CHECK(a.trials[i].schedule == b.trials[i].schedule);
      CHECK(a.trials[i].verified);
      CHECK(is_valid_schedule(s, a.trials[i].schedule));
      distinct.insert(a.trials[i].schedule.to_string());
      CHECK(a.best_seconds <= a.trials[i].median_seconds);
    }
    CHECK(distinct.size() == a.trials.size());
    CHECK(a.trials[0].schedule == ConvSchedule{});
    CHECK(a.best_seconds <= a.trials[0].median_seconds);

    o.seed = 43;
    const TuneResult c = tune(s, o);
    bool differs = false;
    for (std::size_t i = 1; i < c.trials.size(); ++i) {
      differs |= !(c.trials[i].schedule == a.trials[i].schedule);
    }
    CHECK(differs);
  }

  o.budget = 0;
  CHECK(code_of([&] { tune(s, o); }) == ErrorCode::InvalidConfig);
  o.budget = 2;
  CHECK(code_of([&] { tune(ConvShape{0, 1, 4, 4, 1, 1, 1, 0}, o); }) == ErrorCode::NoValidSchedule);
}

TEST_CASE("resnet stage shapes") {
  const auto at224 = resnet_stage_shapes(224);
  REQUIRE(at224.size() == 4);
  const int spatial224[] = {56, 28, 14, 7};
  const int spatial112[] = {28, 14, 7, 4};
  const auto at112 = resnet_stage_shapes(112, 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(at224[i].height == spatial224[i]);
    CHECK(at224[i].in_channels == (64 << i));
    CHECK(at224[i].out_height() == spatial224[i]);
    CHECK(at112[i].height == spatial112[i]);
    CHECK(at112[i].out_channels == (16 << i));
  }
}

TEST_CASE("scaling report") {
  // Spatial extents scale exactly 4x each way between the two ends.
  std::map<int, std::vector<ConvShape>> stacks;
  for (int f : {1, 2, 4}) {
    stacks[112 * f] = {ConvShape{4, 4, 6 * f, 6 * f, 3, 3, 1, 1}, ConvShape{8, 8, 3 * f, 3 * f, 3, 3, 1, 1}};
  }
  TuneOptions o;
  o.budget = 3;
  const ScalingReport r = resolution_scaling_report(stacks, o);
  CHECK(r.ideal_ratio == 16.0);
  REQUIRE(r.rows.size() == 2 * stacks.size());
  for (const auto& row : r.rows) {
    if (row.resolution == 448) CHECK(row.speedup_vs_448 == 1.0);
    CHECK(row.sum_seconds > 0);
  }
  for (const auto& [res, results] : r.tuned) {
    for (const auto& t : results) CHECK(t.best_seconds <= t.trials.front().median_seconds);
  }
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("resolution,variant,sum_seconds,gflops_per_s,speedup_vs_448\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(code_of([&] { resolution_scaling_report({}, o); }) == ErrorCode::InvalidConfig);
}
