#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctf/data.hpp"
#include "ctf/error.hpp"
#include "oracles.hpp"

using namespace ctf;
using namespace ctf::data;

namespace {

DenseSeries ramp(std::size_t steps, std::size_t channels) {
  DenseSeries d;
  d.steps = steps;
  for (std::size_t c = 0; c < channels; ++c) {
    d.names.push_back("c" + std::to_string(c));
    std::vector<double> col(steps);
    for (std::size_t t = 0; t < steps; ++t) col[t] = static_cast<double>(100 * c + t);
    d.columns.push_back(std::move(col));
  }
  return d;
}

ResampleOptions train_only() {
  ResampleOptions o;
  o.fractions = {1.0, 0.0, 0.0};
  return o;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b, std::size_t n) {
  double ma = 0, mb = 0;
  for (std::size_t t = 0; t < n; ++t) {
    ma += a[t];
    mb += b[t];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t t = 0; t < n; ++t) {
    sab += (a[t] - ma) * (b[t] - mb);
    saa += (a[t] - ma) * (a[t] - ma);
    sbb += (b[t] - mb) * (b[t] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

WindowSample single_channel_window(std::size_t Li, std::size_t Hi) {
  WindowSample w;
  w.origin = 40;
  w.factors = {1};
  ChannelWindow cw;
  cw.input = ctf::testing::random_vector(Li, 7);
  cw.observed.assign(Li, 1);
  cw.target = ctf::testing::random_vector(Hi, 8);
  w.channels.push_back(cw);
  return w;
}

std::vector<std::pair<std::size_t, std::size_t>> masked_runs(const Mask& obs) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t t = 0; t < obs.size();) {
    if (obs[t]) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < obs.size() && !obs[e]) ++e;
    runs.emplace_back(t, e);
    t = e;
  }
  return runs;
}

}  // namespace

TEST(Resample, KeepsEveryRthPoint) {
  const std::size_t f[] = {1, 4};
  auto ds = resample_practical(ramp(8, 2), f);
  EXPECT_EQ(ds.values[0].size(), 8u);
  EXPECT_EQ(ds.values[1], (std::vector<double>{100, 104}));
  for (const auto& m : ds.observed)
    EXPECT_TRUE(std::all_of(m.begin(), m.end(), [](auto v) { return v == 1; }));
}

TEST(Resample, LengthIsFloorOfBaseOverFactor) {
  const std::size_t f[] = {1, 3, 4, 6};
  auto ds = resample_practical(ramp(1003, 4), f);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(ds.values[i].size(), 1003 / f[i]);
    EXPECT_EQ(ds.observed[i].size(), ds.values[i].size());
  }
}

// Hourly load channels over a 15-minute grid keep one point in four.
TEST(Resample, TransformerStyleFactors) {
  const std::size_t f[] = {4, 4, 4, 4, 4, 4, 1};
  auto ds = resample_practical(ramp(96 * 4, 7), f);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(ds.values[i].size(), 96u);
  EXPECT_EQ(ds.values[6].size(), 384u);
  EXPECT_EQ(ds.max_factor(), 4u);
}

// 5-minute wind and 20-minute solar.
TEST(Resample, SolarWindStyleFactors) {
  const std::size_t f[] = {1, 4};
  auto ds = resample_practical(ramp(576, 2), f);
  EXPECT_EQ(ds.values[0].size(), 576u);
  EXPECT_EQ(ds.values[1].size(), 144u);
  for (std::size_t k = 0; k < 144; ++k) EXPECT_EQ(ds.fine_time(1, k), 4 * k);
}

TEST(Resample, EmptyInputIsRejected) {
  DenseSeries d;
  const std::size_t f[] = {1};
  EXPECT_THROW(resample_practical(d, f), ContractError);
}

TEST(Resample, AllUnitFactorsIsIdentity) {
  auto dense = ramp(50, 3);
  const std::size_t f[] = {1, 1, 1};
  auto ds = resample_practical(dense, f);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ds.values[i], dense.columns[i]);
}

TEST(Resample, NanCellsBecomeUnobserved) {
  auto dense = ramp(8, 1);
  dense.columns[0][3] = std::nan("");
  const std::size_t f[] = {1};
  auto ds = resample_practical(dense, f);
  EXPECT_EQ(ds.observed[0][3], 0);
  EXPECT_EQ(ds.values[0][3], 0.0);
}

TEST(Resample, PhaseOffsetShiftsTheKeptResidue) {
  ResampleOptions o;
  o.phase_offset = 2;
  const std::size_t f[] = {1, 4};
  auto ds = resample_practical(ramp(12, 2), f, o);
  EXPECT_EQ(ds.values[1], (std::vector<double>{102, 106}));
  EXPECT_EQ(ds.fine_time(1, 1), 6u);
}

TEST(NormStats, UseOnlyObservedTrainingPoints) {
  auto dense = ramp(10, 1);
  dense.columns[0][1] = std::nan("");
  ResampleOptions o;
  o.fractions = {0.5, 0.2, 0.3};
  const std::size_t f[] = {1};
  auto ds = resample_practical(dense, f, o);
  // observed training points 0, 2, 3, 4
  const double mu = (0 + 2 + 3 + 4) / 4.0;
  double var = 0;
  for (double v : {0.0, 2.0, 3.0, 4.0}) var += (v - mu) * (v - mu);
  EXPECT_DOUBLE_EQ(ds.stats.mean[0], mu);
  EXPECT_NEAR(ds.stats.std[0], std::sqrt(var / 4.0), 1e-15);
}

TEST(NormStats, RoundTripIsIdentity) {
  const std::size_t f[] = {1, 2, 4};
  auto ds = synth_coupled(3, 2000, f, 0.5, 0.3, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (double v : ds.values[i])
      EXPECT_NEAR(denormalize_value(ds.stats, i, normalize_value(ds.stats, i, v)), v, 1e-12);
}

TEST(Windows, PerChannelLengthsFollowFactors) {
  const std::size_t f[] = {1, 4};
  auto ds = resample_practical(ramp(2000, 2), f, train_only());
  auto ws = make_windows(ds, Split::train, {192, 336, 100, false});
  ASSERT_FALSE(ws.empty());
  EXPECT_EQ(ws[0].channels[0].input.size(), 192u);
  EXPECT_EQ(ws[0].channels[0].target.size(), 336u);
  EXPECT_EQ(ws[0].channels[1].input.size(), 48u);
  EXPECT_EQ(ws[0].channels[1].target.size(), 84u);
}

TEST(Windows, CountMatchesEnumeration) {
  const std::size_t f[] = {1};
  auto ds = resample_practical(ramp(1000, 1), f, train_only());
  auto ws = make_windows(ds, Split::train, {192, 192, 1, false});
  std::size_t expected = 0;
  for (std::size_t o = 0; o < 1000; ++o)
    if (o + 192 + 192 <= 1000) ++expected;
  EXPECT_EQ(expected, 617u);
  EXPECT_EQ(ws.size(), expected);
}

TEST(Windows, TestSplitIsSubsampledByMaxFactor) {
  const std::size_t f[] = {1, 4};
  auto ds = resample_practical(ramp(1001, 2), f);
  auto ws = make_windows(ds, Split::test, {16, 8, 1, false});
  ASSERT_GT(ws.size(), 2u);
  for (std::size_t k = 0; k < ws.size(); ++k) {
    EXPECT_EQ(ws[k].origin % 4, 0u);
    if (k > 0) EXPECT_EQ(ws[k].origin - ws[k - 1].origin, 4u);
  }
}

TEST(Windows, ChannelsCoverTheSameSpan) {
  const std::size_t f[] = {1, 2, 4};
  auto ds = resample_practical(ramp(400, 3), f, train_only());
  for (const auto& w : make_windows(ds, Split::train, {32, 16, 4, false})) {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& cw = w.channels[i];
      EXPECT_EQ(cw.input.size() * f[i], 32u);
      EXPECT_EQ(cw.input[0], static_cast<double>(100 * i + w.origin));
      EXPECT_EQ(cw.target[0], static_cast<double>(100 * i + w.origin + 32));
    }
  }
}

TEST(Windows, TooLongIsEmptyNotAnError) {
  const std::size_t f[] = {1};
  auto ds = resample_practical(ramp(100, 1), f, train_only());
  EXPECT_TRUE(make_windows(ds, Split::train, {96, 48, 1, false}).empty());
}

TEST(Windows, MisalignedLengthsAreRejected) {
  const std::size_t f[] = {1, 4};
  auto ds = resample_practical(ramp(100, 2), f, train_only());
  EXPECT_THROW(make_windows(ds, Split::train, {30, 8, 1, false}), ConfigError);
}

TEST(Windows, UnobservedTargetsAreSkipped) {
  auto dense = ramp(20, 1);
  dense.columns[0][10] = std::nan("");
  const std::size_t f[] = {1};
  auto ds = resample_practical(dense, f, train_only());
  for (const auto& w : make_windows(ds, Split::train, {4, 2, 1, false})) {
    EXPECT_FALSE(w.origin + 4 <= 10 && 10 < w.origin + 6) << "origin " << w.origin;
  }
}

TEST(Missing, ZeroRatioIsIdentity) {
  auto w = single_channel_window(48, 4);
  PatchPlan plan{{{12, 4, 0}}};
  auto out = inject_block_missing(w, plan, {MissingProtocol::patch_aligned, 0.0}, 1);
  EXPECT_EQ(out.channels[0].input, w.channels[0].input);
  EXPECT_EQ(out.channels[0].observed, w.channels[0].observed);
}

TEST(Missing, HalfRatioMasksTwoOfFourPatches) {
  auto w = single_channel_window(48, 4);
  PatchPlan plan{{{12, 4, 0}}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto out = inject_block_missing(w, plan, {MissingProtocol::patch_aligned, 0.5}, seed);
    const auto blocks = static_cast<std::size_t>(std::llround(0.5 * 48 / 12));
    std::size_t masked = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      std::size_t off = 0;
      for (std::size_t t = 12 * j; t < 12 * (j + 1); ++t) off += out.channels[0].observed[t] == 0;
      EXPECT_TRUE(off == 0 || off == 12);
      masked += off == 12;
    }
    EXPECT_EQ(masked, blocks);
    EXPECT_EQ(masked, 2u);
  }
}

TEST(Missing, ShortRangeBlocksStayWithinBounds) {
  auto w = single_channel_window(96, 4);
  PatchPlan plan{{{24, 4, 0}}};
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto out = inject_block_missing(w, plan, {MissingProtocol::short_range, 0.125}, seed);
    auto runs = masked_runs(out.channels[0].observed);
    ASSERT_FALSE(runs.empty());
    // merged neighbours may exceed 20, so check the total instead
    std::size_t total = 0;
    for (auto [b, e] : runs) {
      EXPECT_GE(e - b, 5u);
      total += e - b;
    }
    EXPECT_GE(static_cast<double>(total), 0.125 * 96);
    EXPECT_LE(static_cast<double>(total), 0.125 * 96 + 20);
  }
}

TEST(Missing, TargetsNeverChangeAndValuesAreZeroFilled) {
  const std::size_t f[] = {1, 2};
  auto ds = synth_coupled(2, 3000, f, 0.8, 0.3, 2);
  auto ws = make_windows(ds, Split::test, {96, 48, 1, true});
  PatchPlan plan{{{12, 8, 0}, {12, 4, 0}}};
  for (double m : {0.125, 0.25, 0.5}) {
    for (MissingProtocol p : {MissingProtocol::patch_aligned, MissingProtocol::short_range}) {
      for (std::size_t k = 0; k < ws.size(); k += 7) {
        auto out = inject_block_missing(ws[k], plan, {p, m}, 3);
        for (std::size_t i = 0; i < 2; ++i) {
          EXPECT_EQ(out.channels[i].target, ws[k].channels[i].target);
          for (std::size_t t = 0; t < out.channels[i].input.size(); ++t)
            if (!out.channels[i].observed[t]) EXPECT_EQ(out.channels[i].input[t], 0.0);
        }
      }
    }
  }
}

TEST(Missing, MaskedFractionWithinOneBlockAndOnePatchSurvives) {
  auto w = single_channel_window(96, 4);
  PatchPlan plan{{{12, 8, 0}}};
  for (double m : {0.125, 0.25, 0.375, 0.5, 0.75}) {
    for (MissingProtocol p : {MissingProtocol::patch_aligned, MissingProtocol::short_range}) {
      const double block = p == MissingProtocol::patch_aligned ? 12.0 : 20.0;
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto out = inject_block_missing(w, plan, {p, m}, seed);
        const auto& obs = out.channels[0].observed;
        const double masked = static_cast<double>(std::count(obs.begin(), obs.end(), 0));
        EXPECT_LE(std::fabs(masked - m * 96), block) << "m=" << m;
        bool full = false;
        for (std::size_t j = 0; j < 8 && !full; ++j)
          full = std::all_of(obs.begin() + 12 * j, obs.begin() + 12 * (j + 1),
                             [](auto v) { return v == 1; });
        EXPECT_TRUE(full);
      }
    }
  }
}

TEST(Missing, RatioThatLeavesNoPatchIsRejected) {
  auto w = single_channel_window(48, 4);
  PatchPlan plan{{{12, 4, 0}}};
  EXPECT_THROW(inject_block_missing(w, plan, {MissingProtocol::patch_aligned, 0.9}, 0),
               ContractError);
}

TEST(Missing, SeededPlacementIsReproducible) {
  auto w = single_channel_window(96, 4);
  PatchPlan plan{{{12, 8, 0}}};
  MissingOptions o{MissingProtocol::short_range, 0.25};
  EXPECT_EQ(inject_block_missing(w, plan, o, 5).channels[0].observed,
            inject_block_missing(w, plan, o, 5).channels[0].observed);
}

TEST(Truncate, MasksOldestSteps) {
  WindowSample w;
  w.factors = {1, 4};
  w.channels.resize(2);
  w.channels[0].input.assign(16, 1.0);
  w.channels[0].observed.assign(16, 1);
  w.channels[1].input.assign(4, 1.0);
  w.channels[1].observed.assign(4, 1);
  auto out = truncate_input(w, 8);
  for (std::size_t t = 0; t < 16; ++t) EXPECT_EQ(out.channels[0].observed[t], t >= 8 ? 1 : 0);
  EXPECT_EQ(out.channels[1].observed, (Mask{0, 0, 1, 1}));
  EXPECT_EQ(out.channels[1].input[0], 0.0);
}

TEST(Fill, LinearStraightLine) {
  const double v[] = {1, 0, 0, 5};
  const std::uint8_t m[] = {1, 0, 0, 1};
  auto out = fill_channel(v, m, 1, 0, 4, FillMethod::linear);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_NEAR(out[1], 7.0 / 3.0, 1e-15);
  EXPECT_NEAR(out[2], 11.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(out[3], 5.0);
}

TEST(Fill, ForwardHoldsLastValue) {
  const double v[] = {1, 0, 0, 5};
  const std::uint8_t m[] = {1, 0, 0, 1};
  EXPECT_EQ(fill_channel(v, m, 1, 0, 4, FillMethod::forward), (std::vector<double>{1, 1, 1, 5}));
}

TEST(Fill, ZeroFillsMissingBlock) {
  const double v[] = {2, 9, 9, 3};
  const std::uint8_t m[] = {1, 0, 0, 1};
  EXPECT_EQ(fill_channel(v, m, 1, 0, 4, FillMethod::zero), (std::vector<double>{2, 0, 0, 3}));
}

TEST(Fill, CoarseChannelFillsInterSampleGaps) {
  const double v[] = {0, 4};
  const std::uint8_t m[] = {1, 1};
  EXPECT_EQ(fill_channel(v, m, 4, 0, 8, FillMethod::linear),
            (std::vector<double>{0, 1, 2, 3, 4, 4, 4, 4}));
}

TEST(Fill, AllUnobservedIsAnError) {
  const double v[] = {1, 2};
  const std::uint8_t m[] = {0, 0};
  EXPECT_THROW(fill_channel(v, m, 1, 0, 2, FillMethod::linear), ContractError);
}

TEST(Synth, ZeroCouplingIsUncorrelated) {
  auto d = synth_coupled_dense(3, 10000, 0.0, 0.3, 11);
  EXPECT_LT(std::fabs(correlation(d.columns[0], d.columns[1], 10000)), 0.1);
  EXPECT_LT(std::fabs(correlation(d.columns[0], d.columns[2], 10000)), 0.1);
}

TEST(Synth, FullCouplingWithoutNoiseIsALaggedCopy) {
  SynthOptions o;
  auto d = synth_coupled_dense(2, 1000, 1.0, 0.0, 5, o);
  for (std::size_t t = o.lag; t < 1000; ++t)
    EXPECT_EQ(d.columns[1][t], d.columns[0][t - o.lag]) << t;
}

TEST(Synth, SameSeedIsBitwiseIdentical) {
  const std::size_t f[] = {1, 1, 4};
  auto a = synth_coupled(3, 4000, f, 0.8, 0.3, 9);
  auto b = synth_coupled(3, 4000, f, 0.8, 0.3, 9);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.stats.mean, b.stats.mean);
  auto c = synth_coupled(3, 4000, f, 0.8, 0.3, 10);
  EXPECT_NE(a.values, c.values);
}

TEST(Synth, CouplingOutsideUnitIntervalIsRejected) {
  EXPECT_THROW(synth_coupled_dense(2, 10, 1.5, 0.0, 0), ContractError);
}
