#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ctf/error.hpp"
#include "ctf/eval.hpp"
#include "ctf/patching.hpp"
#include "ctf/rng.hpp"
#include "oracles.hpp"

using namespace ctf;
using namespace ctf::eval;

namespace {

data::AsyncDataset dense_dataset(std::vector<std::vector<double>> cols, std::vector<std::size_t> f) {
  data::DenseSeries d;
  d.steps = cols.front().size();
  for (std::size_t i = 0; i < cols.size(); ++i) d.names.push_back("c" + std::to_string(i));
  d.columns = std::move(cols);
  return data::resample_practical(d, f);
}

std::vector<double> sinusoid(std::size_t n, double period, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t)
    x[t] = amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period);
  return x;
}

train::Series tones(std::size_t n, std::initializer_list<std::pair<double, double>> bins_amps) {
  std::vector<double> x(n, 0.0);
  for (auto [bin, amp] : bins_amps)
    for (std::size_t t = 0; t < n; ++t)
      x[t] += amp * std::cos(2.0 * std::numbers::pi * bin * static_cast<double>(t) / static_cast<double>(n));
  return {x};
}

std::size_t oracle_peak(const std::vector<double>& x) {
  std::vector<double> c = x;
  double mu = 0;
  for (double v : c) mu += v;
  mu /= static_cast<double>(c.size());
  for (double& v : c) v -= mu;
  std::size_t best = 1;
  for (std::size_t k = 1; k <= c.size() / 2; ++k)
    if (std::abs(ctf::testing::dft_bin(c, k)) > std::abs(ctf::testing::dft_bin(c, best))) best = k;
  return best;
}

struct Trained {
  data::AsyncDataset ds;
  model::ModelConfig cfg;
  train::FitResult fit;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained r;
    const std::size_t f[] = {1, 1, 4};
    r.ds = data::synth_coupled(3, 4000, f, 0.8, 0.3, 0);
    r.cfg.d_model = 16;
    r.cfg.n_heads = 2;
    r.cfg.input_length = 96;
    r.cfg.horizon = 48;
    train::TrainConfig tc;
    tc.max_epochs = 4;
    tc.train_stride = 16;
    tc.val_stride = 16;
    r.fit = train::fit(r.ds, r.cfg, tc);
    return r;
  }();
  return t;
}

}  // namespace

TEST(Scenario, Labels) {
  EXPECT_EQ(Scenario::clean().label(), "clean");
  auto s = Scenario::with_missing(data::MissingProtocol::patch_aligned, 0.125);
  EXPECT_EQ(s.label(), "missing_patch_aligned_m0.125");
  s.input_length = 48;
  EXPECT_EQ(s.label(), "missing_patch_aligned_m0.125_L48");
}

TEST(Evaluate, CleanEqualsZeroMissingRatio) {
  const auto& t = trained();
  EvalOptions clean;
  EvalOptions zero;
  zero.scenario = Scenario::with_missing(data::MissingProtocol::patch_aligned, 0.0);
  auto a = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, clean);
  auto b = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, zero);
  EXPECT_EQ(a.cmse, b.cmse);
  EXPECT_EQ(a.cmae, b.cmae);
}

TEST(Evaluate, OraclePredictorScoresZero) {
  const auto& t = trained();
  EvalOptions o;
  o.scenario = Scenario::with_missing(data::MissingProtocol::short_range, 0.25);
  auto r = evaluate_predictor(t.ds, 96, 48, t.fit.plan,
                              [](const data::WindowSample& w) {
                                train::Series s;
                                for (const auto& c : w.channels) s.push_back(c.target);
                                return s;
                              },
                              o);
  EXPECT_EQ(r.cmse, 0.0);
  EXPECT_EQ(r.cmae, 0.0);
  EXPECT_GT(r.windows, 0u);
}

TEST(Evaluate, HigherMissingRatioIsNotBetter) {
  const auto& t = trained();
  auto at = [&](double m) {
    EvalOptions o;
    o.scenario = Scenario::with_missing(data::MissingProtocol::patch_aligned, m);
    return evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, o).cmse;
  };
  EXPECT_GE(at(0.5), at(0.125));
}

TEST(Evaluate, MissingNeverAltersTargets) {
  const auto& t = trained();
  EvalOptions clean;
  clean.keep_forecasts = true;
  EvalOptions miss = clean;
  miss.scenario = Scenario::with_missing(data::MissingProtocol::short_range, 0.5);
  auto a = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, clean);
  auto b = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, miss);
  EXPECT_EQ(a.targets, b.targets);
}

TEST(Evaluate, ThreadCountDoesNotChangeReport) {
  const auto& t = trained();
  EvalOptions one;
  one.scenario = Scenario::with_missing(data::MissingProtocol::patch_aligned, 0.25);
  EvalOptions four = one;
  four.threads = 4;
  auto a = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, one);
  auto b = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, four);
  EXPECT_EQ(a.cmse, b.cmse);
  EXPECT_EQ(per_window_csv(a), per_window_csv(b));
}

TEST(Evaluate, ShorterInputRunsAndMisalignedIsRejected) {
  const auto& t = trained();
  EvalOptions o;
  o.scenario.input_length = 48;
  auto r = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, o);
  EXPECT_TRUE(std::isfinite(r.cmse));
  o.scenario.input_length = 50;
  EXPECT_THROW(evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, o), ConfigError);
  o.scenario.input_length = 192;
  EXPECT_THROW(evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, o), ConfigError);
}

TEST(Evaluate, NormalizedUnitsScaleByVariance) {
  const auto& t = trained();
  EvalOptions raw;
  EvalOptions z;
  z.normalized = true;
  auto a = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, raw);
  auto b = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, z);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(a.channels[i].mse, b.channels[i].mse * t.ds.stats.std[i] * t.ds.stats.std[i],
                1e-9 * a.channels[i].mse);
}

TEST(Baselines, ConstantDatasetScoresZero) {
  auto ds = dense_dataset({std::vector<double>(2000, 3.5), std::vector<double>(2000, -1.0)}, {1, 4});
  auto b = naive_baselines(ds, 96, 48);
  EXPECT_EQ(b.mean.cmse, 0.0);
  EXPECT_EQ(b.persistence.cmse, 0.0);
}

TEST(Baselines, PersistenceOnSinusoidMatchesPhaseAverage) {
  const double period = 48.0;
  const std::size_t H = 24;  // half a period
  auto ds = dense_dataset({sinusoid(20000, period, 2.0)}, {1});
  auto b = naive_baselines(ds, 96, H);
  // E_phase[(A sin(a + w h) - A sin a)^2] = A^2 (1 - cos(w h))
  double analytic = 0;
  for (std::size_t h = 1; h <= H; ++h)
    analytic += 4.0 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(h) / period));
  analytic /= static_cast<double>(H);
  EXPECT_NEAR(b.persistence.cmse, analytic, 0.05 * analytic);
}

TEST(Baselines, MeanBaselineMatchesTargetVariance) {
  Rng rng(17);
  std::vector<std::vector<double>> cols(2, std::vector<double>(20000));
  for (auto& c : cols)
    for (auto& v : c) v = 5.0 + 2.0 * standard_normal(rng);
  auto ds = dense_dataset(cols, {1, 1});
  auto b = naive_baselines(ds, 96, 48);
  double var = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    auto [begin, end] = ds.split_range(data::Split::test);
    double mu = 0, sq = 0;
    for (std::size_t t = begin; t < end; ++t) mu += cols[i][t];
    mu /= static_cast<double>(end - begin);
    for (std::size_t t = begin; t < end; ++t) sq += (cols[i][t] - mu) * (cols[i][t] - mu);
    var += sq / static_cast<double>(end - begin);
  }
  var /= 2.0;
  EXPECT_NEAR(b.mean.cmse, var, 0.05 * var);
}

TEST(FrequencyBias, IdenticalForecastsGiveZero) {
  std::vector<train::Series> y{tones(32, {{3, 1.0}}), tones(32, {{5, 0.5}})};
  const std::size_t f[] = {1};
  auto fb = frequency_bias_report(y, y, f);
  EXPECT_EQ(fb.dominant_freq_diff, 0.0);
  EXPECT_EQ(fb.band_rmse_low, 0.0);
  EXPECT_EQ(fb.band_rmse_mid, 0.0);
  EXPECT_EQ(fb.band_rmse_high, 0.0);
}

TEST(FrequencyBias, HalfScaledForecastKeepsDominantBin) {
  auto y = tones(64, {{20, 1.0}});  // 0.3125 cycles per step, high band
  auto p = y;
  for (auto& v : p[0]) v *= 0.5;
  const std::size_t f[] = {1};
  auto fb = frequency_bias_report({p}, {y}, f);
  EXPECT_EQ(fb.dominant_freq_diff, 0.0);
  EXPECT_GT(fb.band_rmse_high, 0.0);
  EXPECT_NEAR(fb.band_rmse_low, 0.0, 1e-12);
}

TEST(FrequencyBias, TwoToneAgainstOneToneGivesBinGap) {
  const std::size_t n = 32, r = 2;
  auto y = tones(n, {{3, 1.0}, {10, 2.0}});
  auto p = tones(n, {{3, 1.0}});
  const double gap = std::fabs(static_cast<double>(oracle_peak(y[0])) -
                               static_cast<double>(oracle_peak(p[0])));
  EXPECT_EQ(gap, 7.0);
  const std::size_t f[] = {r};
  auto fb = frequency_bias_report({p}, {y}, f);
  EXPECT_NEAR(fb.dominant_freq_diff, gap / static_cast<double>(n * r), 1e-15);
}

TEST(FrequencyBias, ShortHorizonChannelIsSkipped) {
  train::Series y{tones(16, {{2, 1.0}})[0], {1, 2, 3, 4}};
  const std::size_t f[] = {1, 4};
  auto fb = frequency_bias_report({y}, {y}, f);
  EXPECT_EQ(fb.analyzed_channels, (std::vector<std::size_t>{0}));
  EXPECT_EQ(fb.skipped_channels, (std::vector<std::size_t>{1}));
}

TEST(FrequencyBias, WindowOrderDoesNotMatter) {
  std::vector<train::Series> y, p;
  for (std::uint64_t s = 0; s < 6; ++s) {
    y.push_back({ctf::testing::random_vector(16, s)});
    p.push_back({ctf::testing::random_vector(16, s + 50)});
  }
  const std::size_t f[] = {1};
  auto a = frequency_bias_report(p, y, f);
  std::reverse(y.begin(), y.end());
  std::reverse(p.begin(), p.end());
  auto b = frequency_bias_report(p, y, f);
  EXPECT_NEAR(a.dominant_freq_diff, b.dominant_freq_diff, 1e-12);
  EXPECT_NEAR(a.band_rmse_mid, b.band_rmse_mid, 1e-12);
}

TEST(Report, JsonAndCsvShapes) {
  const auto& t = trained();
  auto r = evaluate(t.ds, t.fit.params, t.cfg, t.fit.plan, {});
  auto j = to_json(r);
  EXPECT_EQ(j["units"], "raw");
  EXPECT_EQ(j["channels"].size(), 3u);
  auto csv = per_window_csv(r);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.windows + 1);
  for (std::size_t k = 1; k < r.per_window.size(); ++k)
    EXPECT_LT(r.per_window[k - 1].origin, r.per_window[k].origin);
}
