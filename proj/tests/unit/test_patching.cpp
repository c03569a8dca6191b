#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "ctf/data.hpp"
#include "ctf/error.hpp"
#include "ctf/patching.hpp"
#include "oracles.hpp"

using namespace ctf;
using namespace ctf::patching;

namespace {

std::vector<double> periodic(std::size_t n, double period, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t)
    x[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
  return x;
}

data::WindowSample window_of(std::vector<std::vector<double>> inputs, std::vector<std::size_t> factors) {
  data::WindowSample w;
  w.factors = std::move(factors);
  for (auto& in : inputs) {
    data::ChannelWindow cw;
    cw.observed.assign(in.size(), 1);
    cw.input = std::move(in);
    w.channels.push_back(std::move(cw));
  }
  return w;
}

// Bank with random projections for the given lengths.
EmbeddingBank make_bank(std::size_t d, std::size_t channels, std::size_t C,
                        std::initializer_list<std::size_t> lengths, std::size_t max_patches) {
  EmbeddingBank b;
  b.d_model = d;
  std::uint64_t seed = 100;
  for (auto l : lengths)
    b.projections[l] = {Tensor::parameter({l, d}, ctf::testing::random_vector(l * d, ++seed)),
                        Tensor::parameter({d}, ctf::testing::random_vector(d, ++seed))};
  for (std::size_t i = 0; i < channels; ++i) {
    b.channel_embedding.push_back(Tensor::parameter({d}, ctf::testing::random_vector(d, ++seed)));
    b.channel_tokens.push_back(Tensor::parameter({C, d}, ctf::testing::random_vector(C * d, ++seed)));
  }
  b.positional = positional_table(max_patches, d);
  return b;
}

}  // namespace

TEST(PlanChannel, WindAndSolarDominantPeriods) {
  auto wind = plan_channel(576, 1, 576 / 48, {});
  EXPECT_EQ(wind, (ChannelPatches{48, 12, 0}));
  auto solar = plan_channel(144, 4, 144 / 18, {});
  EXPECT_EQ(solar, (ChannelPatches{18, 8, 0}));
}

TEST(PlanPatches, WindAndSolarTonesFromFft) {
  auto w = window_of({periodic(576, 48, 0.4), periodic(144, 18, 1.1)}, {1, 4});
  auto plan = plan_patches(w);
  EXPECT_EQ(plan.channels[0].count, 12u);
  EXPECT_EQ(plan.channels[0].length, 48u);
  EXPECT_EQ(plan.channels[1].count, 8u);
  EXPECT_EQ(plan.channels[1].length, 18u);
}

TEST(PlanForDataset, WindAndSolarTonesFromTrainingSpectrum) {
  data::DenseSeries d;
  d.steps = 576 * 12;
  d.names = {"wind", "solar"};
  d.columns = {periodic(d.steps, 48, 0.2), periodic(d.steps, 72, 0.9)};
  const std::size_t f[] = {1, 4};
  auto ds = data::resample_practical(d, f);
  auto plan = plan_for_dataset(ds, 576);
  EXPECT_EQ(plan.channels[0], (ChannelPatches{48, 12, 0}));
  EXPECT_EQ(plan.channels[1], (ChannelPatches{18, 8, 0}));
}

TEST(PlanPatches, TwoCycleSinusoid) {
  auto w = window_of({{0, 1, 0, -1, 0, 1, 0, -1}}, {1});
  EXPECT_EQ(plan_patches(w).channels[0], (ChannelPatches{4, 2, 0}));
}

TEST(PlanPatches, FallbackDropsOldestRemainder) {
  auto p = plan_channel(50, 2, std::nullopt, {});
  EXPECT_EQ(p, (ChannelPatches{12, 4, 2}));
  // a flat channel has no dominant tone
  auto w = window_of({std::vector<double>(50, 3.0)}, {2});
  EXPECT_EQ(plan_patches(w).channels[0], p);
  EXPECT_EQ(p.patch_begin(0), 2u);
}

TEST(PlanPatches, ShortInputIsOnePatch) {
  EXPECT_EQ(plan_channel(3, 1, std::nullopt, {}), (ChannelPatches{3, 1, 0}));
}

TEST(PlanPatches, LengthIsClampedToAtLeastTwoPatches) {
  EXPECT_EQ(plan_channel(40, 1, 1, {}).length, 20u);   // one cycle
  EXPECT_EQ(plan_channel(40, 1, 20, {}).length, 2u);   // Nyquist
  EXPECT_EQ(plan_channel(40, 1, std::nullopt, {.base_patch_length = 100}).length, 20u);
}

TEST(PlanPatches, FixedModeIgnoresToneAndFactor) {
  PlanOptions o;
  o.dynamic = false;
  EXPECT_EQ(plan_channel(96, 4, 8, o).length, 24u);
}

TEST(PlanPatches, InvariantHoldsOverManyInputs) {
  for (std::size_t L = 4; L <= 200; ++L)
    for (std::size_t r : {1u, 2u, 3u, 4u})
      for (std::optional<std::size_t> bin : {std::optional<std::size_t>{}, std::optional<std::size_t>{3}}) {
        auto p = plan_channel(L, r, bin, {});
        EXPECT_EQ(p.length * p.count + p.dropped, L);
        EXPECT_GE(p.length, 2u);
        EXPECT_LE(p.length, L / 2);
        EXPECT_LT(p.dropped, p.length);
      }
}

TEST(PositionalTable, FirstRowAlternatesZeroOne) {
  auto t = positional_table(4, 6);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(t.at(0, k), k % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalTable, DeterministicAndBounded) {
  auto a = positional_table(32, 16);
  EXPECT_EQ(a.to_vector(), positional_table(32, 16).to_vector());
  for (double v : a.to_vector()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NEAR(a.at(3, 2), std::sin(3.0 / std::pow(10000.0, 2.0 / 16.0)), 1e-15);
}

TEST(PositionalTable, OddWidthIsRejected) {
  EXPECT_THROW(positional_table(4, 3), ContractError);
}

TEST(Tokenize, ZeroEverythingGivesZeroLocalTokens) {
  EmbeddingBank b;
  b.d_model = 2;
  b.projections[2] = {Tensor::zeros({2, 2}), Tensor::zeros({2})};
  b.channel_embedding = {Tensor::zeros({2})};
  b.channel_tokens = {Tensor::zeros({1, 2})};
  b.positional = Tensor::zeros({4, 2});
  auto w = window_of({std::vector<double>(8, 0.0)}, {1});
  PatchPlan plan{{{2, 4, 0}}};
  auto tok = tokenize(w, plan, b);
  for (double v : tok.matrix.to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Tokenize, BasisSelectorPicksFirstCoordinate) {
  EmbeddingBank b;
  b.d_model = 1;
  b.projections[3] = {Tensor({3, 1}, {1, 0, 0}), Tensor::zeros({1})};
  b.channel_embedding = {Tensor({1}, {0.25})};
  b.channel_tokens = {Tensor({1, 1}, {0.5})};
  b.positional = Tensor::zeros({1, 1});
  auto w = window_of({{1, 0, 0}}, {1});
  auto tok = tokenize(w, {{{3, 1, 0}}}, b);
  ASSERT_EQ(tok.matrix.shape(), (Shape{2, 1}));
  EXPECT_EQ(tok.matrix.at(0), 1.0 + 0.25);
  EXPECT_EQ(tok.matrix.at(1), 0.5 + 0.25);
  auto plain = tokenize(w, {{{3, 1, 0}}}, b, false);
  EXPECT_EQ(plain.matrix.at(0), 1.0);
}

TEST(Tokenize, MatchesHandComputedTokens) {
  const std::size_t d = 4;
  auto b = make_bank(d, 2, 2, {3, 2}, 8);
  auto w = window_of({ctf::testing::random_vector(9, 1), ctf::testing::random_vector(5, 2)}, {1, 2});
  PatchPlan plan{{{3, 3, 0}, {2, 2, 1}}};
  auto tok = tokenize(w, plan, b);
  ASSERT_EQ(tok.layout.total(), 3u + 2u + 2u + 2u);
  ASSERT_EQ(tok.matrix.dim(0), tok.layout.total());
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& p = plan.channels[i];
    const auto& proj = b.projections.at(p.length);
    for (std::size_t j = 0; j < p.count; ++j) {
      const std::size_t row = tok.layout.token_of_local(i, j);
      for (std::size_t c = 0; c < d; ++c) {
        double v = proj.bias.at(c) + b.positional.at(j, c) + b.channel_embedding[i].at(c);
        for (std::size_t t = 0; t < p.length; ++t)
          v += w.channels[i].input[p.patch_begin(j) + t] * proj.weight.at(t, c);
        EXPECT_NEAR(tok.matrix.at(row, c), v, 1e-14);
      }
    }
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t row = tok.layout.token_of_channel_token(i, k);
      for (std::size_t c = 0; c < d; ++c)
        EXPECT_NEAR(tok.matrix.at(row, c),
                    b.channel_tokens[i].at(k, c) + b.channel_embedding[i].at(c), 1e-15);
    }
  }
}

TEST(Tokenize, EqualLengthsShareOneProjection) {
  auto b = make_bank(2, 2, 1, {4}, 4);
  auto w = window_of({ctf::testing::random_vector(8, 3), ctf::testing::random_vector(8, 4)}, {1, 1});
  PatchPlan plan{{{4, 2, 0}, {4, 2, 0}}};
  auto before = tokenize(w, plan, b).matrix.to_vector();
  EXPECT_EQ(b.projections.size(), 1u);
  b.projections.at(4).weight.data()[0] += 1.0;
  auto after = tokenize(w, plan, b).matrix;
  auto layout = TokenLayout({2, 2}, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t row = layout.token_of_local(i, 0);
    EXPECT_NE(after.at(row, 0), before[row * 2]) << "channel " << i;
  }
}

TEST(Tokenize, MissingProjectionIsAShapeError) {
  auto b = make_bank(2, 1, 1, {4}, 4);
  auto w = window_of({std::vector<double>(9, 1.0)}, {1});
  EXPECT_THROW(tokenize(w, {{{3, 3, 0}}}, b), ShapeError);
}

TEST(PatchObservation, OnlyFullyUnobservedPatchIsFlagged) {
  auto w = window_of({ctf::testing::random_vector(12, 5)}, {1});
  PatchPlan plan{{{3, 4, 0}}};
  auto& obs = w.channels[0].observed;
  obs[3] = obs[4] = obs[5] = 0;  // patch 1 fully gone
  obs[7] = 0;                    // patch 2 partially gone
  EXPECT_EQ(patch_observation(w, plan), (std::vector<std::uint8_t>{1, 0, 1, 1}));
}

TEST(PatchObservation, FlagsDependOnlyOnObservedMask) {
  auto w = window_of({ctf::testing::random_vector(12, 6)}, {1});
  PatchPlan plan{{{4, 3, 0}}};
  w.channels[0].observed = {1, 1, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0};
  auto flags = patch_observation(w, plan);
  for (std::uint64_t s = 0; s < 5; ++s) {
    w.channels[0].input = ctf::testing::random_vector(12, 50 + s, -100, 100);
    EXPECT_EQ(patch_observation(w, plan), flags);
  }
}

TEST(TokenLayout, LookupIsABijection) {
  TokenLayout layout({3, 1, 2}, 2);
  EXPECT_EQ(layout.total(), 6u + 3u * 2u);
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < layout.local_count(i); ++j) {
      const auto t = layout.token_of_local(i, j);
      EXPECT_EQ(layout.info(t).channel, i);
      EXPECT_EQ(layout.info(t).kind, TokenKind::local);
      EXPECT_EQ(layout.info(t).index, j);
      seen.insert(t);
    }
    for (std::size_t c = 0; c < 2; ++c) {
      const auto t = layout.token_of_channel_token(i, c);
      EXPECT_EQ(layout.info(t).kind, TokenKind::channel);
      seen.insert(t);
    }
  }
  EXPECT_EQ(seen.size(), layout.total());
  EXPECT_EQ(*seen.rbegin(), layout.total() - 1);
}
