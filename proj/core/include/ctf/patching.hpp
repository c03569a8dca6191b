#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "ctf/data.hpp"
#include "ctf/patch_plan.hpp"
#include "ctf/spectral.hpp"
#include "ctf/tensor.hpp"
#include "ctf/token_layout.hpp"

namespace ctf::patching {

struct PlanOptions {
  double kappa = spectral::kDefaultKappa;
  std::size_t base_patch_length = 24;  // fine steps, used without a dominant tone
  bool dynamic = true;                 // false: fixed base length, ignoring FFT and r_i
};

// l = floor(L_i / f*) when a dominant bin exists, else round(l_base / r);
// clamped to [2, L_i / 2]. Inputs shorter than 4 become one patch.
ChannelPatches plan_channel(std::size_t input_length, std::size_t factor,
                            std::optional<std::size_t> dominant_bin,
                            const PlanOptions& options);

// Plan from a single window.
PatchPlan plan_patches(const data::WindowSample& w, const PlanOptions& options = {});

// Plan from the average amplitude spectrum of non-overlapping training
// windows, so patch lengths stay fixed for the whole dataset.
PatchPlan plan_for_dataset(const data::AsyncDataset& ds, std::size_t input_length,
                           const PlanOptions& options = {});

// Sinusoidal table: [j, 2k] = sin(j / 10000^(2k/d)), [j, 2k+1] = cos(...).
Tensor positional_table(std::size_t max_patches, std::size_t d);

struct PatchProjection {
  Tensor weight;  // [l x d]
  Tensor bias;    // [d]
};

struct EmbeddingBank {
  std::size_t d_model = 0;
  std::map<std::size_t, PatchProjection> projections;  // keyed by patch length
  std::vector<Tensor> channel_embedding;               // [d] per channel
  std::vector<Tensor> channel_tokens;                  // [C x d] per channel
  Tensor positional;                                   // [max_patches x d], fixed
};

struct Tokens {
  Tensor matrix;  // [T x d]
  TokenLayout layout;
  std::vector<std::uint8_t> patch_observed;  // flattened in layout order
};

// [P_i x l_i] matrix of one channel's patches, oldest first.
std::vector<double> patch_matrix(const data::ChannelWindow& cw, const ChannelPatches& p);

// A patch counts as unobserved only when every point in it is unobserved.
std::vector<std::uint8_t> patch_observation(const data::WindowSample& w, const PatchPlan& plan);

Tokens tokenize(const data::WindowSample& w, const PatchPlan& plan, const EmbeddingBank& bank,
                bool use_channel_embedding = true);

}  // namespace ctf::patching
