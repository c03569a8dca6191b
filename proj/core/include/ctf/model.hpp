#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctf/attnmask.hpp"
#include "ctf/data.hpp"
#include "ctf/patch_plan.hpp"
#include "ctf/patching.hpp"
#include "ctf/tensor.hpp"

namespace ctf::model {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_blocks = 2;
  std::size_t ff_ratio = 2;        // hidden width = ff_ratio * d_model
  std::size_t channel_tokens = 2;  // C, per channel
  attnmask::MaskStrategy mask_strategy = attnmask::MaskStrategy::CD_ReadOnly;
  bool use_channel_embedding = true;
  double dropout_ratio = 0.4;  // training-time patch masking ratio t
  bool patch_masking = true;   // false: unobserved patches stay attendable
  bool dynamic_patching = true;
  double kappa = spectral::kDefaultKappa;
  std::size_t base_patch_length = 24;
  std::size_t input_length = 96;  // L, fine steps
  std::size_t horizon = 48;       // H, fine steps

  void validate() const;
  patching::PlanOptions plan_options() const;
};

enum class Ablation {
  no_channel_dependence,
  no_dynamic_patching,
  no_patch_masking,
  no_channel_embedding,
};

std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& s);
ModelConfig ablate(ModelConfig config, Ablation toggle);

struct NamedTensor {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct BlockParams {
  Tensor wq, wk, wv, wo;     // [d x d]
  Tensor ln1_gain, ln1_shift;
  Tensor ln2_gain, ln2_shift;
  Tensor ff_w1, ff_b1;       // [d x ff], [ff]
  Tensor ff_w2, ff_b2;       // [ff x d], [d]
};

struct DecoderParams {
  Tensor weight;  // [C*d x H_r]
  Tensor bias;    // [H_r]
};

struct ModelParams {
  patching::EmbeddingBank bank;
  std::vector<BlockParams> blocks;
  std::map<std::size_t, DecoderParams> decoders;  // keyed by sampling factor
  bool channel_embedding_frozen = false;

  // Every learnable tensor exactly once, in a fixed order.
  std::vector<NamedTensor> registry() const;
  // Deep copy (independent storage).
  ModelParams clone() const;
};

ModelParams init_params(const ModelConfig& config, const PatchPlan& plan,
                        std::span<const std::size_t> factors, std::uint64_t seed);

std::size_t count_params(std::span<const NamedTensor> registry);
std::size_t count_params(const ModelParams& params);

struct ForwardOutput {
  std::vector<Tensor> predictions;  // per channel, [H_i], normalized units
  Tensor final_tokens;              // [T x d] after the last block
  patching::Tokens tokens;
};

// Builds the attention bias for a window (observation flags folded in
// unless patch masking is disabled).
attnmask::AttentionMask window_mask(const patching::Tokens& tokens, const ModelConfig& config,
                                    std::optional<std::span<const std::uint8_t>> keep);

ForwardOutput forward(const data::WindowSample& w, const ModelParams& params,
                      const ModelConfig& config, const PatchPlan& plan,
                      std::optional<std::span<const std::uint8_t>> keep = std::nullopt);

struct Forecast {
  std::vector<std::vector<double>> normalized;
  std::vector<std::vector<double>> denormalized;
};

Forecast predict(const data::WindowSample& w, const ModelParams& params,
                 const ModelConfig& config, const PatchPlan& plan, const data::NormStats& stats);

// Flat little-endian float64 payload preceded by a one-line JSON header that
// lists tensor names and shapes in registry order.
void save_checkpoint(const std::string& path, const ModelParams& params);
void load_checkpoint(const std::string& path, ModelParams& params);

}  // namespace ctf::model
