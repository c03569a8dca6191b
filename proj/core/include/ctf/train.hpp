#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctf/data.hpp"
#include "ctf/model.hpp"
#include "ctf/patch_plan.hpp"
#include "ctf/tensor.hpp"

namespace ctf::train {

using Series = std::vector<std::vector<double>>;  // per channel

// Channel-aggregated MSE: mean over channels of each channel's MSE over its
// own horizon.
Tensor cmse(std::span<const Tensor> predictions, const Series& targets);
double cmse(const Series& targets, const Series& predictions);
double cmae(const Series& targets, const Series& predictions);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::size_t batch_size = 1;
  std::size_t train_stride = 8;  // window origin spacing, fine steps
  std::size_t val_stride = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Bias-corrected Adam on the trainable entries of `registry`, reading each
// tensor's accumulated gradient.
void adam_step(std::span<const model::NamedTensor> registry, AdamState& state, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_cmse = 0.0;
  double val_cmse = 0.0;
};

struct FitResult {
  model::ModelParams params;  // best-validation checkpoint
  PatchPlan plan;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_cmse = 0.0;
  bool diverged = false;
};

// Validation CMSE in normalized units, no patch dropout, clean inputs.
double validation_cmse(const std::vector<data::WindowSample>& windows,
                       const model::ModelParams& params, const model::ModelConfig& config,
                       const PatchPlan& plan);

using EpochCallback = std::function<void(const EpochRecord&)>;

FitResult fit(const data::AsyncDataset& ds, const model::ModelConfig& config,
              const TrainConfig& train_config, const EpochCallback& on_epoch = {});

// Same as fit but with an explicit patch plan (e.g. one loaded from disk).
FitResult fit_with_plan(const data::AsyncDataset& ds, const model::ModelConfig& config,
                        const TrainConfig& train_config, const PatchPlan& plan,
                        const EpochCallback& on_epoch = {});

}  // namespace ctf::train
