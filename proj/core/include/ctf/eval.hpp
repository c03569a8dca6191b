#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctf/data.hpp"
#include "ctf/model.hpp"
#include "ctf/patch_plan.hpp"
#include "ctf/spectral.hpp"
#include "ctf/train.hpp"

namespace ctf::eval {

enum class ScenarioKind { clean, missing };

struct Scenario {
  ScenarioKind kind = ScenarioKind::clean;
  data::MissingOptions missing;
  std::optional<std::size_t> input_length;  // L' < L truncates test inputs

  static Scenario clean();
  static Scenario with_missing(data::MissingProtocol protocol, double ratio);
  std::string label() const;
};

struct EvalOptions {
  Scenario scenario;
  std::uint64_t seed = 0;
  bool normalized = false;  // score in z-units instead of raw units
  std::size_t threads = 1;
  bool keep_forecasts = false;
};

struct ChannelMetrics {
  std::string name;
  std::size_t factor = 1;
  double mse = 0.0;
  double mae = 0.0;
};

struct WindowMetrics {
  std::size_t origin = 0;
  double cmse = 0.0;
  double cmae = 0.0;
  std::vector<double> mse;  // per channel
  std::vector<double> mae;
};

struct Report {
  std::string scenario;
  bool normalized = false;
  std::size_t windows = 0;
  double cmse = 0.0;
  double cmae = 0.0;
  std::vector<ChannelMetrics> channels;
  std::vector<WindowMetrics> per_window;  // ascending origin
  // Filled when EvalOptions::keep_forecasts is set, in metric units.
  std::vector<train::Series> forecasts;
  std::vector<train::Series> targets;
};

// Maps a prepared window to normalized per-channel forecasts.
using Predictor = std::function<train::Series(const data::WindowSample&)>;

// Scores any predictor on the test split (origin stride max r_i). Windows
// are scored independently and reduced in origin order.
Report evaluate_predictor(const data::AsyncDataset& ds, std::size_t input_length,
                          std::size_t horizon, const PatchPlan& plan, const Predictor& predictor,
                          const EvalOptions& options);

Report evaluate(const data::AsyncDataset& ds, const model::ModelParams& params,
                const model::ModelConfig& config, const PatchPlan& plan,
                const EvalOptions& options);

struct BaselineReports {
  Report mean;
  Report persistence;
};

// Training-mean and last-observed-value forecasts on clean test windows.
BaselineReports naive_baselines(const data::AsyncDataset& ds, std::size_t input_length,
                                std::size_t horizon, bool normalized = false);

struct FrequencyBias {
  double dominant_freq_diff = 0.0;  // cycles per fine step
  double band_rmse_low = 0.0;
  double band_rmse_mid = 0.0;
  double band_rmse_high = 0.0;
  std::size_t windows = 0;
  std::vector<std::size_t> analyzed_channels;
  std::vector<std::size_t> skipped_channels;  // horizon shorter than 8
  std::string aggregation = "mean over windows, then over channels";
};

inline constexpr std::size_t kMinSpectralHorizon = 8;

FrequencyBias frequency_bias_report(const std::vector<train::Series>& predictions,
                                    const std::vector<train::Series>& targets,
                                    std::span<const std::size_t> factors);

nlohmann::json to_json(const Report& r);
nlohmann::json to_json(const FrequencyBias& f);
// One row per window: origin, cmse, cmae, then mse/mae per channel.
std::string per_window_csv(const Report& r);

}  // namespace ctf::eval
