#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctf/data.hpp"
#include "ctf/model.hpp"
#include "ctf/patch_plan.hpp"
#include "ctf/train.hpp"

namespace ctf::io {

namespace fs = std::filesystem;

// Fine-grid CSV: header "step,<channel>...", one row per fine step, an empty
// cell marks an unobserved value.
std::string dense_to_csv(const data::DenseSeries& s);
data::DenseSeries dense_from_csv(const std::string& text, const std::string& origin = "csv");

struct ManifestChannel {
  std::string name;
  std::string column;
  std::size_t sampling_factor = 1;
};

struct SynthSpec {
  std::size_t n_channels = 3;
  std::size_t base_len = 20000;
  double coupling = 0.8;
  double noise_sd = 0.3;
  std::uint64_t seed = 0;
  std::size_t lag = 48;
};

struct Manifest {
  std::string name;
  double base_period_seconds = 1.0;
  std::optional<fs::path> csv;  // resolved against the manifest directory
  std::optional<SynthSpec> synthetic;
  std::vector<ManifestChannel> channels;
  data::SplitFractions splits;
  std::size_t phase_offset = 0;
};

Manifest parse_manifest(const std::string& text, const fs::path& base_dir = {});
Manifest load_manifest(const fs::path& path);
data::AsyncDataset build_dataset(const Manifest& m);

// Prepared dataset directory: dataset.json plus channels/<name>.csv
// ("index,fine_step,value", empty value = unobserved).
void write_prepared(const fs::path& dir, const data::AsyncDataset& ds, const Manifest& m);
data::AsyncDataset load_prepared(const fs::path& dir);

nlohmann::json plan_to_json(const PatchPlan& plan);
PatchPlan plan_from_json(const nlohmann::json& j);

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  std::vector<std::string> ablations;
};

nlohmann::json config_to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const fs::path& path);

nlohmann::json parse_json(const std::string& text, const std::string& origin);
std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& content);
std::string format_double(double v);

}  // namespace ctf::io
