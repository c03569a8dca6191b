#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctf/patch_plan.hpp"

namespace ctf::data {

using Mask = std::vector<std::uint8_t>;  // 1 = observed

struct ChannelSpec {
  std::string name;
  std::size_t sampling_factor = 1;  // channel period / finest period
  std::size_t index = 0;
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

enum class Split { train, val, test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

// Fine-grid boundaries: train [0, train_end), val [train_end, val_end),
// test [val_end, base_len).
struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Channels on a shared fine-grid window, each stored at its own rate.
struct AsyncDataset {
  std::string name;
  std::vector<ChannelSpec> channels;
  std::vector<std::vector<double>> values;  // raw units, channel grid
  std::vector<Mask> observed;
  std::size_t base_len = 0;
  std::size_t phase_offset = 0;  // fine step of each channel's first sample
  SplitBounds splits;
  NormStats stats;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t max_factor() const;
  std::vector<std::size_t> factors() const;
  std::pair<std::size_t, std::size_t> split_range(Split s) const;
  // Fine-grid time of sample k of channel i.
  std::size_t fine_time(std::size_t channel, std::size_t k) const {
    return k * channels[channel].sampling_factor + phase_offset;
  }
};

/// Regularly sampled matrix, rows = fine steps; NaN marks an unobserved cell.
struct DenseSeries {
  std::size_t steps = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
};

struct ResampleOptions {
  SplitFractions fractions;
  std::size_t phase_offset = 0;
};

AsyncDataset resample_practical(const DenseSeries& regular, std::span<const std::size_t> factors,
                                const ResampleOptions& options = {});

// Per-channel z-score statistics from observed training-split points.
NormStats compute_train_stats(const AsyncDataset& ds);

struct ChannelWindow {
  std::vector<double> input;
  Mask observed;
  std::vector<double> target;
  std::size_t first_offset = 0;  // fine step of input[0] relative to the origin
};

struct WindowSample {
  std::size_t origin = 0;  // fine step of the window start
  std::vector<std::size_t> factors;
  std::vector<ChannelWindow> channels;

  std::size_t num_channels() const { return channels.size(); }
};

struct WindowOptions {
  std::size_t input_length = 96;  // L, fine steps
  std::size_t horizon = 48;       // H, fine steps
  std::size_t stride = 1;
  bool normalize = true;
};

void check_window_alignment(std::size_t input_length, std::size_t horizon,
                            std::size_t max_factor);

// Sliding windows fully inside the split. The test split always uses
// stride max(r_i) with origins on multiples of max(r_i). Windows whose
// targets contain unobserved points are skipped.
std::vector<WindowSample> make_windows(const AsyncDataset& ds, Split split,
                                       const WindowOptions& options);

double normalize_value(const NormStats& s, std::size_t channel, double raw);
double denormalize_value(const NormStats& s, std::size_t channel, double z);

enum class MissingProtocol { patch_aligned, short_range };

const char* protocol_name(MissingProtocol p);
MissingProtocol parse_protocol(const std::string& s);

struct MissingOptions {
  MissingProtocol protocol = MissingProtocol::patch_aligned;
  double ratio = 0.0;
  std::size_t min_block = 5;   // short_range block lengths, channel steps
  std::size_t max_block = 20;
};

// Zero-fills contiguous blocks of every channel's input and clears their
// observed flags; targets are never touched. Each channel keeps at least one
// fully observed patch. Block placement is seeded per (seed, origin, channel).
WindowSample inject_block_missing(const WindowSample& w, const PatchPlan& plan,
                                  const MissingOptions& options, std::uint64_t seed);

// Marks the oldest (L - L') fine steps of every channel as unobserved and
// zero-fills them, emulating a shorter input of L' steps.
WindowSample truncate_input(const WindowSample& w, std::size_t shorter_length);

enum class FillMethod { linear, forward, zero };

const char* fill_name(FillMethod m);
FillMethod parse_fill(const std::string& s);

// Fine-grid reconstruction of every channel's input window.
std::vector<std::vector<double>> fill_baseline(const WindowSample& w, FillMethod method);

// Fine-grid fill of one channel given its samples every `factor` steps.
std::vector<double> fill_channel(std::span<const double> values, std::span<const std::uint8_t> observed,
                                 std::size_t factor, std::size_t first_offset,
                                 std::size_t fine_length, FillMethod method);

struct SynthOptions {
  std::size_t lag = 48;          // fine steps channel j trails channel 0
  double gain = 1.0;             // scale applied to the lagged copy
  double noise_ar = 0.95;        // AR(1) coefficient of channel-0 noise
  std::vector<double> base_periods{24.0, 84.0};  // channel-0 tones, fine steps
  SplitFractions fractions;
};

// Channel 0: two seeded sinusoids plus AR(1) noise of marginal sd noise_sd.
// Channel j > 0: coupling * gain * ch0(t - lag) + (1 - coupling) * own tone.
AsyncDataset synth_coupled(std::size_t n_channels, std::size_t base_len,
                           std::span<const std::size_t> factors, double coupling,
                           double noise_sd, std::uint64_t seed,
                           const SynthOptions& options = {});

DenseSeries synth_coupled_dense(std::size_t n_channels, std::size_t base_len, double coupling,
                                double noise_sd, std::uint64_t seed,
                                const SynthOptions& options = {});

}  // namespace ctf::data
