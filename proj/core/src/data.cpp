#include "ctf/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "ctf/error.hpp"
#include "ctf/rng.hpp"

namespace ctf {

double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace ctf

namespace ctf::data {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train|val|test)");
}

std::size_t AsyncDataset::max_factor() const {
  std::size_t m = 1;
  for (const auto& c : channels) m = std::max(m, c.sampling_factor);
  return m;
}

std::vector<std::size_t> AsyncDataset::factors() const {
  std::vector<std::size_t> f;
  for (const auto& c : channels) f.push_back(c.sampling_factor);
  return f;
}

std::pair<std::size_t, std::size_t> AsyncDataset::split_range(Split s) const {
  switch (s) {
    case Split::train: return {0, splits.train_end};
    case Split::val: return {splits.train_end, splits.val_end};
    case Split::test: return {splits.val_end, base_len};
  }
  return {0, 0};
}

namespace {

SplitBounds make_bounds(std::size_t base_len, const SplitFractions& f) {
  if (f.train <= 0.0 || f.val < 0.0 || f.test < 0.0 ||
      std::fabs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative, train > 0, and sum to 1");
  }
  SplitBounds b;
  const double n = static_cast<double>(base_len);
  b.train_end = static_cast<std::size_t>(std::llround(n * f.train));
  b.val_end = static_cast<std::size_t>(std::llround(n * (f.train + f.val)));
  b.val_end = std::min(b.val_end, base_len);
  return b;
}

}  // namespace

NormStats compute_train_stats(const AsyncDataset& ds) {
  NormStats s;
  for (std::size_t i = 0; i < ds.num_channels(); ++i) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < ds.values[i].size(); ++k) {
      if (!ds.observed[i][k] || ds.fine_time(i, k) >= ds.splits.train_end) continue;
      sum += ds.values[i][k];
      ++n;
    }
    const double mu = n ? sum / static_cast<double>(n) : 0.0;
    for (std::size_t k = 0; k < ds.values[i].size(); ++k) {
      if (!ds.observed[i][k] || ds.fine_time(i, k) >= ds.splits.train_end) continue;
      const double c = ds.values[i][k] - mu;
      sq += c * c;
    }
    double sd = n > 1 ? std::sqrt(sq / static_cast<double>(n)) : 1.0;
    if (!(sd > 1e-12)) sd = 1.0;
    s.mean.push_back(mu);
    s.std.push_back(sd);
  }
  return s;
}

AsyncDataset resample_practical(const DenseSeries& regular, std::span<const std::size_t> factors,
                                const ResampleOptions& options) {
  if (regular.steps == 0 || regular.columns.empty()) {
    throw ContractError("resample_practical: empty input");
  }
  if (factors.size() != regular.columns.size()) {
    throw ContractError("resample_practical: " + std::to_string(factors.size()) +
                        " factors for " + std::to_string(regular.columns.size()) + " channels");
  }
  if (std::find(factors.begin(), factors.end(), std::size_t{1}) == factors.end()) {
    throw ContractError("resample_practical: at least one channel must have sampling factor 1");
  }
  if (options.phase_offset >= regular.steps) {
    throw ContractError("resample_practical: phase offset beyond the record");
  }
  AsyncDataset ds;
  ds.base_len = regular.steps;
  ds.phase_offset = options.phase_offset;
  ds.splits = make_bounds(regular.steps, options.fractions);
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const std::size_t r = factors[i];
    if (r < 1) throw ContractError("resample_practical: sampling factor must be >= 1");
    const auto& col = regular.columns[i];
    if (col.size() != regular.steps) {
      throw ContractError("resample_practical: column " + std::to_string(i) + " has " +
                          std::to_string(col.size()) + " rows, expected " +
                          std::to_string(regular.steps));
    }
    ChannelSpec spec;
    spec.name = i < regular.names.size() ? regular.names[i] : "ch" + std::to_string(i);
    spec.sampling_factor = r;
    spec.index = i;
    ds.channels.push_back(spec);
    const std::size_t len = (regular.steps - options.phase_offset) / r;
    std::vector<double> vals(len);
    Mask obs(len);
    for (std::size_t k = 0; k < len; ++k) {
      const double v = col[k * r + options.phase_offset];
      obs[k] = std::isnan(v) ? 0 : 1;
      vals[k] = std::isnan(v) ? 0.0 : v;
    }
    ds.values.push_back(std::move(vals));
    ds.observed.push_back(std::move(obs));
  }
  ds.stats = compute_train_stats(ds);
  return ds;
}

double normalize_value(const NormStats& s, std::size_t channel, double raw) {
  return (raw - s.mean[channel]) / s.std[channel];
}

double denormalize_value(const NormStats& s, std::size_t channel, double z) {
  return z * s.std[channel] + s.mean[channel];
}

void check_window_alignment(std::size_t input_length, std::size_t horizon,
                            std::size_t max_factor) {
  if (input_length == 0 || horizon == 0 || input_length % max_factor != 0 ||
      horizon % max_factor != 0) {
    throw ConfigError("input length " + std::to_string(input_length) + " and horizon " +
                      std::to_string(horizon) + " must be positive multiples of " +
                      std::to_string(max_factor));
  }
}

std::vector<WindowSample> make_windows(const AsyncDataset& ds, Split split,
                                       const WindowOptions& options) {
  const std::size_t max_r = ds.max_factor();
  check_window_alignment(options.input_length, options.horizon, max_r);
  if (options.stride < 1) throw ConfigError("window stride must be >= 1");
  auto [begin, end] = ds.split_range(split);
  std::size_t stride = options.stride;
  std::size_t first = std::max(begin, ds.phase_offset);
  if (split == Split::test) {
    stride = max_r;
    first = (first + max_r - 1) / max_r * max_r;
  }
  const std::size_t L = options.input_length, H = options.horizon;
  std::vector<WindowSample> out;
  for (std::size_t o = first; o + L + H <= end; o += stride) {
    WindowSample w;
    w.origin = o;
    w.factors = ds.factors();
    bool ok = true;
    for (std::size_t i = 0; i < ds.num_channels() && ok; ++i) {
      const std::size_t r = ds.channels[i].sampling_factor;
      const std::size_t rel = o - ds.phase_offset;
      const std::size_t k0 = (rel + r - 1) / r;
      const std::size_t Li = L / r, Hi = H / r;
      if (k0 + Li + Hi > ds.values[i].size()) {
        ok = false;
        break;
      }
      ChannelWindow cw;
      cw.first_offset = ds.fine_time(i, k0) - o;
      cw.input.resize(Li);
      cw.observed.resize(Li);
      cw.target.resize(Hi);
      for (std::size_t k = 0; k < Li; ++k) {
        const bool obs = ds.observed[i][k0 + k] != 0;
        cw.observed[k] = obs ? 1 : 0;
        const double v = ds.values[i][k0 + k];
        cw.input[k] = !obs ? 0.0 : (options.normalize ? normalize_value(ds.stats, i, v) : v);
      }
      for (std::size_t k = 0; k < Hi; ++k) {
        if (!ds.observed[i][k0 + Li + k]) {
          ok = false;
          break;
        }
        const double v = ds.values[i][k0 + Li + k];
        cw.target[k] = options.normalize ? normalize_value(ds.stats, i, v) : v;
      }
      w.channels.push_back(std::move(cw));
    }
    if (ok) out.push_back(std::move(w));
  }
  return out;
}

const char* protocol_name(MissingProtocol p) {
  return p == MissingProtocol::patch_aligned ? "patch_aligned" : "short_range";
}

MissingProtocol parse_protocol(const std::string& s) {
  if (s == "patch_aligned") return MissingProtocol::patch_aligned;
  if (s == "short_range") return MissingProtocol::short_range;
  throw ConfigError("unknown missing protocol '" + s + "' (expected patch_aligned|short_range)");
}

namespace {

bool has_full_patch(const Mask& obs, const ChannelPatches& p) {
  for (std::size_t j = 0; j < p.count; ++j) {
    bool full = true;
    for (std::size_t t = p.patch_begin(j); t < p.patch_begin(j) + p.length; ++t)
      if (!obs[t]) {
        full = false;
        break;
      }
    if (full) return true;
  }
  return false;
}

std::size_t count_masked(const Mask& obs) {
  return static_cast<std::size_t>(std::count(obs.begin(), obs.end(), std::uint8_t{0}));
}

void mask_range(ChannelWindow& cw, std::size_t begin, std::size_t end) {
  for (std::size_t t = begin; t < end; ++t) {
    cw.observed[t] = 0;
    cw.input[t] = 0.0;
  }
}

}  // namespace

WindowSample inject_block_missing(const WindowSample& w, const PatchPlan& plan,
                                  const MissingOptions& options, std::uint64_t seed) {
  if (!(options.ratio >= 0.0 && options.ratio < 1.0)) {
    throw ContractError("inject_block_missing: ratio must lie in [0, 1)");
  }
  if (plan.num_channels() != w.num_channels()) {
    throw ContractError("inject_block_missing: patch plan has " +
                        std::to_string(plan.num_channels()) + " channels, window has " +
                        std::to_string(w.num_channels()));
  }
  WindowSample out = w;
  if (options.ratio == 0.0) return out;
  for (std::size_t i = 0; i < out.num_channels(); ++i) {
    auto& cw = out.channels[i];
    const auto& p = plan.channels[i];
    const std::size_t Li = cw.input.size();
    if (p.input_length() != Li) {
      throw ContractError("inject_block_missing: plan covers " +
                          std::to_string(p.input_length()) + " points, channel " +
                          std::to_string(i) + " has " + std::to_string(Li));
    }
    Rng rng(derive_seed(seed, {w.origin, i}));
    const double want = options.ratio * static_cast<double>(Li);

    if (options.protocol == MissingProtocol::patch_aligned) {
      const auto blocks = static_cast<std::size_t>(
          std::llround(want / static_cast<double>(p.length)));
      if (blocks >= p.count) {
        throw ContractError("inject_block_missing: ratio " + std::to_string(options.ratio) +
                            " would mask all " + std::to_string(p.count) +
                            " patches of channel " + std::to_string(i));
      }
      std::set<std::size_t> chosen;
      while (chosen.size() < blocks) chosen.insert(uniform_index(rng, p.count));
      for (std::size_t j : chosen) mask_range(cw, p.patch_begin(j), p.patch_begin(j) + p.length);
      continue;
    }

    if (want > static_cast<double>(Li - std::min(Li, p.length))) {
      throw ContractError("inject_block_missing: ratio " + std::to_string(options.ratio) +
                          " leaves less than one patch in channel " + std::to_string(i));
    }
    const std::size_t lo = std::min(options.min_block, Li);
    const std::size_t hi = std::max(lo, std::min(options.max_block, Li));
    std::size_t rejected = 0;
    while (static_cast<double>(count_masked(cw.observed)) < want) {
      const std::size_t len = lo + uniform_index(rng, hi - lo + 1);
      const std::size_t start = uniform_index(rng, Li - len + 1);
      Mask trial = cw.observed;
      std::fill(trial.begin() + static_cast<std::ptrdiff_t>(start),
                trial.begin() + static_cast<std::ptrdiff_t>(start + len), std::uint8_t{0});
      if (!has_full_patch(trial, p)) {
        if (++rejected > 10000) {
          throw ContractError("inject_block_missing: could not place blocks in channel " +
                              std::to_string(i) + " while keeping a full patch");
        }
        continue;
      }
      mask_range(cw, start, start + len);
    }
  }
  return out;
}

WindowSample truncate_input(const WindowSample& w, std::size_t shorter_length) {
  WindowSample out = w;
  for (std::size_t i = 0; i < out.num_channels(); ++i) {
    auto& cw = out.channels[i];
    const std::size_t r = out.factors[i];
    const std::size_t full = cw.input.size() * r;
    if (shorter_length > full) {
      throw ContractError("truncate_input: length " + std::to_string(shorter_length) +
                          " exceeds the window input of " + std::to_string(full));
    }
    const std::size_t vacant = full - shorter_length;
    for (std::size_t k = 0; k < cw.input.size(); ++k) {
      if (cw.first_offset + k * r < vacant) {
        cw.observed[k] = 0;
        cw.input[k] = 0.0;
      }
    }
  }
  return out;
}

const char* fill_name(FillMethod m) {
  switch (m) {
    case FillMethod::linear: return "linear";
    case FillMethod::forward: return "forward";
    case FillMethod::zero: return "zero";
  }
  return "?";
}

FillMethod parse_fill(const std::string& s) {
  if (s == "linear") return FillMethod::linear;
  if (s == "forward") return FillMethod::forward;
  if (s == "zero") return FillMethod::zero;
  throw ConfigError("unknown fill method '" + s + "' (expected linear|forward|zero)");
}

std::vector<double> fill_channel(std::span<const double> values,
                                 std::span<const std::uint8_t> observed, std::size_t factor,
                                 std::size_t first_offset, std::size_t fine_length,
                                 FillMethod method) {
  std::vector<std::size_t> pos;
  std::vector<double> val;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!observed[k]) continue;
    const std::size_t t = first_offset + k * factor;
    if (t >= fine_length) break;
    pos.push_back(t);
    val.push_back(values[k]);
  }
  if (pos.empty()) throw ContractError("fill_baseline: channel has no observed point");
  std::vector<double> out(fine_length, 0.0);
  if (method == FillMethod::zero) {
    for (std::size_t j = 0; j < pos.size(); ++j) out[pos[j]] = val[j];
    return out;
  }
  std::size_t j = 0;  // last observed position <= t, when one exists
  for (std::size_t t = 0; t < fine_length; ++t) {
    while (j + 1 < pos.size() && pos[j + 1] <= t) ++j;
    if (t <= pos.front()) {
      out[t] = val.front();
    } else if (method == FillMethod::forward || j + 1 >= pos.size()) {
      out[t] = val[j];
    } else {
      const double w = static_cast<double>(t - pos[j]) / static_cast<double>(pos[j + 1] - pos[j]);
      out[t] = (1.0 - w) * val[j] + w * val[j + 1];
    }
  }
  return out;
}

std::vector<std::vector<double>> fill_baseline(const WindowSample& w, FillMethod method) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < w.num_channels(); ++i) {
    const auto& cw = w.channels[i];
    const std::size_t r = w.factors[i];
    out.push_back(fill_channel(cw.input, cw.observed, r, cw.first_offset, cw.input.size() * r,
                               method));
  }
  return out;
}

DenseSeries synth_coupled_dense(std::size_t n_channels, std::size_t base_len, double coupling,
                                double noise_sd, std::uint64_t seed,
                                const SynthOptions& options) {
  if (!(coupling >= 0.0 && coupling <= 1.0)) {
    throw ContractError("synth_coupled: coupling must lie in [0, 1]");
  }
  if (n_channels == 0 || base_len == 0) throw ContractError("synth_coupled: empty dataset");
  Rng rng(derive_seed(seed, {0x5f17}));
  const double two_pi = 2.0 * std::numbers::pi;
  const std::size_t lag = n_channels > 1 ? options.lag : 0;
  const std::size_t ext = base_len + lag;

  std::vector<double> amps, phases;
  for (std::size_t k = 0; k < options.base_periods.size(); ++k) {
    amps.push_back(k == 0 ? 1.0 : 0.6);
    phases.push_back(two_pi * uniform01(rng));
  }
  // ch0 on the extended grid; index e corresponds to fine time e - lag.
  std::vector<double> base(ext);
  const double innov = noise_sd * std::sqrt(1.0 - options.noise_ar * options.noise_ar);
  double noise = noise_sd * standard_normal(rng);
  for (std::size_t e = 0; e < ext; ++e) {
    const double t = static_cast<double>(e) - static_cast<double>(lag);
    double v = 0.0;
    for (std::size_t k = 0; k < amps.size(); ++k)
      v += amps[k] * std::sin(two_pi * t / options.base_periods[k] + phases[k]);
    if (e > 0) noise = options.noise_ar * noise + innov * standard_normal(rng);
    base[e] = v + (noise_sd > 0.0 ? noise : 0.0);
  }

  DenseSeries d;
  d.steps = base_len;
  for (std::size_t c = 0; c < n_channels; ++c) {
    d.names.push_back("ch" + std::to_string(c));
    std::vector<double> col(base_len);
    if (c == 0) {
      for (std::size_t t = 0; t < base_len; ++t) col[t] = base[t + lag];
    } else {
      const double period = 30.0 + 14.0 * static_cast<double>(c);
      const double phase = two_pi * uniform01(rng);
      for (std::size_t t = 0; t < base_len; ++t) {
        const double own = std::sin(two_pi * static_cast<double>(t) / period + phase);
        col[t] = coupling * options.gain * base[t] + (1.0 - coupling) * own;
      }
    }
    d.columns.push_back(std::move(col));
  }
  return d;
}

AsyncDataset synth_coupled(std::size_t n_channels, std::size_t base_len,
                           std::span<const std::size_t> factors, double coupling,
                           double noise_sd, std::uint64_t seed, const SynthOptions& options) {
  if (factors.size() != n_channels) {
    throw ContractError("synth_coupled: need one sampling factor per channel");
  }
  auto dense = synth_coupled_dense(n_channels, base_len, coupling, noise_sd, seed, options);
  ResampleOptions ro;
  ro.fractions = options.fractions;
  auto ds = resample_practical(dense, factors, ro);
  ds.name = "synthetic";
  return ds;
}

}  // namespace ctf::data
