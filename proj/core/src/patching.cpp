#include "ctf/patching.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctf/error.hpp"

namespace ctf {

TokenLayout::TokenLayout(std::vector<std::size_t> local_counts, std::size_t channel_tokens)
    : local_counts_(std::move(local_counts)), channel_tokens_(channel_tokens) {
  std::size_t pos = 0, flags = 0;
  for (std::size_t i = 0; i < local_counts_.size(); ++i) {
    begin_.push_back(pos);
    flag_begin_.push_back(flags);
    for (std::size_t j = 0; j < local_counts_[i]; ++j)
      info_.push_back({i, TokenKind::local, j});
    for (std::size_t c = 0; c < channel_tokens_; ++c)
      info_.push_back({i, TokenKind::channel, c});
    pos += local_counts_[i] + channel_tokens_;
    flags += local_counts_[i];
  }
  total_ = pos;
}

std::size_t TokenLayout::total_local() const {
  std::size_t n = 0;
  for (auto c : local_counts_) n += c;
  return n;
}

}  // namespace ctf

namespace ctf::patching {

ChannelPatches plan_channel(std::size_t input_length, std::size_t factor,
                            std::optional<std::size_t> dominant_bin,
                            const PlanOptions& options) {
  if (input_length == 0) throw ContractError("plan_channel: empty channel input");
  ChannelPatches p;
  if (input_length < 4) {
    p.length = input_length;
    p.count = 1;
    p.dropped = 0;
    return p;
  }
  const std::size_t hi = input_length / 2;
  std::size_t len;
  if (options.dynamic && dominant_bin && *dominant_bin > 0) {
    len = input_length / *dominant_bin;
  } else if (options.dynamic) {
    len = static_cast<std::size_t>(std::llround(static_cast<double>(options.base_patch_length) /
                                                static_cast<double>(std::max<std::size_t>(factor, 1))));
  } else {
    len = options.base_patch_length;
  }
  len = std::clamp<std::size_t>(len, 2, hi);
  p.length = len;
  p.count = input_length / len;
  p.dropped = input_length % len;
  return p;
}

PatchPlan plan_patches(const data::WindowSample& w, const PlanOptions& options) {
  PatchPlan plan;
  for (std::size_t i = 0; i < w.num_channels(); ++i) {
    const auto& in = w.channels[i].input;
    if (in.empty()) throw ContractError("plan_patches: channel " + std::to_string(i) + " is empty");
    std::optional<std::size_t> bin;
    if (options.dynamic && in.size() >= 4) bin = spectral::dominant_frequency(in, options.kappa);
    plan.channels.push_back(plan_channel(in.size(), w.factors[i], bin, options));
  }
  return plan;
}

PatchPlan plan_for_dataset(const data::AsyncDataset& ds, std::size_t input_length,
                           const PlanOptions& options) {
  data::WindowOptions wo;
  wo.input_length = input_length;
  wo.horizon = ds.max_factor();
  wo.stride = input_length;
  auto windows = data::make_windows(ds, data::Split::train, wo);
  if (windows.empty()) {
    throw ConfigError("plan_for_dataset: training split shorter than one input window");
  }
  PatchPlan plan;
  for (std::size_t i = 0; i < ds.num_channels(); ++i) {
    const std::size_t r = ds.channels[i].sampling_factor;
    const std::size_t Li = input_length / r;
    std::optional<std::size_t> bin;
    if (options.dynamic && Li >= 4) {
      std::vector<double> avg(Li / 2 + 1, 0.0);
      std::size_t used = 0;
      for (int pass = 0; pass < 2 && used == 0; ++pass) {
        for (const auto& w : windows) {
          const auto& cw = w.channels[i];
          const bool full = std::all_of(cw.observed.begin(), cw.observed.end(),
                                        [](std::uint8_t o) { return o != 0; });
          if (pass == 0 && !full) continue;
          auto s = spectral::amplitude_spectrum(spectral::zero_centered(cw.input));
          for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += s.amplitudes[k];
          ++used;
        }
      }
      spectral::AmplitudeSpectrum mean_spec;
      mean_spec.n = Li;
      mean_spec.amplitudes = std::move(avg);
      for (auto& a : mean_spec.amplitudes) a /= static_cast<double>(used);
      bin = spectral::dominant_bin(mean_spec, options.kappa);
    }
    plan.channels.push_back(plan_channel(Li, r, bin, options));
  }
  return plan;
}

Tensor positional_table(std::size_t max_patches, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw ContractError("positional_table: d must be even, got " + std::to_string(d));
  }
  std::vector<double> v(max_patches * d);
  for (std::size_t j = 0; j < max_patches; ++j) {
    for (std::size_t k = 0; k < d / 2; ++k) {
      const double angle = static_cast<double>(j) /
                           std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(d));
      v[j * d + 2 * k] = std::sin(angle);
      v[j * d + 2 * k + 1] = std::cos(angle);
    }
  }
  return Tensor({max_patches, d}, std::move(v));
}

std::vector<double> patch_matrix(const data::ChannelWindow& cw, const ChannelPatches& p) {
  std::vector<double> m(p.count * p.length);
  for (std::size_t j = 0; j < p.count; ++j)
    std::copy_n(cw.input.begin() + static_cast<std::ptrdiff_t>(p.patch_begin(j)), p.length,
                m.begin() + static_cast<std::ptrdiff_t>(j * p.length));
  return m;
}

std::vector<std::uint8_t> patch_observation(const data::WindowSample& w, const PatchPlan& plan) {
  std::vector<std::uint8_t> flags;
  for (std::size_t i = 0; i < w.num_channels(); ++i) {
    const auto& cw = w.channels[i];
    const auto& p = plan.channels[i];
    for (std::size_t j = 0; j < p.count; ++j) {
      bool any = false;
      for (std::size_t t = p.patch_begin(j); t < p.patch_begin(j) + p.length; ++t)
        any = any || cw.observed[t] != 0;
      flags.push_back(any ? 1 : 0);
    }
  }
  return flags;
}

Tokens tokenize(const data::WindowSample& w, const PatchPlan& plan, const EmbeddingBank& bank,
                bool use_channel_embedding) {
  if (plan.num_channels() != w.num_channels() ||
      bank.channel_tokens.size() != w.num_channels() ||
      bank.channel_embedding.size() != w.num_channels()) {
    throw ShapeError("tokenize: window, plan and embedding bank disagree on channel count");
  }
  const std::size_t d = bank.d_model;
  const std::size_t C = bank.channel_tokens.front().dim(0);
  std::vector<std::size_t> counts;
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < w.num_channels(); ++i) {
    const auto& p = plan.channels[i];
    const auto& cw = w.channels[i];
    if (p.input_length() != cw.input.size()) {
      throw ShapeError("tokenize: plan covers " + std::to_string(p.input_length()) +
                       " points but channel " + std::to_string(i) + " has " +
                       std::to_string(cw.input.size()));
    }
    auto proj = bank.projections.find(p.length);
    if (proj == bank.projections.end()) {
      throw ShapeError("tokenize: no patch projection for length " + std::to_string(p.length));
    }
    if (p.count > bank.positional.dim(0)) {
      throw ShapeError("tokenize: positional table too short for " + std::to_string(p.count) +
                       " patches");
    }
    counts.push_back(p.count);
    Tensor patches({p.count, p.length}, patch_matrix(cw, p));
    Tensor local = add_row(matmul(patches, proj->second.weight), proj->second.bias);
    local = add(local, slice(bank.positional, 0, 0, p.count));
    Tensor ctoks = bank.channel_tokens[i];
    if (use_channel_embedding) {
      local = add_row(local, bank.channel_embedding[i]);
      ctoks = add_row(ctoks, bank.channel_embedding[i]);
    }
    rows.push_back(local);
    rows.push_back(ctoks);
  }
  Tokens out;
  out.matrix = concat(rows, 0);
  out.layout = TokenLayout(counts, C);
  out.patch_observed = patch_observation(w, plan);
  if (out.matrix.dim(0) != out.layout.total() || out.matrix.dim(1) != d) {
    throw ShapeError("tokenize: token matrix " + shape_to_string(out.matrix.shape()) +
                     " does not match layout");
  }
  return out;
}

}  // namespace ctf::patching
