#include "ctf/attnmask.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "ctf/error.hpp"
#include "ctf/rng.hpp"

namespace ctf::attnmask {

std::string strategy_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::CI_ReadOnly: return "CI_ReadOnly";
    case MaskStrategy::CI_Mutual: return "CI_Mutual";
    case MaskStrategy::CD_ReadOnly: return "CD_ReadOnly";
    case MaskStrategy::CD_Mutual: return "CD_Mutual";
    case MaskStrategy::CD_ReadOnly_Indexed: return "CD_ReadOnly_Indexed";
    case MaskStrategy::CD_Mutual_Indexed: return "CD_Mutual_Indexed";
  }
  return "?";
}

MaskStrategy parse_strategy(const std::string& s) {
  std::string norm = s;
  std::replace(norm.begin(), norm.end(), '-', '_');
  for (auto strat : kAllStrategies) {
    std::string name = strategy_name(strat);
    if (std::equal(name.begin(), name.end(), norm.begin(), norm.end(),
                   [](char a, char b) { return std::tolower(a) == std::tolower(b); })) {
      return strat;
    }
  }
  throw ConfigError("unknown mask strategy '" + s + "'");
}

MaskStrategy channel_independent(MaskStrategy s) {
  return is_mutual(s) ? MaskStrategy::CI_Mutual : MaskStrategy::CI_ReadOnly;
}

AttentionMask::AttentionMask(TokenLayout layout, std::vector<std::uint8_t> allowed,
                             std::vector<std::uint8_t> effective_observed)
    : layout_(std::move(layout)),
      allowed_(std::move(allowed)),
      effective_(std::move(effective_observed)) {
  const std::size_t T = layout_.total();
  bias_.rows = T;
  bias_.cols = T;
  bias_.values.resize(T * T);
  for (std::size_t i = 0; i < T * T; ++i)
    bias_.values[i] = allowed_[i] ? 0.0 : AdditiveBias::kDisallowed;
}

AttentionMask build_mask(const TokenLayout& layout, MaskStrategy strategy,
                         std::span<const std::uint8_t> patch_observed,
                         std::optional<std::span<const std::uint8_t>> keep) {
  const std::size_t patches = layout.total_local();
  if (patch_observed.size() != patches) {
    throw ContractError("build_mask: " + std::to_string(patch_observed.size()) +
                        " observation flags for " + std::to_string(patches) + " patches");
  }
  if (keep && keep->size() != patches) {
    throw ContractError("build_mask: " + std::to_string(keep->size()) +
                        " dropout flags for " + std::to_string(patches) + " patches");
  }
  std::vector<std::uint8_t> effective(patches);
  for (std::size_t p = 0; p < patches; ++p)
    effective[p] = (patch_observed[p] && (!keep || (*keep)[p])) ? 1 : 0;

  const std::size_t T = layout.total();
  std::vector<std::uint8_t> allowed(T * T, 0);
  auto local_visible = [&](std::size_t channel, std::size_t j) {
    return effective[layout.flag_offset(channel) + j] != 0;
  };
  const bool mutual = is_mutual(strategy);
  const bool cross = is_channel_dependent(strategy);
  const bool indexed = is_indexed(strategy);

  for (std::size_t i = 0; i < layout.num_channels(); ++i) {
    const std::size_t P = layout.local_count(i);
    // Local queries: own channel's visible locals (+ own channel tokens when mutual).
    for (std::size_t j = 0; j < P; ++j) {
      const std::size_t q = layout.token_of_local(i, j);
      if (!local_visible(i, j)) {
        allowed[q * T + q] = 1;
        continue;
      }
      for (std::size_t jj = 0; jj < P; ++jj)
        if (local_visible(i, jj)) allowed[q * T + layout.token_of_local(i, jj)] = 1;
      if (mutual)
        for (std::size_t c = 0; c < layout.channel_tokens(); ++c)
          allowed[q * T + layout.token_of_channel_token(i, c)] = 1;
    }
    // Channel-token queries: own visible locals and, for CD strategies,
    // other channels' channel tokens.
    for (std::size_t c = 0; c < layout.channel_tokens(); ++c) {
      const std::size_t q = layout.token_of_channel_token(i, c);
      bool any = false;
      for (std::size_t j = 0; j < P; ++j)
        if (local_visible(i, j)) {
          allowed[q * T + layout.token_of_local(i, j)] = 1;
          any = true;
        }
      if (cross) {
        for (std::size_t o = 0; o < layout.num_channels(); ++o) {
          if (o == i) continue;
          for (std::size_t cc = 0; cc < layout.channel_tokens(); ++cc) {
            if (indexed && cc != c) continue;
            allowed[q * T + layout.token_of_channel_token(o, cc)] = 1;
            any = true;
          }
        }
      }
      if (!any) allowed[q * T + q] = 1;
    }
  }
  return AttentionMask(layout, std::move(allowed), std::move(effective));
}

std::vector<std::uint8_t> sample_dropout_mask(const TokenLayout& layout, double ratio,
                                              std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ContractError("sample_dropout_mask: ratio must lie in [0, 1)");
  }
  std::vector<std::uint8_t> keep(layout.total_local(), 1);
  if (ratio == 0.0) return keep;
  Rng rng(seed);
  for (std::size_t i = 0; i < layout.num_channels(); ++i) {
    const std::size_t P = layout.local_count(i);
    if (P <= 1) continue;
    std::size_t drop = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(P)));
    drop = std::min(drop, P - 1);
    // Partial Fisher-Yates: the first `drop` entries are a uniform sample.
    std::vector<std::size_t> idx(P);
    for (std::size_t j = 0; j < P; ++j) idx[j] = j;
    for (std::size_t j = 0; j < drop; ++j) {
      const std::size_t pick = j + uniform_index(rng, P - j);
      std::swap(idx[j], idx[pick]);
      keep[layout.flag_offset(i) + idx[j]] = 0;
    }
  }
  return keep;
}

}  // namespace ctf::attnmask
