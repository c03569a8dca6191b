#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctf/tensor.hpp"
#include "ctf/token_layout.hpp"

namespace ctf::attnmask {

enum class MaskStrategy {
  CI_ReadOnly,
  CI_Mutual,
  CD_ReadOnly,
  CD_Mutual,
  CD_ReadOnly_Indexed,
  CD_Mutual_Indexed,
};

inline constexpr MaskStrategy kAllStrategies[] = {
    MaskStrategy::CI_ReadOnly,         MaskStrategy::CI_Mutual,
    MaskStrategy::CD_ReadOnly,         MaskStrategy::CD_Mutual,
    MaskStrategy::CD_ReadOnly_Indexed, MaskStrategy::CD_Mutual_Indexed,
};

std::string strategy_name(MaskStrategy s);
MaskStrategy parse_strategy(const std::string& s);

inline bool is_mutual(MaskStrategy s) {
  return s == MaskStrategy::CI_Mutual || s == MaskStrategy::CD_Mutual ||
         s == MaskStrategy::CD_Mutual_Indexed;
}
inline bool is_channel_dependent(MaskStrategy s) {
  return s != MaskStrategy::CI_ReadOnly && s != MaskStrategy::CI_Mutual;
}
inline bool is_indexed(MaskStrategy s) {
  return s == MaskStrategy::CD_ReadOnly_Indexed || s == MaskStrategy::CD_Mutual_Indexed;
}
// The channel-independent counterpart with the same read-only/mutual role.
MaskStrategy channel_independent(MaskStrategy s);

/// Query x key admissibility (row = query). Immutable once built.
class AttentionMask {
 public:
  AttentionMask(TokenLayout layout, std::vector<std::uint8_t> allowed,
                std::vector<std::uint8_t> effective_observed);

  std::size_t size() const { return layout_.total(); }
  bool allowed(std::size_t query, std::size_t key) const {
    return allowed_[query * size() + key] != 0;
  }
  const TokenLayout& layout() const { return layout_; }
  // Per-patch flags after combining observation and training-time dropout.
  const std::vector<std::uint8_t>& effective_observed() const { return effective_; }
  const AdditiveBias& bias() const { return bias_; }

 private:
  TokenLayout layout_;
  std::vector<std::uint8_t> allowed_;
  std::vector<std::uint8_t> effective_;
  AdditiveBias bias_;
};

// patch_observed / keep are per-patch flags in layout order (1 = observed /
// kept). A local token that is unobserved or dropped is hidden from every
// other token and attends only to itself; a channel token with no admissible
// key also falls back to itself.
AttentionMask build_mask(const TokenLayout& layout, MaskStrategy strategy,
                         std::span<const std::uint8_t> patch_observed,
                         std::optional<std::span<const std::uint8_t>> keep = std::nullopt);

// Training-time random patch masking: floor(t * P_i) distinct patches per
// channel are dropped (flag 0), always leaving one patch.
std::vector<std::uint8_t> sample_dropout_mask(const TokenLayout& layout, double ratio,
                                              std::uint64_t seed);

}  // namespace ctf::attnmask
