#pragma once

#include <cstddef>
#include <vector>

namespace ctf {

// Non-overlapping patch geometry of one channel's input slice: `dropped`
// oldest points are skipped, then `count` patches of `length` points.
struct ChannelPatches {
  std::size_t length = 1;
  std::size_t count = 1;
  std::size_t dropped = 0;

  std::size_t input_length() const { return length * count + dropped; }
  std::size_t patch_begin(std::size_t j) const { return dropped + j * length; }
  bool operator==(const ChannelPatches&) const = default;
};

struct PatchPlan {
  std::vector<ChannelPatches> channels;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t total_patches() const {
    std::size_t n = 0;
    for (const auto& c : channels) n += c.count;
    return n;
  }
  bool operator==(const PatchPlan&) const = default;
};

}  // namespace ctf
