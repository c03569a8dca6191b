#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ctf {

enum class TokenKind { local, channel };

struct TokenInfo {
  std::size_t channel = 0;
  TokenKind kind = TokenKind::local;
  std::size_t index = 0;  // patch position, or channel-token index
};

// Token order [L(1); C(1); ...; L(N); C(N)], T = sum_i P_i + N*C.
class TokenLayout {
 public:
  TokenLayout() = default;
  TokenLayout(std::vector<std::size_t> local_counts, std::size_t channel_tokens);

  std::size_t num_channels() const { return local_counts_.size(); }
  std::size_t channel_tokens() const { return channel_tokens_; }
  std::size_t local_count(std::size_t channel) const { return local_counts_[channel]; }
  const std::vector<std::size_t>& local_counts() const { return local_counts_; }
  std::size_t total() const { return total_; }
  std::size_t total_local() const;

  std::size_t local_begin(std::size_t channel) const { return begin_[channel]; }
  std::size_t channel_token_begin(std::size_t channel) const {
    return begin_[channel] + local_counts_[channel];
  }
  std::size_t token_of_local(std::size_t channel, std::size_t j) const {
    return local_begin(channel) + j;
  }
  std::size_t token_of_channel_token(std::size_t channel, std::size_t c) const {
    return channel_token_begin(channel) + c;
  }
  // Offset of channel's first patch in a flattened per-patch flag vector.
  std::size_t flag_offset(std::size_t channel) const { return flag_begin_[channel]; }

  const TokenInfo& info(std::size_t token) const { return info_[token]; }

  bool operator==(const TokenLayout& o) const {
    return local_counts_ == o.local_counts_ && channel_tokens_ == o.channel_tokens_;
  }

 private:
  std::vector<std::size_t> local_counts_;
  std::size_t channel_tokens_ = 0;
  std::size_t total_ = 0;
  std::vector<std::size_t> begin_;
  std::vector<std::size_t> flag_begin_;
  std::vector<TokenInfo> info_;
};

}  // namespace ctf
