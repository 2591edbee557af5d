#pragma once
#include <cstdint>

#include "lcq/errors.hpp"

namespace lcq {

// group_size sentinel: one group per output channel (row) of the layer.
inline constexpr std::uint32_t kChannelGroups = 0;

struct QuantConfig {
  std::uint32_t bits = 2;
  std::uint32_t group_size = 8;
  std::uint32_t rank = 2;                // codebook rank
  std::uint32_t groups_per_subset = 32;  // groups sharing one QPS matrix
  double epsilon = 1e-6;                 // degenerate-gap clamp
  std::uint32_t dq_bits_s = 4;
  std::uint32_t dq_bits_v = 8;
  std::uint32_t dq_group = 16;
  std::uint32_t epochs = 10;
  std::uint32_t batch = 4;
  double lr = 0.01;
  std::uint64_t seed = 0;

  std::uint32_t levels() const { return 1u << bits; }

  std::uint32_t effective_group_size(std::size_t cols) const {
    return group_size == kChannelGroups ? static_cast<std::uint32_t>(cols) : group_size;
  }

  void validate() const {
    if (bits < 2 || bits > 8) throw ShapeError("config: bits must be in [2, 8]");
    if (rank < 1) throw ShapeError("config: rank must be at least 1");
    if (groups_per_subset < 1) throw ShapeError("config: groups_per_subset must be positive");
    if (!(epsilon > 0.0)) throw ShapeError("config: epsilon must be positive");
    if (dq_bits_s < 2 || dq_bits_s > 8) throw ShapeError("config: dq_bits_s must be in [2, 8]");
    if (dq_bits_v < 2 || dq_bits_v > 8) throw ShapeError("config: dq_bits_v must be in [2, 8]");
    if (dq_group < 1) throw ShapeError("config: dq_group must be positive");
    if (batch < 1) throw ShapeError("config: batch must be positive");
    if (!(lr >= 0.0)) throw ShapeError("config: learning rate must be non-negative");
  }
};

}  // namespace lcq
