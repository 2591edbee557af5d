#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcq/config.hpp"
#include "lcq/doubleq.hpp"
#include "lcq/tensor.hpp"

namespace lcq {

// LSB-first bit packing: index j occupies bits [j*b, (j+1)*b) of the stream,
// low bit of each index in the lower position; the final byte is zero-padded.
std::vector<std::uint8_t> pack_indices(std::span<const std::uint32_t> indices,
                                       std::uint32_t bits);
std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes,
                                          std::size_t count, std::uint32_t bits);

// File value for the per-channel grouping sentinel.
inline constexpr std::uint32_t kChannelGroupsFile = 0xFFFFFFFFu;

struct ArtifactSubset {
  std::uint32_t group_count = 0;
  std::vector<std::uint16_t> s1_half;
  std::vector<DqRow> s_rows;  // ranks 2..N_D
  std::vector<DqRow> v_rows;  // ranks 1..N_D
  std::vector<std::uint32_t> offset_index;
  std::vector<std::uint32_t> indices;
};

struct ArtifactLayer {
  std::string name;
  std::uint32_t rows = 0, cols = 0;
  std::vector<ArtifactSubset> subsets;
};

// "LCQ1" container: header (config echo + layer shapes) followed by packed
// per-subset sections in fixed order: rank-1 scales as binary16, dq sections
// for higher scale rows, dq sections for QPS rows, offset indices packed at
// b bits, quantization indices packed at b bits. All section lengths are
// derivable from the header, so the payload carries no redundant counts.
struct QuantArtifact {
  QuantConfig config;  // bits/group_size/rank/groups_per_subset/dq_* are echoed
  std::vector<ArtifactLayer> layers;
};

std::vector<std::uint8_t> encode_artifact(const QuantArtifact& a);
QuantArtifact decode_artifact(std::span<const std::uint8_t> bytes);
void write_artifact(const std::string& path, const QuantArtifact& a);
QuantArtifact read_artifact(const std::string& path);

QuantArtifact artifact_from_deployed(const std::vector<DeployedBlock>& blocks,
                                     const QuantConfig& cfg);

// Exact stored-bits accounting. section_bytes mirrors the writer's section
// layout byte for byte (header and per-layer name/shape records excluded);
// ratio divides stored section bits by the 16-bit full-precision baseline.
struct RetentionReport {
  double ratio = 0.0;
  std::uint64_t section_bytes = 0;
  std::uint64_t weight_count = 0;
};
RetentionReport retention_rate(const QuantConfig& cfg,
                               const std::vector<std::pair<std::uint32_t, std::uint32_t>>& shapes);

// Byte length of everything before the first section of layer 0.
std::size_t artifact_header_bytes(const QuantArtifact& a);

// Rebuild the quantized weights of one layer from stored parameters only.
Tensor dequantize_layer(const QuantArtifact& a, std::size_t layer_index,
                        double epsilon = 1e-6);

}  // namespace lcq
