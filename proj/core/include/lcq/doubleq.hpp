#pragma once
#include <cstdint>
#include <span>
#include <vector>

#include "lcq/block.hpp"
#include "lcq/codebook.hpp"
#include "lcq/config.hpp"

namespace lcq {

// One dq group of up to dq_group values: asymmetric uniform quantization with
// an integer zero code, so the representable set always contains exact zero.
// Reconstruction uses the binary16-rounded scale:
//   value = scale * (code - zero_code) / (2^bits - 1) * 2
struct DqGroupParams {
  std::uint16_t scale_half = 0;
  std::uint32_t zero_code = 0;
  double alpha = 1.0;  // grid point attaining the minimum error
};

struct DqRow {
  std::uint32_t bits = 8;
  std::uint32_t group = 16;
  std::uint32_t count = 0;
  std::vector<DqGroupParams> groups;   // ceil(count / group)
  std::vector<std::uint32_t> codes;    // count entries, each < 2^bits
};

// Exhaustive search over the shrink grid {1.00, 0.99, ..., 0.30} applied to
// [min, max] of the group; returns parameters and codes for one dq group.
struct DqGroupResult {
  DqGroupParams params;
  std::vector<std::uint32_t> codes;
  double error = 0.0;
};
DqGroupResult grid_search_dq(std::span<const double> values, std::uint32_t bits);

// Reconstruction of a single coded value.
double dq_decode(const DqGroupParams& p, std::uint32_t code, std::uint32_t bits);

// Quantize a full parameter row in dq groups; reconstruct a coded row.
DqRow dq_quantize_row(std::span<const double> values, std::uint32_t bits,
                      std::uint32_t group);
std::vector<double> dq_reconstruct(const DqRow& row);

// Deployment form of one subset after double quantization: every stored
// number is exactly representable in its storage encoding, and the derived
// codebook/index data are recomputed from the reconstructed parameters so
// that a file round trip reproduces the quantized weights bit for bit.
struct DeployedSubset {
  std::size_t group_count = 0;
  std::vector<std::uint16_t> s1_half;     // rank-1 scales as binary16
  std::vector<DqRow> s_rows;              // ranks 2..N_D at dq_bits_s
  std::vector<DqRow> v_rows;              // ranks 1..N_D at dq_bits_v
  std::vector<std::uint32_t> offset_index;  // position in the sorted pre-offset row
  std::vector<std::uint32_t> indices;       // quantization indices, group_count * G
  Tensor scales, qps;                     // reconstructed parameter values
  Tensor codebook;                        // final codebook (contains exact zero)
};

struct DeployedLayer {
  LayerGrouping grouping;
  std::vector<DeployedSubset> subsets;
  Tensor wq;  // quantized layer weights rebuilt from deployed parameters
};

struct DeployedBlock {
  std::array<DeployedLayer, 6> layers;
};

// Double-quantize a trained block: S rows >= 2 at dq_bits_s (searched first),
// then all V rows at dq_bits_v; rank-1 scales round to binary16. Offsets and
// indices are recomputed against the reconstructed codebook.
DeployedBlock apply_dq(const BlockWeights& w, const BlockParams& p, const QuantConfig& cfg);

}  // namespace lcq
