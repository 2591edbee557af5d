#pragma once
#include <array>
#include <string>
#include <vector>

#include "lcq/graph.hpp"
#include "lcq/tensor.hpp"
#include "lcq/tensor_io.hpp"

namespace lcq {

inline constexpr std::array<const char*, 6> kLayerNames = {"qproj", "kproj", "vproj",
                                                           "oproj", "fc1",   "fc2"};

// One pre-norm transformer block. The six linear layers are the quantization
// targets; the layer-norm parameters stay in full precision.
struct BlockWeights {
  Tensor qproj, kproj, vproj, oproj;  // dim x dim
  Tensor fc1;                         // dim x ff_dim
  Tensor fc2;                         // ff_dim x dim
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // dim
  std::size_t dim = 0, ff_dim = 0, heads = 1;

  const Tensor& layer(std::size_t i) const;
  Tensor& layer(std::size_t i);
};

struct BlockWeightIds {
  std::array<NodeId, 6> layers{};
  NodeId ln1_gain = -1, ln1_bias = -1, ln2_gain = -1, ln2_bias = -1;
  std::size_t dim = 0, ff_dim = 0, heads = 1;
};

// Bind a block's weights as constants into a graph.
BlockWeightIds bind_block_constants(Graph& g, const BlockWeights& w);

// y1 = x + Attn(LN1(x)); y = y1 + FFN(LN2(y1)). Multi-head attention is
// expressed with per-head column masks so the builder stays inside the core
// op set; FFN is GELU(x fc1) fc2.
NodeId append_block_forward(Graph& g, NodeId x, const BlockWeightIds& w);

// Plain evaluation. Graph-backed, so it is bit-identical to the in-graph
// forward used during optimization.
Tensor block_forward(const Tensor& x, const BlockWeights& w);

struct ModelSpec {
  std::size_t blocks = 2, dim = 64, ff_dim = 256, heads = 2;
  std::size_t samples = 16, seq_len = 64;
  std::uint64_t seed = 0;
};

struct GeneratedModel {
  ModelSpec spec;
  std::vector<BlockWeights> blocks;
  std::vector<Tensor> samples;  // raw calibration inputs, seq_len x dim
};

// Deterministic synthetic model + calibration set. Linear weights come from
// the heavy-tailed mixture 0.95 N(0, 0.02^2) + 0.05 N(0, 0.1^2) so that
// clip-search initialization has real work to do.
GeneratedModel gen_calibration(const ModelSpec& spec);

// The two propagated feature variants: fp saw only full-precision blocks,
// q saw only quantized blocks. Both start as the raw inputs.
struct CalibrationSet {
  std::vector<Tensor> fp;
  std::vector<Tensor> q;
};
CalibrationSet initial_calibration(const GeneratedModel& m);

std::vector<NamedTensor> model_to_tensors(const GeneratedModel& m);
GeneratedModel model_from_tensors(const std::vector<NamedTensor>& ts);
std::vector<NamedTensor> calib_to_tensors(const GeneratedModel& m);
std::vector<Tensor> calib_from_tensors(const std::vector<NamedTensor>& ts);

}  // namespace lcq
