#pragma once
#include <functional>
#include <vector>

#include "lcq/block.hpp"
#include "lcq/codebook.hpp"
#include "lcq/config.hpp"
#include "lcq/doubleq.hpp"
#include "lcq/rng.hpp"

namespace lcq {

// lr(t) = 0.5 * base * (1 + cos(pi * t / total)).
double cosine_lr(double base, std::size_t step, std::size_t total_steps);

// AdamW over a flat list of tensors. Weight decay is zero in this pipeline;
// frozen coordinates are masked out of the gradient before the moments see it.
class AdamW {
 public:
  explicit AdamW(const std::vector<Tensor*>& params, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);
  void step(const std::vector<Tensor>& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

BlockParams init_block_params(const BlockWeights& w, const QuantConfig& cfg, RngStream& rng);

// Quantized weights for all six layers from the current parameters.
std::array<Tensor, 6> quantize_block_weights(const BlockWeights& w, const BlockParams& p,
                                             const QuantConfig& cfg);

// Two-term block reconstruction loss over the given samples:
//   sum_i |h(xq_i, Wq) - h(xfp_i, W)|^2 + |h(xq_i, Wq) - h(xq_i, W)|^2
double block_loss(const std::vector<Tensor>& xq, const std::vector<Tensor>& xfp,
                  const BlockWeights& w, const BlockParams& p, const QuantConfig& cfg);

struct EpochStats {
  std::size_t epoch;
  double mean_loss;  // mean per-sample loss over the epoch
  double lr;         // rate applied at the epoch's last step
};

struct TrainResult {
  BlockParams params;
  std::vector<EpochStats> trace;
  double initial_loss = 0.0;  // full-set loss before training
  double final_loss = 0.0;    // full-set loss after training (before dq)
};

struct TrainOptions {
  // Freeze the rank-1 scale row, rank-1 QPS row, and all offsets.
  bool freeze_rank1_and_offset = false;
  // Invoked after every optimizer step with the current parameters.
  std::function<void(const BlockParams&, std::size_t step)> step_callback;
};

TrainResult optimize_block(const BlockWeights& w, const std::vector<Tensor>& xq,
                           const std::vector<Tensor>& xfp, const QuantConfig& cfg,
                           std::uint64_t block_index, const TrainOptions& opts = {});

struct BlockRecord {
  TrainResult train;
  DeployedBlock deployed;
  double deployed_loss = 0.0;  // full-set loss with the dq'd parameters
};

struct ModelQuantizeResult {
  std::vector<BlockRecord> blocks;
  CalibrationSet final_features;  // features after the last block
};

// Sequential whole-model pipeline: per block initialize, optimize, double
// quantize, then advance the fp features with the full-precision weights and
// the quantized features with the deployed quantized weights.
ModelQuantizeResult quantize_model(const GeneratedModel& m, const QuantConfig& cfg,
                                   const TrainOptions& opts = {});

// Gradient plumbing shared with the finite-difference suite: builds the full
// derivation + loss graph for one sample pair and returns the loss node plus
// the parameter leaves in a fixed order.
struct LossGraph {
  Graph graph;
  NodeId loss = -1;
  std::vector<NodeId> leaves;  // scales_u, qps_u, offset_u per subset in order
};
LossGraph build_loss_graph(const BlockWeights& w, const BlockParams& p,
                           const QuantConfig& cfg, const Tensor& xq,
                           const Tensor& target_fp, const Tensor& target_q);

// Flat views over a BlockParams in the same order build_loss_graph emits.
std::vector<Tensor*> param_tensors(BlockParams& p);
std::vector<const Tensor*> param_tensors(const BlockParams& p);

}  // namespace lcq
