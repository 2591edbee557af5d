#pragma once
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lcq/tensor.hpp"

namespace lcq {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
  Input,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  Transpose,
  Tanh,
  Softmax,     // last axis, row max subtracted before exponentiation
  LayerNorm,   // last axis, variance floor 1e-5 before the square root
  Gelu,        // tanh approximation
  Clip,
  ReduceSum,   // scalar
  SquaredNorm, // scalar sum of squares
  BroadcastRows,
  BroadcastCols,
  BroadcastFull,
  ConcatRows,
  Reshape,
  SortClamp,   // row-sort + epsilon gap clamp; permutation fixed per forward
  Quantize,    // grouped nearest-codeword; custom-gradient node
};

const char* op_name(Op op);

// Gradient semantics for the Quantize node's quantizee input.
//   Exact: the true local derivative (zero; the selected codeword does not
//          move with the quantized value). Finite-difference checks run here.
//   Ste:   straight-through estimator; passes the upstream gradient through
//          every segment whose normalized position lies in [0, 1]. Training
//          uses this so the offset parameters keep receiving updates.
// The codebook input always gets the exact local gradient (scatter into the
// selected codeword), which is what finite differences of the loss measure.
enum class GradMode { Exact, Ste };

// Flat record-per-node reverse-mode tape over Tensors. Nodes are appended in
// topological order and evaluated eagerly; recompute() replays the whole tape
// in declaration order after inputs are rebound, and backward() walks it in
// exact reverse order. Every forward result is checked for non-finite values.
class Graph {
 public:
  NodeId input(std::string name, Tensor value);
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId tanh(NodeId a);
  NodeId softmax(NodeId a);
  NodeId layer_norm(NodeId a);
  NodeId gelu(NodeId a);
  NodeId clip(NodeId a, double lo, double hi);
  NodeId reduce_sum(NodeId a);
  NodeId squared_norm(NodeId a);
  NodeId broadcast_rows(NodeId vec, std::size_t rows);
  NodeId broadcast_cols(NodeId vec, std::size_t cols);
  NodeId broadcast_full(NodeId scalar, std::vector<std::size_t> shape);
  NodeId concat_rows(const std::vector<NodeId>& parts);
  NodeId reshape(NodeId a, std::vector<std::size_t> shape);

  // codebook: n_rows x n_q. Output: same shape, rows ascending, gaps >= eps.
  NodeId sort_clamp(NodeId codebook, double eps);
  // values flat-grouped by group_size; codebook must be a SortClamp node with
  // one row per group. Output holds the selected codeword per element.
  NodeId quantize(NodeId values, NodeId sorted_codebook, std::size_t group_size);

  void mark_output(NodeId id, std::string name);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  Op op(NodeId id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  void set_input(const std::string& name, Tensor value);
  void set_input(NodeId id, Tensor value);
  // Re-evaluates every node in declaration order (forward_eval).
  void recompute();
  std::map<std::string, Tensor> outputs() const;

  // d(loss)/d(leaf) for each requested leaf. loss must be scalar and each
  // wrt id must be an Input node.
  std::vector<Tensor> backward(NodeId loss, std::span<const NodeId> wrt,
                               GradMode mode = GradMode::Exact) const;

  // Quantize-node introspection: selected sorted positions per element.
  const std::vector<std::uint32_t>& quantize_indices(NodeId id) const;
  // Sort permutation per row (sorted position -> original column).
  const std::vector<std::uint32_t>& sort_permutation(NodeId id) const;

  // Smallest distance of any quantize-node normalized position to 1/2 and
  // smallest raw sort gap across SortClamp rows. Used to certify that a
  // parameter point is safely away from selection boundaries before running
  // finite-difference checks.
  double min_selection_margin() const;
  double min_sort_gap() const;

 private:
  struct Node {
    Op op = Op::Constant;
    NodeId a = -1;
    NodeId b = -1;
    std::vector<NodeId> extra;  // ConcatRows parts
    Tensor value;
    std::string name;           // Input / marked output
    double lo = 0.0, hi = 0.0;  // Clip bounds / SortClamp eps
    std::size_t group_size = 0;
    // Quantize scratch (rebuilt per forward):
    std::vector<std::uint32_t> indices;
    std::vector<std::uint8_t> cover;  // segments with position in [0,1]
    double sel_margin = 0.0;
    // SortClamp scratch:
    std::vector<std::uint32_t> perm;
    double raw_gap_min = 0.0;
  };

  NodeId push(Node n);
  void eval(Node& n) const;
  const Node& at(NodeId id) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> inputs_by_name_;
  std::vector<std::pair<std::string, NodeId>> outputs_;
};

// forward_eval over a graph: bind named inputs, replay, collect marked
// outputs. Identical inputs produce bit-identical outputs.
std::map<std::string, Tensor> forward_eval(Graph& g, const std::map<std::string, Tensor>& inputs);

// A scalar function together with its claimed analytic gradient.
struct ScalarField {
  std::function<double(const Tensor&)> value;
  std::function<Tensor(const Tensor&)> gradient;
};

// Max over coordinates of |analytic - central difference| /
// max(|analytic|, |central|, 1e-12). The caller keeps the point at least
// 10*step away from quantization selection boundaries.
double finite_diff_check(const ScalarField& f, const Tensor& point, double step);

}  // namespace lcq
