#include "lcq/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lcq/quantizer.hpp"

namespace lcq {

namespace {
constexpr double kLayerNormFloor = 1e-5;
constexpr double kGeluCoeff = 0.044715;
const double kGeluScale = std::sqrt(2.0 / 3.14159265358979323846);
}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "subtract";
    case Op::Mul: return "multiply";
    case Op::Transpose: return "transpose";
    case Op::Tanh: return "tanh";
    case Op::Softmax: return "softmax";
    case Op::LayerNorm: return "layer-norm";
    case Op::Gelu: return "gelu";
    case Op::Clip: return "clip";
    case Op::ReduceSum: return "reduce-sum";
    case Op::SquaredNorm: return "squared-norm";
    case Op::BroadcastRows: return "broadcast-rows";
    case Op::BroadcastCols: return "broadcast-cols";
    case Op::BroadcastFull: return "broadcast-full";
    case Op::ConcatRows: return "concat-rows";
    case Op::Reshape: return "reshape";
    case Op::SortClamp: return "sort-clamp";
    case Op::Quantize: return "quantize";
  }
  return "?";
}

const Graph::Node& Graph::at(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw ShapeError("invalid node id");
  return nodes_[id];
}

NodeId Graph::push(Node n) {
  eval(n);
  const NodeId id = static_cast<NodeId>(nodes_.size());
  if (!n.value.all_finite())
    throw NumericError("non-finite output at node #" + std::to_string(id) + " (" +
                       op_name(n.op) + (n.name.empty() ? "" : ", " + n.name) + ")");
  nodes_.push_back(std::move(n));
  return id;
}

NodeId Graph::input(std::string name, Tensor value) {
  if (inputs_by_name_.count(name)) throw ShapeError("duplicate input name: " + name);
  Node n;
  n.op = Op::Input;
  n.name = name;
  n.value = std::move(value);
  const NodeId id = push(std::move(n));
  inputs_by_name_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = at(a).value;
  const Tensor& tb = at(b).value;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape) + " x " +
                     shape_str(tb.shape));
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  if (!at(a).value.same_shape(at(b).value)) throw ShapeError("add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  if (!at(a).value.same_shape(at(b).value)) throw ShapeError("subtract: shape mismatch");
  Node n;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  if (!at(a).value.same_shape(at(b).value)) throw ShapeError("multiply: shape mismatch");
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
  if (at(a).value.rank() != 2) throw ShapeError("transpose: tensor is not 2-D");
  Node n;
  n.op = Op::Transpose;
  n.a = a;
  return push(std::move(n));
}

NodeId Graph::tanh(NodeId a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a;
  return push(std::move(n));
}

NodeId Graph::softmax(NodeId a) {
  Node n;
  n.op = Op::Softmax;
  n.a = a;
  return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId a) {
  Node n;
  n.op = Op::LayerNorm;
  n.a = a;
  return push(std::move(n));
}

NodeId Graph::gelu(NodeId a) {
  Node n;
  n.op = Op::Gelu;
  n.a = a;
  return push(std::move(n));
}

NodeId Graph::clip(NodeId a, double lo, double hi) {
  if (!(lo <= hi)) throw ShapeError("clip: lo must not exceed hi");
  Node n;
  n.op = Op::Clip;
  n.a = a;
  n.lo = lo;
  n.hi = hi;
  return push(std::move(n));
}

NodeId Graph::reduce_sum(NodeId a) {
  Node n;
  n.op = Op::ReduceSum;
  n.a = a;
  return push(std::move(n));
}

NodeId Graph::squared_norm(NodeId a) {
  Node n;
  n.op = Op::SquaredNorm;
  n.a = a;
  return push(std::move(n));
}

NodeId Graph::broadcast_rows(NodeId vec, std::size_t rows) {
  if (at(vec).value.rank() != 1) throw ShapeError("broadcast-rows: expected 1-D input");
  Node n;
  n.op = Op::BroadcastRows;
  n.a = vec;
  n.group_size = rows;
  return push(std::move(n));
}

NodeId Graph::broadcast_cols(NodeId vec, std::size_t cols) {
  if (at(vec).value.rank() != 1) throw ShapeError("broadcast-cols: expected 1-D input");
  Node n;
  n.op = Op::BroadcastCols;
  n.a = vec;
  n.group_size = cols;
  return push(std::move(n));
}

NodeId Graph::broadcast_full(NodeId scalar, std::vector<std::size_t> shape) {
  if (at(scalar).value.numel() != 1) throw ShapeError("broadcast-full: expected scalar input");
  Node n;
  n.op = Op::BroadcastFull;
  n.a = scalar;
  n.value = Tensor(shape);  // shape carrier; eval fills it
  return push(std::move(n));
}

NodeId Graph::concat_rows(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ShapeError("concat-rows: no parts");
  const std::size_t cols = at(parts[0]).value.cols();
  for (NodeId p : parts)
    if (at(p).value.cols() != cols || at(p).value.rank() != 2)
      throw ShapeError("concat-rows: parts must be 2-D with equal column counts");
  Node n;
  n.op = Op::ConcatRows;
  n.extra = parts;
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, std::vector<std::size_t> shape) {
  if (shape_numel(shape) != at(a).value.numel())
    throw ShapeError("reshape: element count mismatch");
  Node n;
  n.op = Op::Reshape;
  n.a = a;
  n.value = Tensor(shape);
  return push(std::move(n));
}

NodeId Graph::sort_clamp(NodeId codebook, double eps) {
  if (at(codebook).value.rank() != 2) throw ShapeError("sort-clamp: codebook must be 2-D");
  if (!(eps > 0.0)) throw ShapeError("sort-clamp: eps must be positive");
  Node n;
  n.op = Op::SortClamp;
  n.a = codebook;
  n.lo = eps;
  return push(std::move(n));
}

NodeId Graph::quantize(NodeId values, NodeId sorted_codebook, std::size_t group_size) {
  if (at(sorted_codebook).op != Op::SortClamp)
    throw ShapeError("quantize: codebook input must be a sort-clamp node");
  const std::size_t n = at(values).value.numel();
  if (group_size == 0 || n % group_size != 0)
    throw ShapeError("quantize: element count not divisible by group size");
  if (n / group_size != at(sorted_codebook).value.rows())
    throw ShapeError("quantize: group count does not match codebook rows");
  Node n_;
  n_.op = Op::Quantize;
  n_.a = values;
  n_.b = sorted_codebook;
  n_.group_size = group_size;
  return push(std::move(n_));
}

void Graph::eval(Node& n) const {
  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      break;
    case Op::MatMul: {
      const Tensor& a = nodes_[n.a].value;
      const Tensor& b = nodes_[n.b].value;
      const std::size_t m = a.shape[0], k = a.shape[1], c = b.shape[1];
      Tensor out({m, c});
      for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data.data() + i * c;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av = a.data[i * k + kk];
          const double* brow = b.data.data() + kk * c;
          for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
        }
      }
      n.value = std::move(out);
      break;
    }
    case Op::Add: {
      const Tensor& a = nodes_[n.a].value;
      const Tensor& b = nodes_[n.b].value;
      n.value = Tensor(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i) n.value.data[i] = a.data[i] + b.data[i];
      break;
    }
    case Op::Sub: {
      const Tensor& a = nodes_[n.a].value;
      const Tensor& b = nodes_[n.b].value;
      n.value = Tensor(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i) n.value.data[i] = a.data[i] - b.data[i];
      break;
    }
    case Op::Mul: {
      const Tensor& a = nodes_[n.a].value;
      const Tensor& b = nodes_[n.b].value;
      n.value = Tensor(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i) n.value.data[i] = a.data[i] * b.data[i];
      break;
    }
    case Op::Transpose: {
      const Tensor& a = nodes_[n.a].value;
      const std::size_t r = a.shape[0], c = a.shape[1];
      Tensor out({c, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = a.data[i * c + j];
      n.value = std::move(out);
      break;
    }
    case Op::Tanh: {
      const Tensor& a = nodes_[n.a].value;
      n.value = Tensor(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i) n.value.data[i] = std::tanh(a.data[i]);
      break;
    }
    case Op::Softmax: {
      const Tensor& a = nodes_[n.a].value;
      const std::size_t rows = a.rows(), cols = a.cols();
      n.value = Tensor(a.shape);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.data.data() + i * cols;
        double* y = n.value.data.data() + i * cols;
        double mx = x[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          y[j] = std::exp(x[j] - mx);
          sum += y[j];
        }
        for (std::size_t j = 0; j < cols; ++j) y[j] /= sum;
      }
      break;
    }
    case Op::LayerNorm: {
      const Tensor& a = nodes_[n.a].value;
      const std::size_t rows = a.rows(), cols = a.cols();
      n.value = Tensor(a.shape);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.data.data() + i * cols;
        double* y = n.value.data.data() + i * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += x[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + kLayerNormFloor);
        for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * inv;
      }
      break;
    }
    case Op::Gelu: {
      const Tensor& a = nodes_[n.a].value;
      n.value = Tensor(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const double x = a.data[i];
        const double u = kGeluScale * (x + kGeluCoeff * x * x * x);
        n.value.data[i] = 0.5 * x * (1.0 + std::tanh(u));
      }
      break;
    }
    case Op::Clip: {
      const Tensor& a = nodes_[n.a].value;
      n.value = Tensor(a.shape);
      for (std::size_t i = 0; i < a.numel(); ++i)
        n.value.data[i] = std::min(std::max(a.data[i], n.lo), n.hi);
      break;
    }
    case Op::ReduceSum: {
      const Tensor& a = nodes_[n.a].value;
      double s = 0.0;
      for (double v : a.data) s += v;
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::SquaredNorm: {
      const Tensor& a = nodes_[n.a].value;
      double s = 0.0;
      for (double v : a.data) s += v * v;
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::BroadcastRows: {
      const Tensor& v = nodes_[n.a].value;
      const std::size_t rows = n.group_size, cols = v.numel();
      n.value = Tensor({rows, cols});
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) n.value.data[i * cols + j] = v.data[j];
      break;
    }
    case Op::BroadcastCols: {
      const Tensor& v = nodes_[n.a].value;
      const std::size_t rows = v.numel(), cols = n.group_size;
      n.value = Tensor({rows, cols});
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) n.value.data[i * cols + j] = v.data[i];
      break;
    }
    case Op::BroadcastFull: {
      const Tensor& v = nodes_[n.a].value;
      const auto shape = n.value.shape;
      n.value = Tensor::full(shape, v.data[0]);
      break;
    }
    case Op::ConcatRows: {
      std::size_t rows = 0;
      const std::size_t cols = nodes_[n.extra[0]].value.cols();
      for (NodeId p : n.extra) rows += nodes_[p].value.rows();
      Tensor out({rows, cols});
      std::size_t off = 0;
      for (NodeId p : n.extra) {
        const Tensor& t = nodes_[p].value;
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
        off += t.numel();
      }
      n.value = std::move(out);
      break;
    }
    case Op::Reshape: {
      const auto shape = n.value.shape;
      n.value = Tensor(shape);
      n.value.data = nodes_[n.a].value.data;
      break;
    }
    case Op::SortClamp: {
      const Tensor& a = nodes_[n.a].value;
      const std::size_t rows = a.rows(), n_q = a.cols();
      n.value = Tensor(a.shape);
      n.perm.resize(rows * n_q);
      n.raw_gap_min = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < rows; ++i) {
        double gap = 0.0;
        sort_clamp_row({a.data.data() + i * n_q, n_q}, n.lo,
                       {n.value.data.data() + i * n_q, n_q}, {n.perm.data() + i * n_q, n_q},
                       &gap);
        n.raw_gap_min = std::min(n.raw_gap_min, gap);
      }
      break;
    }
    case Op::Quantize: {
      const Tensor& w = nodes_[n.a].value;
      SortedCodebook cb;
      cb.n_q = nodes_[n.b].value.cols();
      cb.values = nodes_[n.b].value.data;
      cb.perm.assign(cb.values.size(), 0);  // unused by the kernel
      QuantizeResult q = quantize_segmented(w, cb, n.group_size);
      n.value = std::move(q.values);
      n.indices = std::move(q.indices);
      n.cover = std::move(q.cover);
      n.sel_margin = q.sel_margin;
      break;
    }
  }
}

void Graph::mark_output(NodeId id, std::string name) {
  at(id);
  outputs_.emplace_back(std::move(name), id);
}

void Graph::set_input(const std::string& name, Tensor value) {
  const auto it = inputs_by_name_.find(name);
  if (it == inputs_by_name_.end()) throw ShapeError("no input named " + name);
  set_input(it->second, std::move(value));
}

void Graph::set_input(NodeId id, Tensor value) {
  Node& n = nodes_[id];
  if (n.op != Op::Input) throw ShapeError("set_input: node is not an input");
  if (!n.value.same_shape(value)) throw ShapeError("set_input: shape mismatch");
  n.value = std::move(value);
}

void Graph::recompute() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::Input || n.op == Op::Constant) continue;
    eval(n);
    if (!n.value.all_finite())
      throw NumericError("non-finite output at node #" + std::to_string(i) + " (" +
                         op_name(n.op) + ")");
  }
}

std::map<std::string, Tensor> Graph::outputs() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : outputs_) out[name] = nodes_[id].value;
  return out;
}

std::vector<Tensor> Graph::backward(NodeId loss, std::span<const NodeId> wrt,
                                    GradMode mode) const {
  const Node& ln = at(loss);
  if (ln.value.numel() != 1) throw ShapeError("backward: loss node is not scalar");
  for (NodeId id : wrt)
    if (at(id).op != Op::Input)
      throw ShapeError("backward: gradient requested for a non-leaf node");

  // Only nodes on a path from a requested leaf need adjoints.
  std::vector<char> needed(nodes_.size(), 0);
  for (NodeId id : wrt) needed[id] = 1;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    const auto arg_needed = [&](NodeId a) { return a >= 0 && needed[a]; };
    bool need = arg_needed(n.a) || arg_needed(n.b);
    for (NodeId p : n.extra) need = need || arg_needed(p);
    if (need) needed[i] = 1;
  }

  std::vector<Tensor> adj(nodes_.size());
  const auto ensure = [&](NodeId id) -> Tensor& {
    if (adj[id].numel() == 0) adj[id] = Tensor(nodes_[id].value.shape);
    return adj[id];
  };
  if (!needed[loss]) {
    // Loss does not depend on any requested leaf: all gradients are zero.
    std::vector<Tensor> out;
    for (NodeId id : wrt) out.push_back(Tensor(nodes_[id].value.shape));
    return out;
  }
  ensure(loss).data[0] = 1.0;

  for (NodeId i = loss; i >= 0; --i) {
    if (!needed[i] || adj[i].numel() == 0) continue;
    const Node& n = nodes_[i];
    const Tensor& u = adj[i];
    const auto want = [&](NodeId a) { return a >= 0 && needed[a]; };
    switch (n.op) {
      case Op::Input:
      case Op::Constant:
        break;
      case Op::MatMul: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        const std::size_t m = a.shape[0], k = a.shape[1], c = b.shape[1];
        if (want(n.a)) {
          Tensor& ga = ensure(n.a);
          for (std::size_t i2 = 0; i2 < m; ++i2)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double s = 0.0;
              const double* urow = u.data.data() + i2 * c;
              const double* brow = b.data.data() + kk * c;
              for (std::size_t j = 0; j < c; ++j) s += urow[j] * brow[j];
              ga.data[i2 * k + kk] += s;
            }
        }
        if (want(n.b)) {
          Tensor& gb = ensure(n.b);
          for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t i2 = 0; i2 < m; ++i2) {
              const double av = a.data[i2 * k + kk];
              const double* urow = u.data.data() + i2 * c;
              double* grow = gb.data.data() + kk * c;
              for (std::size_t j = 0; j < c; ++j) grow[j] += av * urow[j];
            }
        }
        break;
      }
      case Op::Add: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          for (std::size_t e = 0; e < u.numel(); ++e) g.data[e] += u.data[e];
        }
        if (want(n.b)) {
          Tensor& g = ensure(n.b);
          for (std::size_t e = 0; e < u.numel(); ++e) g.data[e] += u.data[e];
        }
        break;
      }
      case Op::Sub: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          for (std::size_t e = 0; e < u.numel(); ++e) g.data[e] += u.data[e];
        }
        if (want(n.b)) {
          Tensor& g = ensure(n.b);
          for (std::size_t e = 0; e < u.numel(); ++e) g.data[e] -= u.data[e];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          for (std::size_t e = 0; e < u.numel(); ++e) g.data[e] += u.data[e] * b.data[e];
        }
        if (want(n.b)) {
          Tensor& g = ensure(n.b);
          for (std::size_t e = 0; e < u.numel(); ++e) g.data[e] += u.data[e] * a.data[e];
        }
        break;
      }
      case Op::Transpose: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const std::size_t r = nodes_[n.a].value.shape[0], c = nodes_[n.a].value.shape[1];
          for (std::size_t i2 = 0; i2 < r; ++i2)
            for (std::size_t j = 0; j < c; ++j) g.data[i2 * c + j] += u.data[j * r + i2];
        }
        break;
      }
      case Op::Tanh: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          for (std::size_t e = 0; e < u.numel(); ++e) {
            const double t = n.value.data[e];
            g.data[e] += u.data[e] * (1.0 - t * t);
          }
        }
        break;
      }
      case Op::Softmax: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const std::size_t rows = n.value.rows(), cols = n.value.cols();
          for (std::size_t i2 = 0; i2 < rows; ++i2) {
            const double* y = n.value.data.data() + i2 * cols;
            const double* ur = u.data.data() + i2 * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += ur[j] * y[j];
            for (std::size_t j = 0; j < cols; ++j) g.data[i2 * cols + j] += y[j] * (ur[j] - dot);
          }
        }
        break;
      }
      case Op::LayerNorm: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const Tensor& x = nodes_[n.a].value;
          const std::size_t rows = x.rows(), cols = x.cols();
          const double inv_n = 1.0 / static_cast<double>(cols);
          for (std::size_t i2 = 0; i2 < rows; ++i2) {
            const double* xr = x.data.data() + i2 * cols;
            const double* ur = u.data.data() + i2 * cols;
            double mean = 0.0;
            for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
            mean *= inv_n;
            double var = 0.0;
            for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
            var *= inv_n;
            const double s = 1.0 / std::sqrt(var + kLayerNormFloor);
            double su = 0.0, sud = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              su += ur[j];
              sud += ur[j] * (xr[j] - mean);
            }
            for (std::size_t j = 0; j < cols; ++j) {
              const double d = xr[j] - mean;
              g.data[i2 * cols + j] += s * (ur[j] - su * inv_n - d * s * s * sud * inv_n);
            }
          }
        }
        break;
      }
      case Op::Gelu: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const Tensor& x = nodes_[n.a].value;
          for (std::size_t e = 0; e < u.numel(); ++e) {
            const double xv = x.data[e];
            const double uu = kGeluScale * (xv + kGeluCoeff * xv * xv * xv);
            const double t = std::tanh(uu);
            const double du = kGeluScale * (1.0 + 3.0 * kGeluCoeff * xv * xv);
            g.data[e] += u.data[e] * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du);
          }
        }
        break;
      }
      case Op::Clip: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const Tensor& x = nodes_[n.a].value;
          for (std::size_t e = 0; e < u.numel(); ++e)
            if (x.data[e] >= n.lo && x.data[e] <= n.hi) g.data[e] += u.data[e];
        }
        break;
      }
      case Op::ReduceSum: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          for (std::size_t e = 0; e < g.numel(); ++e) g.data[e] += u.data[0];
        }
        break;
      }
      case Op::SquaredNorm: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const Tensor& x = nodes_[n.a].value;
          for (std::size_t e = 0; e < g.numel(); ++e) g.data[e] += 2.0 * x.data[e] * u.data[0];
        }
        break;
      }
      case Op::BroadcastRows: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const std::size_t rows = n.value.rows(), cols = n.value.cols();
          for (std::size_t i2 = 0; i2 < rows; ++i2)
            for (std::size_t j = 0; j < cols; ++j) g.data[j] += u.data[i2 * cols + j];
        }
        break;
      }
      case Op::BroadcastCols: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const std::size_t rows = n.value.rows(), cols = n.value.cols();
          for (std::size_t i2 = 0; i2 < rows; ++i2)
            for (std::size_t j = 0; j < cols; ++j) g.data[i2] += u.data[i2 * cols + j];
        }
        break;
      }
      case Op::BroadcastFull: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          double s = 0.0;
          for (double v : u.data) s += v;
          g.data[0] += s;
        }
        break;
      }
      case Op::ConcatRows: {
        std::size_t off = 0;
        for (NodeId p : n.extra) {
          const std::size_t cnt = nodes_[p].value.numel();
          if (want(p)) {
            Tensor& g = ensure(p);
            for (std::size_t e = 0; e < cnt; ++e) g.data[e] += u.data[off + e];
          }
          off += cnt;
        }
        break;
      }
      case Op::Reshape: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          for (std::size_t e = 0; e < u.numel(); ++e) g.data[e] += u.data[e];
        }
        break;
      }
      case Op::SortClamp: {
        if (want(n.a)) {
          Tensor& g = ensure(n.a);
          const Tensor& raw = nodes_[n.a].value;
          const std::size_t rows = raw.rows(), n_q = raw.cols();
          for (std::size_t i2 = 0; i2 < rows; ++i2) {
            const double* ur = u.data.data() + i2 * n_q;
            const std::uint32_t* pm = n.perm.data() + i2 * n_q;
            const double* rr = raw.data.data() + i2 * n_q;
            const double* ov = n.value.data.data() + i2 * n_q;
            // A clamped output tracks its lower neighbour, so its adjoint
            // flows downward until a raw-valued position absorbs it.
            double carry = 0.0;
            for (std::size_t m = n_q; m-- > 0;) {
              const double t = ur[m] + carry;
              const bool raw_branch = (m == 0) || !(rr[pm[m]] < ov[m - 1] + n.lo);
              if (raw_branch) {
                g.data[i2 * n_q + pm[m]] += t;
                carry = 0.0;
              } else {
                carry = t;
              }
            }
          }
        }
        break;
      }
      case Op::Quantize: {
        // Codebook path. Exact mode: the true local derivative, upstream
        // lands on the selected codeword only. Ste mode: the chain-rule
        // gradient of the sum-of-segments form with the straight-through
        // step, which adds boundary terms from the active segment(s).
        if (want(n.b)) {
          Tensor& g = ensure(n.b);
          const Tensor& cb = nodes_[n.b].value;
          const Tensor& wv = nodes_[n.a].value;
          const std::size_t n_q = cb.cols();
          for (std::size_t e = 0; e < u.numel(); ++e) {
            const std::size_t row = (e / n.group_size) * n_q;
            g.data[row + n.indices[e]] += u.data[e];
            if (mode != GradMode::Ste) continue;
            const double* c = cb.data.data() + row;
            const std::size_t z = n.indices[e];
            for (std::size_t k = (z == 0 ? 0 : z - 1); k <= z && k + 1 < n_q; ++k) {
              const double d = c[k + 1] - c[k];
              const double x = (wv.data[e] - c[k]) / d;
              if (x < 0.0 || x > 1.0) continue;
              g.data[row + k] += u.data[e] * (x - 1.0);
              g.data[row + k + 1] -= u.data[e] * x;
            }
          }
        }
        // Quantizee path: straight-through estimator in Ste mode only.
        if (want(n.a) && mode == GradMode::Ste) {
          Tensor& g = ensure(n.a);
          for (std::size_t e = 0; e < u.numel(); ++e)
            g.data[e] += u.data[e] * static_cast<double>(n.cover[e]);
        }
        break;
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (NodeId id : wrt) {
    if (adj[id].numel() == 0) adj[id] = Tensor(nodes_[id].value.shape);
    out.push_back(std::move(adj[id]));
  }
  return out;
}

const std::vector<std::uint32_t>& Graph::quantize_indices(NodeId id) const {
  const Node& n = at(id);
  if (n.op != Op::Quantize) throw ShapeError("quantize_indices: not a quantize node");
  return n.indices;
}

const std::vector<std::uint32_t>& Graph::sort_permutation(NodeId id) const {
  const Node& n = at(id);
  if (n.op != Op::SortClamp) throw ShapeError("sort_permutation: not a sort-clamp node");
  return n.perm;
}

double Graph::min_selection_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const Node& n : nodes_)
    if (n.op == Op::Quantize) m = std::min(m, n.sel_margin);
  return m;
}

double Graph::min_sort_gap() const {
  double m = std::numeric_limits<double>::infinity();
  for (const Node& n : nodes_)
    if (n.op == Op::SortClamp) m = std::min(m, n.raw_gap_min);
  return m;
}

std::map<std::string, Tensor> forward_eval(Graph& g,
                                           const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, value] : inputs) g.set_input(name, value);
  g.recompute();
  return g.outputs();
}

double finite_diff_check(const ScalarField& f, const Tensor& point, double step) {
  if (!(step > 0.0)) throw NumericError("finite_diff_check: step must be positive");
  const Tensor analytic = f.gradient(point);
  if (!analytic.same_shape(point))
    throw ShapeError("finite_diff_check: gradient shape does not match point");
  Tensor p = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double orig = p.data[i];
    p.data[i] = orig + step;
    const double fp = f.value(p);
    p.data[i] = orig - step;
    const double fm = f.value(p);
    p.data[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_check: non-finite function value");
    const double central = (fp - fm) / (2.0 * step);
    const double denom =
        std::max({std::fabs(analytic.data[i]), std::fabs(central), 1e-12});
    worst = std::max(worst, std::fabs(analytic.data[i] - central) / denom);
  }
  return worst;
}

}  // namespace lcq
