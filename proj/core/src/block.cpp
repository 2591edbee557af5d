#include "lcq/block.hpp"

#include <algorithm>
#include <cmath>

#include "lcq/initializer.hpp"
#include "lcq/rng.hpp"

namespace lcq {

const Tensor& BlockWeights::layer(std::size_t i) const {
  switch (i) {
    case 0: return qproj;
    case 1: return kproj;
    case 2: return vproj;
    case 3: return oproj;
    case 4: return fc1;
    case 5: return fc2;
  }
  throw ShapeError("BlockWeights::layer: index out of range");
}

Tensor& BlockWeights::layer(std::size_t i) {
  return const_cast<Tensor&>(static_cast<const BlockWeights*>(this)->layer(i));
}

BlockWeightIds bind_block_constants(Graph& g, const BlockWeights& w) {
  BlockWeightIds ids;
  for (std::size_t i = 0; i < 6; ++i) ids.layers[i] = g.constant(w.layer(i));
  ids.ln1_gain = g.constant(w.ln1_gain);
  ids.ln1_bias = g.constant(w.ln1_bias);
  ids.ln2_gain = g.constant(w.ln2_gain);
  ids.ln2_bias = g.constant(w.ln2_bias);
  ids.dim = w.dim;
  ids.ff_dim = w.ff_dim;
  ids.heads = w.heads;
  return ids;
}

namespace {

NodeId affine_norm(Graph& g, NodeId x, NodeId gain, NodeId bias, std::size_t rows) {
  const NodeId normed = g.layer_norm(x);
  const NodeId scaled = g.mul(normed, g.broadcast_rows(gain, rows));
  return g.add(scaled, g.broadcast_rows(bias, rows));
}

}  // namespace

NodeId append_block_forward(Graph& g, NodeId x, const BlockWeightIds& w) {
  const std::size_t dim = w.dim, heads = w.heads;
  if (heads == 0 || dim % heads != 0)
    throw ShapeError("block forward: head count must divide the feature dimension");
  const std::size_t head_dim = dim / heads;
  const std::size_t seq = g.value(x).rows();

  const NodeId ln1 = affine_norm(g, x, w.ln1_gain, w.ln1_bias, seq);
  const NodeId q = g.matmul(ln1, w.layers[0]);
  const NodeId k = g.matmul(ln1, w.layers[1]);
  const NodeId v = g.matmul(ln1, w.layers[2]);

  const NodeId scale =
      g.constant(Tensor::full({seq, seq}, 1.0 / std::sqrt(static_cast<double>(head_dim))));
  NodeId attn = -1;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor mask({dim});
    for (std::size_t j = h * head_dim; j < (h + 1) * head_dim; ++j) mask.data[j] = 1.0;
    const NodeId m = g.broadcast_rows(g.constant(mask), seq);
    const NodeId qh = g.mul(q, m);
    const NodeId kh = g.mul(k, m);
    const NodeId vh = g.mul(v, m);
    const NodeId scores = g.mul(g.matmul(qh, g.transpose(kh)), scale);
    const NodeId probs = g.softmax(scores);
    const NodeId oh = g.matmul(probs, vh);
    attn = (attn < 0) ? oh : g.add(attn, oh);
  }
  const NodeId projected = g.matmul(attn, w.layers[3]);
  const NodeId y1 = g.add(x, projected);

  const NodeId ln2 = affine_norm(g, y1, w.ln2_gain, w.ln2_bias, seq);
  const NodeId ffn = g.matmul(g.gelu(g.matmul(ln2, w.layers[4])), w.layers[5]);
  return g.add(y1, ffn);
}

Tensor block_forward(const Tensor& x, const BlockWeights& w) {
  if (x.rank() != 2 || x.cols() != w.dim)
    throw ShapeError("block_forward: input shape does not match block dimension");
  Graph g;
  const NodeId xin = g.constant(x);
  const BlockWeightIds ids = bind_block_constants(g, w);
  const NodeId y = append_block_forward(g, xin, ids);
  return g.value(y);
}

GeneratedModel gen_calibration(const ModelSpec& spec) {
  if (spec.dim == 0 || spec.heads == 0 || spec.dim % spec.heads != 0)
    throw ShapeError("gen_calibration: head count must divide the feature dimension");
  GeneratedModel m;
  m.spec = spec;
  m.blocks.resize(spec.blocks);
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    BlockWeights& bw = m.blocks[b];
    bw.dim = spec.dim;
    bw.ff_dim = spec.ff_dim;
    bw.heads = spec.heads;
    bw.qproj = Tensor({spec.dim, spec.dim});
    bw.kproj = Tensor({spec.dim, spec.dim});
    bw.vproj = Tensor({spec.dim, spec.dim});
    bw.oproj = Tensor({spec.dim, spec.dim});
    bw.fc1 = Tensor({spec.dim, spec.ff_dim});
    bw.fc2 = Tensor({spec.ff_dim, spec.dim});
    for (std::size_t l = 0; l < 6; ++l) {
      RngStream rng(substream_seed(spec.seed, 0x1000 + b * 16 + l));
      Tensor& t = bw.layer(l);
      for (double& v : t.data) {
        const double sigma = (rng.uniform() < 0.05) ? 0.1 : 0.02;
        v = sigma * rng.normal();
      }
    }
    RngStream ln_rng(substream_seed(spec.seed, 0x2000 + b));
    bw.ln1_gain = Tensor({spec.dim});
    bw.ln1_bias = Tensor({spec.dim});
    bw.ln2_gain = Tensor({spec.dim});
    bw.ln2_bias = Tensor({spec.dim});
    for (std::size_t j = 0; j < spec.dim; ++j) bw.ln1_gain.data[j] = 1.0 + 0.05 * ln_rng.normal();
    for (std::size_t j = 0; j < spec.dim; ++j) bw.ln1_bias.data[j] = 0.02 * ln_rng.normal();
    for (std::size_t j = 0; j < spec.dim; ++j) bw.ln2_gain.data[j] = 1.0 + 0.05 * ln_rng.normal();
    for (std::size_t j = 0; j < spec.dim; ++j) bw.ln2_bias.data[j] = 0.02 * ln_rng.normal();
  }
  // Feature channels carry very different magnitudes, as activation channels
  // in trained language models do; this is what makes output-aware codebook
  // learning beat plain per-group weight fitting. The scale profile is a
  // fixed lognormal staircase, permuted per seed, so every generated model
  // has the same degree of channel anisotropy.
  RngStream chan_rng(substream_seed(spec.seed, 0x2F00));
  std::vector<double> channel_scale(spec.dim);
  for (std::size_t d = 0; d < spec.dim; ++d) {
    const double q = inverse_normal_cdf((static_cast<double>(d) + 0.5) /
                                        static_cast<double>(spec.dim));
    channel_scale[d] = std::exp(1.6 * q);
  }
  for (std::size_t d = spec.dim; d > 1; --d)
    std::swap(channel_scale[d - 1], channel_scale[chan_rng.below(d)]);
  m.samples.resize(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    RngStream rng(substream_seed(spec.seed, 0x3000 + i));
    m.samples[i] = Tensor({spec.seq_len, spec.dim});
    for (std::size_t l = 0; l < spec.seq_len; ++l)
      for (std::size_t d = 0; d < spec.dim; ++d)
        m.samples[i].data[l * spec.dim + d] = channel_scale[d] * rng.normal();
  }
  return m;
}

CalibrationSet initial_calibration(const GeneratedModel& m) {
  return {m.samples, m.samples};
}

namespace {

Tensor meta_tensor(const ModelSpec& s) {
  Tensor t({7});
  t.data = {static_cast<double>(s.blocks),  static_cast<double>(s.dim),
            static_cast<double>(s.ff_dim),  static_cast<double>(s.heads),
            static_cast<double>(s.samples), static_cast<double>(s.seq_len),
            static_cast<double>(s.seed)};
  return t;
}

ModelSpec meta_from_tensor(const Tensor& t) {
  if (t.numel() != 7) throw FormatError(0, "model meta tensor must have 7 entries");
  ModelSpec s;
  s.blocks = static_cast<std::size_t>(t.data[0]);
  s.dim = static_cast<std::size_t>(t.data[1]);
  s.ff_dim = static_cast<std::size_t>(t.data[2]);
  s.heads = static_cast<std::size_t>(t.data[3]);
  s.samples = static_cast<std::size_t>(t.data[4]);
  s.seq_len = static_cast<std::size_t>(t.data[5]);
  s.seed = static_cast<std::uint64_t>(t.data[6]);
  return s;
}

}  // namespace

std::vector<NamedTensor> model_to_tensors(const GeneratedModel& m) {
  std::vector<NamedTensor> out;
  out.push_back({"meta", meta_tensor(m.spec), Dtype::F64});
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    const BlockWeights& bw = m.blocks[b];
    for (std::size_t l = 0; l < 6; ++l)
      out.push_back({prefix + kLayerNames[l], bw.layer(l), Dtype::F64});
    out.push_back({prefix + "ln1_gain", bw.ln1_gain, Dtype::F64});
    out.push_back({prefix + "ln1_bias", bw.ln1_bias, Dtype::F64});
    out.push_back({prefix + "ln2_gain", bw.ln2_gain, Dtype::F64});
    out.push_back({prefix + "ln2_bias", bw.ln2_bias, Dtype::F64});
  }
  return out;
}

GeneratedModel model_from_tensors(const std::vector<NamedTensor>& ts) {
  GeneratedModel m;
  m.spec = meta_from_tensor(find_tensor(ts, "meta"));
  m.blocks.resize(m.spec.blocks);
  for (std::size_t b = 0; b < m.spec.blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    BlockWeights& bw = m.blocks[b];
    bw.dim = m.spec.dim;
    bw.ff_dim = m.spec.ff_dim;
    bw.heads = m.spec.heads;
    for (std::size_t l = 0; l < 6; ++l) bw.layer(l) = find_tensor(ts, prefix + kLayerNames[l]);
    bw.ln1_gain = find_tensor(ts, prefix + "ln1_gain");
    bw.ln1_bias = find_tensor(ts, prefix + "ln1_bias");
    bw.ln2_gain = find_tensor(ts, prefix + "ln2_gain");
    bw.ln2_bias = find_tensor(ts, prefix + "ln2_bias");
  }
  return m;
}

std::vector<NamedTensor> calib_to_tensors(const GeneratedModel& m) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < m.samples.size(); ++i)
    out.push_back({"calib" + std::to_string(i), m.samples[i], Dtype::F64});
  return out;
}

std::vector<Tensor> calib_from_tensors(const std::vector<NamedTensor>& ts) {
  std::vector<Tensor> out;
  for (std::size_t i = 0;; ++i) {
    const std::string name = "calib" + std::to_string(i);
    bool found = false;
    for (const auto& t : ts)
      if (t.name == name) {
        out.push_back(t.value);
        found = true;
        break;
      }
    if (!found) break;
  }
  if (out.empty()) throw Error("calibration container holds no calib* tensors");
  return out;
}

}  // namespace lcq
