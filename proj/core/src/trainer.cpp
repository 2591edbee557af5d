#include "lcq/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "lcq/initializer.hpp"

namespace lcq {

double cosine_lr(double base, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base * (1.0 + std::cos(3.14159265358979323846 * t));
}

AdamW::AdamW(const std::vector<Tensor*>& params, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (Tensor* p : params_) {
    m_.push_back(Tensor(p->shape));
    v_.push_back(Tensor(p->shape));
  }
}

void AdamW::step(const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params_.size()) throw ShapeError("AdamW::step: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g)) throw ShapeError("AdamW::step: gradient shape mismatch");
    for (std::size_t e = 0; e < p.numel(); ++e) {
      m_[i].data[e] = beta1_ * m_[i].data[e] + (1.0 - beta1_) * g.data[e];
      v_[i].data[e] = beta2_ * v_[i].data[e] + (1.0 - beta2_) * g.data[e] * g.data[e];
      const double mhat = m_[i].data[e] / bc1;
      const double vhat = v_[i].data[e] / bc2;
      p.data[e] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.data[e]);
    }
  }
}

// Quantization always works on the transposed (output-channel-major) view of
// a layer, so a group covers consecutive input features of one output unit.
BlockParams init_block_params(const BlockWeights& w, const QuantConfig& cfg, RngStream& rng) {
  BlockParams bp;
  for (std::size_t l = 0; l < 6; ++l) {
    const Tensor wt = transposed(w.layer(l));
    bp[l].grouping = layer_grouping(wt.rows(), wt.cols(), cfg);
    const LayerGrouping& g = bp[l].grouping;
    for (std::size_t s = 0; s < g.n_subsets(); ++s) {
      const std::size_t first = g.subset_first_group(s);
      const std::size_t cnt = g.subset_groups[s];
      const std::span<const double> slice{wt.data.data() + first * g.group_size,
                                          cnt * g.group_size};
      bp[l].subsets.push_back(init_params(slice, cnt, g.group_size, cfg, rng));
    }
  }
  return bp;
}

std::vector<Tensor*> param_tensors(BlockParams& p) {
  std::vector<Tensor*> out;
  for (auto& layer : p)
    for (auto& s : layer.subsets) {
      out.push_back(&s.scales_u);
      out.push_back(&s.qps_u);
      out.push_back(&s.offset_u);
    }
  return out;
}

std::vector<const Tensor*> param_tensors(const BlockParams& p) {
  std::vector<const Tensor*> out;
  for (const auto& layer : p)
    for (const auto& s : layer.subsets) {
      out.push_back(&s.scales_u);
      out.push_back(&s.qps_u);
      out.push_back(&s.offset_u);
    }
  return out;
}

std::array<Tensor, 6> quantize_block_weights(const BlockWeights& w, const BlockParams& p,
                                             const QuantConfig& cfg) {
  std::array<Tensor, 6> out;
  for (std::size_t l = 0; l < 6; ++l) {
    const Tensor wt = transposed(w.layer(l));
    const LayerGrouping& g = p[l].grouping;
    Tensor out_t(wt.shape);
    for (std::size_t s = 0; s < p[l].subsets.size(); ++s) {
      const DerivedCodebook d = derive_codebook(p[l].subsets[s], cfg.epsilon);
      const std::size_t first = g.subset_first_group(s);
      const std::size_t cnt = g.subset_groups[s];
      Tensor slice({cnt, g.group_size});
      std::copy(wt.data.begin() + first * g.group_size,
                wt.data.begin() + (first + cnt) * g.group_size, slice.data.begin());
      const QuantizeResult q = quantize_segmented(slice, d.sorted, g.group_size);
      std::copy(q.values.data.begin(), q.values.data.end(),
                out_t.data.begin() + first * g.group_size);
    }
    out[l] = transposed(out_t);
  }
  return out;
}

double block_loss(const std::vector<Tensor>& xq, const std::vector<Tensor>& xfp,
                  const BlockWeights& w, const BlockParams& p, const QuantConfig& cfg) {
  if (xq.size() != xfp.size()) throw ShapeError("block_loss: sample counts differ");
  const std::array<Tensor, 6> wq = quantize_block_weights(w, p, cfg);
  BlockWeights quantized = w;
  for (std::size_t l = 0; l < 6; ++l) quantized.layer(l) = wq[l];
  double loss = 0.0;
  for (std::size_t i = 0; i < xq.size(); ++i) {
    const Tensor yq = block_forward(xq[i], quantized);
    const Tensor tfp = block_forward(xfp[i], w);
    const Tensor tq = block_forward(xq[i], w);
    double term1 = 0.0, term2 = 0.0;
    for (std::size_t e = 0; e < yq.numel(); ++e) {
      const double d1 = yq.data[e] - tfp.data[e];
      term1 += d1 * d1;
    }
    for (std::size_t e = 0; e < yq.numel(); ++e) {
      const double d2 = yq.data[e] - tq.data[e];
      term2 += d2 * d2;
    }
    loss += term1 + term2;
  }
  return loss;
}

LossGraph build_loss_graph(const BlockWeights& w, const BlockParams& p,
                           const QuantConfig& cfg, const Tensor& xq,
                           const Tensor& target_fp, const Tensor& target_q) {
  LossGraph lg;
  Graph& g = lg.graph;
  const std::size_t n_q = cfg.levels();

  BlockWeightIds ids;
  ids.dim = w.dim;
  ids.ff_dim = w.ff_dim;
  ids.heads = w.heads;
  ids.ln1_gain = g.constant(w.ln1_gain);
  ids.ln1_bias = g.constant(w.ln1_bias);
  ids.ln2_gain = g.constant(w.ln2_gain);
  ids.ln2_bias = g.constant(w.ln2_bias);

  for (std::size_t l = 0; l < 6; ++l) {
    const LayerGrouping& grouping = p[l].grouping;
    std::vector<NodeId> subset_codebooks;
    for (std::size_t s = 0; s < p[l].subsets.size(); ++s) {
      const SubsetParams& sp = p[l].subsets[s];
      const std::string tag = "l" + std::to_string(l) + ".s" + std::to_string(s) + ".";
      const NodeId scales_u = g.input(tag + "scales", sp.scales_u);
      const NodeId qps_u = g.input(tag + "qps", sp.qps_u);
      const NodeId offset_u = g.input(tag + "offset", sp.offset_u);
      lg.leaves.push_back(scales_u);
      lg.leaves.push_back(qps_u);
      lg.leaves.push_back(offset_u);

      const NodeId half = g.constant(sp.half_range());
      const std::size_t cnt = sp.n_groups();
      const NodeId scales = g.mul(g.tanh(scales_u), g.broadcast_rows(half, sp.rank()));
      const NodeId qps = g.tanh(qps_u);
      const NodeId cpre = g.matmul(g.transpose(scales), qps);
      const NodeId offset_pre = g.mul(g.tanh(offset_u), half);
      const NodeId pre_sorted = g.sort_clamp(cpre, cfg.epsilon);
      const NodeId offset = g.quantize(g.reshape(offset_pre, {cnt, 1}), pre_sorted, 1);
      const NodeId codebook =
          g.sub(cpre, g.broadcast_cols(g.reshape(offset, {cnt}), n_q));
      subset_codebooks.push_back(codebook);
    }
    const NodeId layer_codebook = subset_codebooks.size() == 1
                                      ? subset_codebooks[0]
                                      : g.concat_rows(subset_codebooks);
    const NodeId sorted = g.sort_clamp(layer_codebook, cfg.epsilon);
    const NodeId w_const = g.constant(transposed(w.layer(l)));
    ids.layers[l] = g.transpose(g.quantize(w_const, sorted, grouping.group_size));
  }

  const NodeId x = g.constant(xq);
  const NodeId y = append_block_forward(g, x, ids);
  const NodeId term1 = g.squared_norm(g.sub(y, g.constant(target_fp)));
  const NodeId term2 = g.squared_norm(g.sub(y, g.constant(target_q)));
  lg.loss = g.add(term1, term2);
  g.mark_output(lg.loss, "loss");
  return lg;
}

namespace {

std::vector<Tensor> freeze_masks(const BlockParams& p) {
  std::vector<Tensor> masks;
  for (const auto& layer : p)
    for (const auto& s : layer.subsets) {
      Tensor ms = Tensor::full(s.scales_u.shape, 1.0);
      for (std::size_t gidx = 0; gidx < s.scales_u.cols(); ++gidx) ms.data[gidx] = 0.0;
      Tensor mv = Tensor::full(s.qps_u.shape, 1.0);
      for (std::size_t k = 0; k < s.qps_u.cols(); ++k) mv.data[k] = 0.0;
      Tensor mo = Tensor(s.offset_u.shape);  // zeros: offsets fully frozen
      masks.push_back(std::move(ms));
      masks.push_back(std::move(mv));
      masks.push_back(std::move(mo));
    }
  return masks;
}

}  // namespace

TrainResult optimize_block(const BlockWeights& w, const std::vector<Tensor>& xq,
                           const std::vector<Tensor>& xfp, const QuantConfig& cfg,
                           std::uint64_t block_index, const TrainOptions& opts) {
  cfg.validate();
  if (xq.size() != xfp.size() || xq.empty())
    throw ShapeError("optimize_block: calibration variants must align and be non-empty");

  RngStream init_rng(substream_seed(cfg.seed, 0x4000 + block_index));
  TrainResult res;
  res.params = init_block_params(w, cfg, init_rng);
  res.initial_loss = block_loss(xq, xfp, w, res.params, cfg);

  // Reconstruction targets are fixed for the whole block.
  std::vector<Tensor> target_fp(xq.size()), target_q(xq.size());
  for (std::size_t i = 0; i < xq.size(); ++i) {
    target_fp[i] = block_forward(xfp[i], w);
    target_q[i] = block_forward(xq[i], w);
  }

  const std::size_t n = xq.size();
  const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;

  std::vector<Tensor*> params = param_tensors(res.params);
  AdamW opt(params);
  std::vector<Tensor> masks;
  if (opts.freeze_rank1_and_offset) masks = freeze_masks(res.params);

  const double per_sample_initial = res.initial_loss / static_cast<double>(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream shuffle_rng(substream_seed(cfg.seed, 0x5000 + block_index * 1024 + epoch));
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double epoch_loss = 0.0;
    double epoch_lr = cosine_lr(cfg.lr, step, total_steps);
    for (std::size_t s0 = 0; s0 < n; s0 += cfg.batch) {
      const std::size_t batch_end = std::min(n, s0 + cfg.batch);
      std::vector<Tensor> accum;
      for (const Tensor* p : params) accum.push_back(Tensor(p->shape));
      double step_loss = 0.0;
      for (std::size_t bi = s0; bi < batch_end; ++bi) {
        const std::size_t idx = order[bi];
        LossGraph lg = build_loss_graph(w, res.params, cfg, xq[idx], target_fp[idx],
                                        target_q[idx]);
        step_loss += lg.graph.value(lg.loss).data[0];
        const std::vector<Tensor> grads =
            lg.graph.backward(lg.loss, lg.leaves, GradMode::Ste);
        for (std::size_t pi = 0; pi < accum.size(); ++pi)
          for (std::size_t e = 0; e < accum[pi].numel(); ++e)
            accum[pi].data[e] += grads[pi].data[e];
      }
      if (!masks.empty())
        for (std::size_t pi = 0; pi < accum.size(); ++pi)
          for (std::size_t e = 0; e < accum[pi].numel(); ++e)
            accum[pi].data[e] *= masks[pi].data[e];

      const std::size_t batch_count = batch_end - s0;
      const double step_per_sample = step_loss / static_cast<double>(batch_count);
      if (per_sample_initial > 0.0 && step_per_sample > 1e3 * per_sample_initial)
        throw NumericError("optimization diverged at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) + ": per-sample loss " +
                           std::to_string(step_per_sample) + " vs initial " +
                           std::to_string(per_sample_initial));

      epoch_lr = cosine_lr(cfg.lr, step, total_steps);
      opt.step(accum, epoch_lr);
      ++step;
      epoch_loss += step_loss;
      if (opts.step_callback) opts.step_callback(res.params, step);
    }
    res.trace.push_back({epoch, epoch_loss / static_cast<double>(n), epoch_lr});
  }

  res.final_loss = block_loss(xq, xfp, w, res.params, cfg);
  return res;
}

ModelQuantizeResult quantize_model(const GeneratedModel& m, const QuantConfig& cfg,
                                   const TrainOptions& opts) {
  ModelQuantizeResult out;
  CalibrationSet features = initial_calibration(m);
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    const BlockWeights& w = m.blocks[b];
    BlockRecord rec;
    rec.train = optimize_block(w, features.q, features.fp, cfg, b, opts);
    rec.deployed = apply_dq(w, rec.train.params, cfg);

    BlockWeights deployed_w = w;
    for (std::size_t l = 0; l < 6; ++l) deployed_w.layer(l) = rec.deployed.layers[l].wq;

    // Deployed (post-dq) loss over the full calibration set.
    double loss = 0.0;
    for (std::size_t i = 0; i < features.q.size(); ++i) {
      const Tensor yq = block_forward(features.q[i], deployed_w);
      const Tensor tfp = block_forward(features.fp[i], w);
      const Tensor tq = block_forward(features.q[i], w);
      for (std::size_t e = 0; e < yq.numel(); ++e) {
        const double d1 = yq.data[e] - tfp.data[e];
        const double d2 = yq.data[e] - tq.data[e];
        loss += d1 * d1 + d2 * d2;
      }
    }
    rec.deployed_loss = loss;

    // Feature propagation: full-precision history with W, quantized history
    // with the deployed quantized weights.
    for (std::size_t i = 0; i < features.fp.size(); ++i) {
      features.fp[i] = block_forward(features.fp[i], w);
      features.q[i] = block_forward(features.q[i], deployed_w);
    }
    out.blocks.push_back(std::move(rec));
  }
  out.final_features = std::move(features);
  return out;
}

}  // namespace lcq
