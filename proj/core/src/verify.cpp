#include "lcq/verify.hpp"

#include <cmath>
#include <sstream>

#include "lcq/block.hpp"
#include "lcq/codebook.hpp"
#include "lcq/graph.hpp"
#include "lcq/quantizer.hpp"
#include "lcq/rng.hpp"
#include "lcq/trainer.hpp"

namespace lcq {

OracleFuzzReport oracle_equivalence_fuzz(std::uint64_t seed, std::size_t target_cases) {
  OracleFuzzReport rep;
  RngStream rng(substream_seed(seed, 0xF022));
  const std::uint32_t bit_choices[] = {2, 3, 4};
  const std::size_t rank_choices[] = {1, 2, 3};
  const std::size_t combos = 9;
  const std::size_t weights_per_codebook = 25;
  const std::size_t per_combo =
      (target_cases + combos * weights_per_codebook - 1) / (combos * weights_per_codebook);

  for (std::uint32_t bits : bit_choices) {
    for (std::size_t rank : rank_choices) {
      const std::size_t n_q = std::size_t{1} << bits;
      for (std::size_t cb_i = 0; cb_i < per_combo; ++cb_i) {
        // Low-rank codebook row: sum of scaled QPS rows minus an offset.
        Tensor scales({rank, 1});
        Tensor qps({rank, n_q});
        for (std::size_t r = 0; r < rank; ++r) {
          scales.data[r] = rng.uniform(-1.0, 1.0);
          for (std::size_t k = 0; k < n_q; ++k) qps.data[r * n_q + k] = rng.uniform(-1.0, 1.0);
        }
        Tensor offset({1});
        offset.data[0] = rng.uniform(-0.5, 0.5);
        const Tensor codebook = build_codebook(scales, qps, offset);
        const SortedCodebook sorted = sort_clamp_rows(codebook, 1e-6);
        const auto row = sorted.row(0);
        const double lo = row.front(), hi = row.back();
        const double pad = 0.25 * (hi - lo) + 0.1;
        for (std::size_t wi = 0; wi < weights_per_codebook; ++wi) {
          Tensor w({1, 1});
          w.data[0] = rng.uniform(lo - pad, hi + pad);
          const QuantizeResult q = quantize_segmented(w, sorted, 1);
          const std::size_t expect = oracle_quantize_index(w.data[0], row);
          ++rep.cases;
          if (q.indices[0] != expect || q.values.data[0] != row[expect]) {
            ++rep.mismatches;
            if (rep.first_mismatch.empty()) {
              std::ostringstream os;
              os << "bits=" << bits << " rank=" << rank << " w=" << w.data[0]
                 << " segmented=" << q.indices[0] << " oracle=" << expect;
              rep.first_mismatch = os.str();
            }
          }
        }
      }
    }
  }
  return rep;
}

namespace {

struct FlatLeaves {
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
};

FlatLeaves flat_layout(const BlockParams& p) {
  FlatLeaves f;
  for (const Tensor* t : param_tensors(p)) {
    f.sizes.push_back(t->numel());
    f.total += t->numel();
  }
  return f;
}

Tensor flatten_params(const BlockParams& p) {
  Tensor out({flat_layout(p).total});
  std::size_t off = 0;
  for (const Tensor* t : param_tensors(p)) {
    std::copy(t->data.begin(), t->data.end(), out.data.begin() + off);
    off += t->numel();
  }
  return out;
}

void unflatten_params(BlockParams& p, const Tensor& flat) {
  std::size_t off = 0;
  for (Tensor* t : param_tensors(p)) {
    std::copy(flat.data.begin() + off, flat.data.begin() + off + t->numel(),
              t->data.begin());
    off += t->numel();
  }
}

}  // namespace

GradcheckReport gradcheck_suite(const GradcheckOptions& opts) {
  // Small but complete block problem: every layer, multiple subsets, offset
  // substitution and both reconstruction terms all participate.
  ModelSpec spec;
  spec.blocks = 1;
  spec.dim = 8;
  spec.ff_dim = 16;
  spec.heads = 2;
  spec.samples = 2;
  spec.seq_len = 4;
  spec.seed = substream_seed(opts.seed, 0x6EAD);
  const GeneratedModel model = gen_calibration(spec);
  const BlockWeights& w = model.blocks[0];

  QuantConfig cfg;
  cfg.bits = 2;
  cfg.group_size = 8;
  cfg.rank = 2;
  cfg.groups_per_subset = 4;
  cfg.seed = spec.seed;

  // The quantized-history features sit close to the full-precision ones, as
  // they do in the real pipeline; this keeps the loss at quantization scale.
  RngStream rng(substream_seed(opts.seed, 0x6EAE));
  const Tensor& xfp = model.samples[0];
  Tensor xq = xfp;
  for (double& v : xq.data) v += 0.02 * rng.normal();
  const Tensor target_fp = block_forward(xfp, w);
  const Tensor target_q = block_forward(xq, w);

  BlockParams base = init_block_params(w, cfg, rng);

  GradcheckReport rep;
  rep.coordinates = flat_layout(base).total;

  BlockParams work = base;
  const auto loss_at = [&](const Tensor& point) {
    unflatten_params(work, point);
    LossGraph lg = build_loss_graph(w, work, cfg, xq, target_fp, target_q);
    return lg.graph.value(lg.loss).data[0];
  };
  const auto grad_at = [&](const Tensor& point) {
    unflatten_params(work, point);
    LossGraph lg = build_loss_graph(w, work, cfg, xq, target_fp, target_q);
    const auto grads = lg.graph.backward(lg.loss, lg.leaves, GradMode::Exact);
    Tensor flat({point.numel()});
    std::size_t off = 0;
    for (const Tensor& g : grads) {
      std::copy(g.data.begin(), g.data.end(), flat.data.begin() + off);
      off += g.numel();
    }
    return flat;
  };

  while (rep.points_checked < opts.points) {
    ++rep.attempts;
    if (rep.attempts > 100 * opts.points + 100)
      throw NumericError("gradcheck: could not find enough boundary-safe points");
    // Points live near the operating regime but away from tanh saturation,
    // where the chain's gradients would drop under the measurement floor.
    BlockParams candidate = base;
    for (Tensor* t : param_tensors(candidate))
      for (double& v : t->data)
        v = std::min(std::max(v, -2.5), 2.5) + 0.25 * rng.normal();

    // Reject points whose selections could flip under the probe step.
    LossGraph lg = build_loss_graph(w, candidate, cfg, xq, target_fp, target_q);
    if (lg.graph.min_selection_margin() < opts.margin ||
        lg.graph.min_sort_gap() < opts.sort_margin)
      continue;

    const Tensor point = flatten_params(candidate);
    const Tensor analytic = grad_at(point);
    const double loss0 = loss_at(point);

    // An f64 central difference carries roundoff of roughly
    // kappa * ulp(loss) / (2 * step); a coordinate can certify `tolerance`
    // relative agreement only when its magnitude clears noise / tolerance.
    const double noise =
        192.0 * 2.220446049250313e-16 * std::fabs(loss0) / (2.0 * opts.step);
    const double resolvable = noise / opts.tolerance;

    Tensor probe = point;
    for (std::size_t i = 0; i < probe.numel(); ++i) {
      const double orig = probe.data[i];
      probe.data[i] = orig + opts.step;
      const double fp = loss_at(probe);
      probe.data[i] = orig - opts.step;
      const double fm = loss_at(probe);
      probe.data[i] = orig;
      const double central = (fp - fm) / (2.0 * opts.step);
      if (analytic.data[i] == 0.0 && central == 0.0) {
        ++rep.measured;  // exact agreement: the loss is locally constant
        continue;
      }
      if (std::max(std::fabs(analytic.data[i]), std::fabs(central)) < resolvable) {
        ++rep.below_resolution;
        continue;
      }
      ++rep.measured;
      const double denom =
          std::max({std::fabs(analytic.data[i]), std::fabs(central), 1e-12});
      const double err = std::fabs(analytic.data[i] - central) / denom;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_analytic = analytic.data[i];
        rep.worst_central = central;
      }
    }
    ++rep.points_checked;
  }
  return rep;
}

}  // namespace lcq
