#include "lcq/codebook.hpp"

#include <cmath>

namespace lcq {

Tensor SubsetParams::half_range() const {
  Tensor h({n_groups()});
  for (std::size_t g = 0; g < h.numel(); ++g) h.data[g] = (wmax.data[g] - wmin.data[g]) / 2.0;
  return h;
}

Tensor build_codebook(const Tensor& scales, const Tensor& qps, const Tensor& offset) {
  const std::size_t rank = scales.rows();
  const std::size_t n_groups = scales.cols();
  const std::size_t n_q = qps.cols();
  if (qps.rows() != rank) throw ShapeError("build_codebook: rank mismatch between S and V");
  if (offset.numel() != n_groups)
    throw ShapeError("build_codebook: offset length does not match group count");
  Tensor c({n_groups, n_q});
  for (std::size_t i = 0; i < n_groups; ++i) {
    double* crow = c.data.data() + i * n_q;
    for (std::size_t r = 0; r < rank; ++r) {
      const double s = scales.data[r * n_groups + i];
      const double* vrow = qps.data.data() + r * n_q;
      for (std::size_t k = 0; k < n_q; ++k) crow[k] += s * vrow[k];
    }
    for (std::size_t k = 0; k < n_q; ++k) crow[k] -= offset.data[i];
  }
  return c;
}

Tensor reparam_scale(const Tensor& u, const Tensor& half_range) {
  const std::size_t n_groups = half_range.numel();
  if (u.cols() != n_groups) throw ShapeError("reparam_scale: group count mismatch");
  Tensor out(u.shape);
  const std::size_t rank = u.rows();
  for (std::size_t r = 0; r < rank; ++r)
    for (std::size_t g = 0; g < n_groups; ++g)
      out.data[r * n_groups + g] = std::tanh(u.data[r * n_groups + g]) * half_range.data[g];
  return out;
}

Tensor reparam_qps(const Tensor& u) {
  Tensor out(u.shape);
  for (std::size_t i = 0; i < u.numel(); ++i) out.data[i] = std::tanh(u.data[i]);
  return out;
}

double invert_reparam(double value, double coeff) {
  if (coeff == 0.0) return 0.0;
  double ratio = value / coeff;
  // The clamp keeps boundary values (AWQ-style initialization can sit exactly
  // on the group range) finite AND trainable: tighter clamps put the
  // unconstrained parameter so deep into tanh saturation that its gradient
  // scale collapses and the coordinate never moves again.
  const double bound = 0.9995;
  if (ratio > bound) ratio = bound;
  if (ratio < -bound) ratio = -bound;
  return std::atanh(ratio);
}

SubstituteResult substitute_offset(const Tensor& offset_pre, const Tensor& scales,
                                   const Tensor& qps, double eps) {
  Tensor codebook_pre = build_codebook(scales, qps, Tensor({scales.cols()}));
  SubstituteResult out;
  out.pre_sorted = sort_clamp_rows(codebook_pre, eps);
  Tensor bp = offset_pre;
  bp.shape = {offset_pre.numel(), 1};
  QuantizeResult q = quantize_segmented(bp, out.pre_sorted, 1);
  out.offset = Tensor({offset_pre.numel()});
  out.offset.data = q.values.data;
  out.index = std::move(q.indices);
  return out;
}

DerivedCodebook derive_codebook(const SubsetParams& p, double eps) {
  DerivedCodebook d;
  const Tensor half = p.half_range();
  d.scales = reparam_scale(p.scales_u, half);
  d.qps = reparam_qps(p.qps_u);
  d.offset_pre = reparam_scale(p.offset_u, half);
  d.codebook_pre = build_codebook(d.scales, d.qps, Tensor({p.n_groups()}));
  SubstituteResult sub = substitute_offset(d.offset_pre, d.scales, d.qps, eps);
  d.offset = std::move(sub.offset);
  d.offset_index = std::move(sub.index);
  d.pre_sorted = std::move(sub.pre_sorted);
  const std::size_t n_q = p.n_q();
  d.codebook = Tensor({p.n_groups(), n_q});
  for (std::size_t g = 0; g < p.n_groups(); ++g)
    for (std::size_t k = 0; k < n_q; ++k)
      d.codebook.data[g * n_q + k] = d.codebook_pre.data[g * n_q + k] - d.offset.data[g];
  d.sorted = sort_clamp_rows(d.codebook, eps);
  return d;
}

std::size_t LayerGrouping::subset_first_group(std::size_t s) const {
  std::size_t first = 0;
  for (std::size_t i = 0; i < s; ++i) first += subset_groups[i];
  return first;
}

LayerGrouping layer_grouping(std::size_t rows, std::size_t cols, const QuantConfig& cfg) {
  LayerGrouping g;
  g.rows = rows;
  g.cols = cols;
  g.group_size = cfg.effective_group_size(cols);
  const std::size_t n = rows * cols;
  if (g.group_size == 0 || n % g.group_size != 0)
    throw ShapeError("layer_grouping: group size " + std::to_string(g.group_size) +
                     " does not divide weight count " + std::to_string(n));
  g.n_groups = n / g.group_size;
  std::size_t left = g.n_groups;
  while (left > 0) {
    const std::size_t take = std::min<std::size_t>(left, cfg.groups_per_subset);
    g.subset_groups.push_back(take);
    left -= take;
  }
  return g;
}

void group_extrema(std::span<const double> w, std::size_t group_size, Tensor& wmin,
                   Tensor& wmax) {
  const std::size_t n_groups = w.size() / group_size;
  wmin = Tensor({n_groups});
  wmax = Tensor({n_groups});
  for (std::size_t g = 0; g < n_groups; ++g) {
    double lo = w[g * group_size], hi = lo;
    for (std::size_t j = 1; j < group_size; ++j) {
      const double v = w[g * group_size + j];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    wmin.data[g] = lo;
    wmax.data[g] = hi;
  }
}

}  // namespace lcq
