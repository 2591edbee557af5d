#pragma once
#include <array>
#include <cstdint>
#include <vector>

#include "lcq/config.hpp"
#include "lcq/quantizer.hpp"
#include "lcq/tensor.hpp"

namespace lcq {

// Learnable parameters for one weight subset, stored in unconstrained
// (pre-tanh) space, together with the per-group weight extrema that fix the
// reparameterization coefficients. The tanh reparameterization keeps every
// scale below its group's half-range and every QPS entry inside (-1, 1).
struct SubsetParams {
  Tensor scales_u;  // rank x n_groups
  Tensor qps_u;     // rank x n_q
  Tensor offset_u;  // n_groups
  Tensor wmin;      // n_groups
  Tensor wmax;      // n_groups

  std::size_t n_groups() const { return offset_u.numel(); }
  std::size_t rank() const { return scales_u.rows(); }
  std::size_t n_q() const { return qps_u.cols(); }
  Tensor half_range() const;
};

// C = S^T V - B, offset broadcast over columns.
Tensor build_codebook(const Tensor& scales, const Tensor& qps, const Tensor& offset);

// tanh(u) scaled by the per-group half-range. u may be 1-D (one row) or
// rank x n_groups; half_range has one entry per group (column).
Tensor reparam_scale(const Tensor& u, const Tensor& half_range);

// V = tanh(u), elementwise.
Tensor reparam_qps(const Tensor& u);

// artanh(value / coeff) with the ratio clamped to magnitude 1 - 1e-7;
// a zero coefficient (constant group) maps to zero.
double invert_reparam(double value, double coeff);

struct SubstituteResult {
  Tensor offset;                     // one element of each pre-offset row
  std::vector<std::uint32_t> index;  // its position in the sorted row
  SortedCodebook pre_sorted;
};

// Quantize raw offsets onto their pre-offset codebook rows (S^T V), so the
// final codebook C = S^T V - B contains exact zero in every row. Midpoint
// ties follow the quantizer's even-position rule.
SubstituteResult substitute_offset(const Tensor& offset_pre, const Tensor& scales,
                                   const Tensor& qps, double eps);

// Plain (gradient-free) derivation of everything downstream of one subset's
// parameters. The trainer mirrors this chain inside a Graph.
struct DerivedCodebook {
  Tensor scales;        // rank x n_groups
  Tensor qps;           // rank x n_q
  Tensor offset_pre;    // n_groups
  Tensor codebook_pre;  // n_groups x n_q, S^T V
  Tensor offset;        // n_groups
  Tensor codebook;      // n_groups x n_q, contains exact zero per row
  std::vector<std::uint32_t> offset_index;
  SortedCodebook pre_sorted;
  SortedCodebook sorted;
};
DerivedCodebook derive_codebook(const SubsetParams& p, double eps);

// Flat row-major grouping of one layer's weights.
struct LayerGrouping {
  std::size_t rows = 0, cols = 0;
  std::size_t group_size = 0;
  std::size_t n_groups = 0;
  std::vector<std::size_t> subset_groups;  // group count per subset

  std::size_t n_subsets() const { return subset_groups.size(); }
  std::size_t subset_first_group(std::size_t s) const;
};
LayerGrouping layer_grouping(std::size_t rows, std::size_t cols, const QuantConfig& cfg);

// Per-group extrema of a flat weight range.
void group_extrema(std::span<const double> w, std::size_t group_size, Tensor& wmin,
                   Tensor& wmax);

struct LayerParams {
  LayerGrouping grouping;
  std::vector<SubsetParams> subsets;
};
using BlockParams = std::array<LayerParams, 6>;

}  // namespace lcq
