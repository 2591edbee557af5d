#pragma once
#include <cstdint>
#include <span>
#include <vector>

#include "lcq/tensor.hpp"

namespace lcq {

// A codebook prepared for quantization: every row sorted ascending and
// rebuilt as prefix sums of gaps clamped to >= eps, so values are strictly
// increasing and each output of the segmented quantizer is exactly one of
// them. perm maps sorted position -> original column, per row.
struct SortedCodebook {
  std::size_t n_q = 0;
  std::vector<double> values;
  std::vector<std::uint32_t> perm;

  std::size_t rows() const { return n_q ? values.size() / n_q : 0; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * n_q, n_q};
  }
  std::span<const std::uint32_t> row_perm(std::size_t i) const {
    return {perm.data() + i * n_q, n_q};
  }
};

// Row kernel. out_values/out_perm must hold n values. Returns the smallest
// raw (pre-clamp) gap between sorted neighbours via min_raw_gap if non-null.
void sort_clamp_row(std::span<const double> in, double eps,
                    std::span<double> out_values, std::span<std::uint32_t> out_perm,
                    double* min_raw_gap);

SortedCodebook sort_clamp_rows(const Tensor& codebook, double eps);

struct QuantizeResult {
  Tensor values;                       // selected codewords, input shape
  std::vector<std::uint32_t> indices;  // sorted positions, one per element
  std::vector<std::uint8_t> cover;     // segments whose position is in [0,1]
  double sel_margin = 0.0;             // min |position - 1/2| over segments
};

// Segmented quantization: walks the sum-of-segments form with the step rule
// that sends exact midpoints to the even (1-based) sorted position. Element k
// of the flattened input belongs to codebook row k / group_size.
QuantizeResult quantize_segmented(const Tensor& w, const SortedCodebook& cb,
                                  std::size_t group_size);

std::vector<std::uint32_t> quantize_indices(const Tensor& w, const SortedCodebook& cb,
                                            std::size_t group_size);

Tensor dequantize(const SortedCodebook& cb, std::span<const std::uint32_t> indices,
                  const std::vector<std::size_t>& shape, std::size_t group_size);

// Exhaustive nearest-codeword scan over one sorted row; midpoint ties resolve
// to the even (1-based) position. Independent verifier for the segmented form.
std::size_t oracle_quantize_index(double w, std::span<const double> row);
double oracle_quantize(double w, std::span<const double> row);

}  // namespace lcq
