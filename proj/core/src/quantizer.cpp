#include "lcq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lcq/errors.hpp"

namespace lcq {

void sort_clamp_row(std::span<const double> in, double eps,
                    std::span<double> out_values, std::span<std::uint32_t> out_perm,
                    double* min_raw_gap) {
  const std::size_t n = in.size();
  if (n == 0) throw ShapeError("sort_clamp_row: empty codebook row");
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return in[a] < in[b]; });
  double raw_min = std::numeric_limits<double>::infinity();
  out_perm[0] = idx[0];
  out_values[0] = in[idx[0]];
  for (std::size_t k = 1; k < n; ++k) {
    out_perm[k] = idx[k];
    const double v = in[idx[k]];
    raw_min = std::min(raw_min, v - in[idx[k - 1]]);
    // Only degenerate values move; healthy codewords keep their bit patterns.
    const double floor = out_values[k - 1] + eps;
    out_values[k] = (v < floor) ? floor : v;
  }
  if (min_raw_gap) *min_raw_gap = (n > 1) ? raw_min : std::numeric_limits<double>::infinity();
}

SortedCodebook sort_clamp_rows(const Tensor& codebook, double eps) {
  const std::size_t rows = codebook.rows();
  const std::size_t n_q = codebook.cols();
  SortedCodebook cb;
  cb.n_q = n_q;
  cb.values.resize(rows * n_q);
  cb.perm.resize(rows * n_q);
  for (std::size_t i = 0; i < rows; ++i) {
    sort_clamp_row({codebook.data.data() + i * n_q, n_q}, eps,
                   {cb.values.data() + i * n_q, n_q}, {cb.perm.data() + i * n_q, n_q},
                   nullptr);
  }
  return cb;
}

namespace {

// Normalized positions within rounding distance of 1/2 count as midpoint
// ties; real-number midpoints are generally not representable, so exact
// equality would make the parity rule unreachable for most codebooks.
constexpr double kTieBand = 4.440892098500626e-16;  // 2 * DBL_EPSILON

struct ElementQuant {
  std::uint32_t index;
  std::uint8_t cover;
  double margin;
};

inline ElementQuant quantize_element(double w, const double* c, std::size_t n_q) {
  std::uint32_t z = 0;
  std::uint8_t cov = 0;
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < n_q; ++k) {
    const double d = c[k + 1] - c[k];
    const double x = (w - c[k]) / d;
    const double dx = x - 0.5;
    bool step;
    if (dx > kTieBand) {
      step = true;
    } else if (dx < -kTieBand) {
      step = false;
    } else {
      step = (k % 2) == 0;  // 1-based segment index odd: move to even position
    }
    z += step ? 1u : 0u;
    cov = static_cast<std::uint8_t>(cov + ((x >= 0.0 && x <= 1.0) ? 1 : 0));
    margin = std::min(margin, std::fabs(dx));
  }
  return {z, cov, margin};
}

}  // namespace

QuantizeResult quantize_segmented(const Tensor& w, const SortedCodebook& cb,
                                  std::size_t group_size) {
  if (group_size == 0) throw ShapeError("quantize_segmented: group_size must be positive");
  const std::size_t n = w.numel();
  if (n % group_size != 0)
    throw ShapeError("quantize_segmented: element count not divisible by group size");
  if (n / group_size != cb.rows())
    throw ShapeError("quantize_segmented: group count does not match codebook rows");
  for (std::size_t r = 0; r < cb.rows(); ++r) {
    const auto row = cb.row(r);
    for (std::size_t k = 1; k < row.size(); ++k)
      if (!(row[k] > row[k - 1]))
        throw ShapeError("quantize_segmented: codebook row not strictly ascending");
  }

  QuantizeResult out;
  out.values = Tensor(w.shape);
  out.indices.resize(n);
  out.cover.resize(n);
  out.sel_margin = std::numeric_limits<double>::infinity();
  const std::size_t n_q = cb.n_q;
  for (std::size_t e = 0; e < n; ++e) {
    const double* c = cb.values.data() + (e / group_size) * n_q;
    const ElementQuant q = quantize_element(w.data[e], c, n_q);
    out.values.data[e] = c[q.index];
    out.indices[e] = q.index;
    out.cover[e] = q.cover;
    out.sel_margin = std::min(out.sel_margin, q.margin);
  }
  return out;
}

std::vector<std::uint32_t> quantize_indices(const Tensor& w, const SortedCodebook& cb,
                                            std::size_t group_size) {
  return quantize_segmented(w, cb, group_size).indices;
}

Tensor dequantize(const SortedCodebook& cb, std::span<const std::uint32_t> indices,
                  const std::vector<std::size_t>& shape, std::size_t group_size) {
  Tensor out(shape);
  if (out.numel() != indices.size())
    throw ShapeError("dequantize: index count does not match shape");
  for (std::size_t e = 0; e < indices.size(); ++e) {
    if (indices[e] >= cb.n_q) throw ShapeError("dequantize: index out of range");
    out.data[e] = cb.values[(e / group_size) * cb.n_q + indices[e]];
  }
  return out;
}

std::size_t oracle_quantize_index(double w, std::span<const double> row) {
  if (row.empty()) throw ShapeError("oracle_quantize: empty codebook row");
  std::size_t best = 0;
  double best_dist = std::fabs(w - row[0]);
  for (std::size_t j = 1; j < row.size(); ++j) {
    const double d = std::fabs(w - row[j]);
    if (d < best_dist) {
      best = j;
      best_dist = d;
    }
  }
  // Midpoint ties (within the same rounding band the segmented form uses,
  // mapped onto distances) resolve to the even 1-based position of the pair.
  const auto tied = [&](std::size_t a, std::size_t b) {
    const double da = std::fabs(w - row[a]);
    const double db = std::fabs(w - row[b]);
    return std::fabs(da - db) <= 2.0 * kTieBand * (da + db);
  };
  const auto even_position = [](std::size_t lo) { return (lo % 2 == 1) ? lo : lo + 1; };
  if (best + 1 < row.size() && tied(best, best + 1)) return even_position(best);
  if (best > 0 && tied(best - 1, best)) return even_position(best - 1);
  return best;
}

double oracle_quantize(double w, std::span<const double> row) {
  return row[oracle_quantize_index(w, row)];
}

}  // namespace lcq
