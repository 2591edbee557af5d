#pragma once
#include <span>
#include <vector>

#include "lcq/codebook.hpp"
#include "lcq/config.hpp"
#include "lcq/rng.hpp"

namespace lcq {

// Inverse standard-normal CDF, refined to near machine precision.
double inverse_normal_cdf(double p);

struct ClipSearchResult {
  double scale;       // alpha * half-range: the rank-1 scale entry
  double offset_pre;  // -midpoint: the raw offset entry
  double alpha;       // grid point attaining the minimum
  double mse;         // clipped-uniform reconstruction error at alpha
};

// Search the shrink grid {1.00, 0.99, ..., 0.30} for the clip range that
// minimizes the uniform-quantization error of one weight group.
ClipSearchResult clip_search_init(std::span<const double> group, std::uint32_t bits);

// Uniformly spaced QPS row [-1, -1 + 2/(n_q - 1), ..., 1].
std::vector<double> uniform_qps(std::size_t n_q);

// Equidistant standard-normal quantiles at (k - 1/2)/n_q, rescaled into
// [-1, 1] by the largest magnitude.
std::vector<double> gaussian_qps(std::size_t n_q);

// Starting parameters for one subset, in unconstrained space: rank-1 entries
// from the clip search, zero higher-rank scales, Gaussian-quantile second QPS
// row, sorted uniform draws beyond that.
SubsetParams init_params(std::span<const double> weights, std::size_t n_groups,
                         std::size_t group_size, const QuantConfig& cfg, RngStream& rng);

}  // namespace lcq
