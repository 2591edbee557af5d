#include "lcq/initializer.hpp"

#include <algorithm>
#include <cmath>

#include "lcq/errors.hpp"

namespace lcq {

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericError("inverse_normal_cdf: p must be in (0, 1)");
  // Acklam's rational approximation, then one Halley refinement step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double err = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
  const double u = err / pdf;
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

ClipSearchResult clip_search_init(std::span<const double> group, std::uint32_t bits) {
  if (group.empty()) throw ShapeError("clip_search_init: empty group");
  double lo = group[0], hi = group[0];
  for (double v : group) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double mid = (hi + lo) / 2.0;
  const double half = (hi - lo) / 2.0;
  if (half == 0.0) return {0.0, -group[0], 1.0, 0.0};

  const std::size_t n_q = std::size_t{1} << bits;
  ClipSearchResult best{0.0, 0.0, 0.0, 0.0};
  bool have = false;
  for (int i = 0; i <= 70; ++i) {
    const double alpha = static_cast<double>(100 - i) / 100.0;
    const double clo = mid - alpha * half;
    const double width = 2.0 * alpha * half;
    const double step = width / static_cast<double>(n_q - 1);
    double err = 0.0;
    for (double w : group) {
      double t = (w - clo) / step;
      double j = std::nearbyint(t);
      if (j < 0.0) j = 0.0;
      if (j > static_cast<double>(n_q - 1)) j = static_cast<double>(n_q - 1);
      const double q = clo + j * step;
      err += (w - q) * (w - q);
    }
    if (!have || err < best.mse) {
      best = {alpha * half, -mid, alpha, err};
      have = true;
    }
  }
  return best;
}

std::vector<double> uniform_qps(std::size_t n_q) {
  std::vector<double> v(n_q);
  for (std::size_t k = 0; k < n_q; ++k)
    v[k] = -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(n_q - 1);
  return v;
}

std::vector<double> gaussian_qps(std::size_t n_q) {
  std::vector<double> v(n_q);
  // The quantile set is symmetric; mirroring the lower half keeps it exactly
  // so in floating point, making both endpoints rescale to -1 and 1.
  for (std::size_t k = 0; k < n_q / 2; ++k) {
    v[k] = inverse_normal_cdf((static_cast<double>(k) + 0.5) / static_cast<double>(n_q));
    v[n_q - 1 - k] = -v[k];
  }
  if (n_q % 2 == 1) v[n_q / 2] = 0.0;
  const double scale = std::fabs(v[0]);
  for (double& x : v) x /= scale;
  return v;
}

SubsetParams init_params(std::span<const double> weights, std::size_t n_groups,
                         std::size_t group_size, const QuantConfig& cfg, RngStream& rng) {
  if (weights.size() != n_groups * group_size)
    throw ShapeError("init_params: weight count does not match grouping");
  const std::size_t rank = cfg.rank;
  const std::size_t n_q = cfg.levels();

  SubsetParams p;
  p.scales_u = Tensor({rank, n_groups});
  p.qps_u = Tensor({rank, n_q});
  p.offset_u = Tensor({n_groups});
  group_extrema(weights, group_size, p.wmin, p.wmax);

  for (std::size_t g = 0; g < n_groups; ++g) {
    const ClipSearchResult r =
        clip_search_init(weights.subspan(g * group_size, group_size), cfg.bits);
    const double half = (p.wmax.data[g] - p.wmin.data[g]) / 2.0;
    p.scales_u.data[g] = invert_reparam(r.scale, half);
    p.offset_u.data[g] = invert_reparam(r.offset_pre, half);
  }
  // Higher-rank scales start at zero, so the initial codebook is exactly the
  // rank-1 clip-search solution.

  const std::vector<double> v1 = uniform_qps(n_q);
  for (std::size_t k = 0; k < n_q; ++k) p.qps_u.data[k] = invert_reparam(v1[k], 1.0);
  if (rank >= 2) {
    const std::vector<double> v2 = gaussian_qps(n_q);
    for (std::size_t k = 0; k < n_q; ++k) p.qps_u.data[n_q + k] = invert_reparam(v2[k], 1.0);
  }
  for (std::size_t r = 3; r <= rank; ++r) {
    std::vector<double> vr(n_q);
    for (double& x : vr) x = rng.uniform(-0.1, 0.1);
    std::sort(vr.begin(), vr.end());
    for (std::size_t k = 0; k < n_q; ++k)
      p.qps_u.data[(r - 1) * n_q + k] = invert_reparam(vr[k], 1.0);
  }
  return p;
}

}  // namespace lcq
