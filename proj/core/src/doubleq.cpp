#include "lcq/doubleq.hpp"

#include <algorithm>
#include <cmath>

#include "lcq/half.hpp"

namespace lcq {

double dq_decode(const DqGroupParams& p, std::uint32_t code, std::uint32_t bits) {
  const double levels = static_cast<double>((1u << bits) - 1);
  const double scale = half_to_double(p.scale_half);
  return scale * (static_cast<double>(code) - static_cast<double>(p.zero_code)) / levels * 2.0;
}

namespace {

struct Candidate {
  DqGroupParams params;
  std::vector<std::uint32_t> codes;
  double error;
};

Candidate evaluate_candidate(std::span<const double> values, std::uint32_t bits,
                             double alpha, std::uint32_t zc, std::uint16_t scale_half) {
  const double levels = static_cast<double>((1u << bits) - 1);
  Candidate c;
  c.params.alpha = alpha;
  c.params.scale_half = scale_half;
  c.params.zero_code = zc;
  const double scale = half_to_double(scale_half);
  const double step = scale * 2.0 / levels;
  c.codes.resize(values.size());
  c.error = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t code = zc;
    if (step > 0.0) {
      const double t = std::nearbyint(values[i] / step + static_cast<double>(zc));
      code = static_cast<std::uint32_t>(std::min(std::max(t, 0.0), levels));
    }
    c.codes[i] = code;
    const double rec = dq_decode(c.params, code, bits);
    c.error += (values[i] - rec) * (values[i] - rec);
  }
  return c;
}

}  // namespace

DqGroupResult grid_search_dq(std::span<const double> values, std::uint32_t bits) {
  if (values.empty()) throw ShapeError("grid_search_dq: empty group");
  if (bits < 2 || bits > 8) throw ShapeError("grid_search_dq: bits must be in [2, 8]");
  double vmin = values[0], vmax = values[0];
  for (double v : values) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (vmin == vmax) {
    // Constant group: one step above the zero code reproduces the value.
    const double levels = static_cast<double>((1u << bits) - 1);
    DqGroupResult r;
    r.params.alpha = 1.0;
    r.params.zero_code = 0;
    r.params.scale_half = half_from_double(vmin * levels / 2.0);
    r.codes.assign(values.size(), vmin == 0.0 ? 0u : 1u);
    r.error = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double rec = dq_decode(r.params, r.codes[i], bits);
      r.error += (values[i] - rec) * (values[i] - rec);
    }
    return r;
  }

  const double levels = static_cast<double>((1u << bits) - 1);
  Candidate best;
  bool have = false;
  for (int i = 0; i <= 70; ++i) {
    const double alpha = static_cast<double>(100 - i) / 100.0;
    const double lo = alpha * vmin;
    const double width = alpha * (vmax - vmin);
    const std::uint16_t scale_half = half_from_double(width / 2.0);
    const double step = half_to_double(scale_half) * 2.0 / levels;
    // Both roundings of the zero position are candidates; the window always
    // keeps an exact-zero code.
    double zf = 0.0;
    if (step > 0.0) zf = std::min(std::max(std::floor(-lo / step), 0.0), levels);
    const double zcands[2] = {zf, std::min(zf + 1.0, levels)};
    for (double zd : zcands) {
      Candidate c = evaluate_candidate(values, bits, alpha,
                                       static_cast<std::uint32_t>(zd), scale_half);
      if (!have || c.error < best.error) {
        best = std::move(c);
        have = true;
      }
    }
  }
  return {best.params, std::move(best.codes), best.error};
}

DqRow dq_quantize_row(std::span<const double> values, std::uint32_t bits,
                      std::uint32_t group) {
  DqRow row;
  row.bits = bits;
  row.group = group;
  row.count = static_cast<std::uint32_t>(values.size());
  row.codes.reserve(values.size());
  for (std::size_t off = 0; off < values.size(); off += group) {
    const std::size_t n = std::min<std::size_t>(group, values.size() - off);
    DqGroupResult r = grid_search_dq(values.subspan(off, n), bits);
    row.groups.push_back(r.params);
    row.codes.insert(row.codes.end(), r.codes.begin(), r.codes.end());
  }
  return row;
}

std::vector<double> dq_reconstruct(const DqRow& row) {
  std::vector<double> out(row.count);
  for (std::size_t i = 0; i < row.count; ++i)
    out[i] = dq_decode(row.groups[i / row.group], row.codes[i], row.bits);
  return out;
}

DeployedBlock apply_dq(const BlockWeights& w, const BlockParams& p, const QuantConfig& cfg) {
  DeployedBlock out;
  for (std::size_t l = 0; l < 6; ++l) {
    const LayerParams& lp = p[l];
    DeployedLayer& dl = out.layers[l];
    dl.grouping = lp.grouping;
    const Tensor wt = transposed(w.layer(l));  // quantization view
    Tensor wq_t(wt.shape);
    const std::size_t n_q = cfg.levels();

    for (std::size_t s = 0; s < lp.subsets.size(); ++s) {
      const SubsetParams& sp = lp.subsets[s];
      const DerivedCodebook trained = derive_codebook(sp, cfg.epsilon);
      const std::size_t n_groups = sp.n_groups();

      DeployedSubset ds;
      ds.group_count = n_groups;

      // Rank-1 scales keep full resolution: one rounding to binary16.
      Tensor scales_dq({sp.rank(), n_groups});
      ds.s1_half.resize(n_groups);
      for (std::size_t g = 0; g < n_groups; ++g) {
        ds.s1_half[g] = half_from_double(trained.scales.data[g]);
        scales_dq.data[g] = half_to_double(ds.s1_half[g]);
      }
      // Double quantization of the scale rows first, then the QPS rows.
      for (std::size_t r = 2; r <= sp.rank(); ++r) {
        const std::span<const double> row{trained.scales.data.data() + (r - 1) * n_groups,
                                          n_groups};
        DqRow dq = dq_quantize_row(row, cfg.dq_bits_s, cfg.dq_group);
        const std::vector<double> rec = dq_reconstruct(dq);
        std::copy(rec.begin(), rec.end(), scales_dq.data.begin() + (r - 1) * n_groups);
        ds.s_rows.push_back(std::move(dq));
      }
      Tensor qps_dq({sp.rank(), n_q});
      for (std::size_t r = 1; r <= sp.rank(); ++r) {
        const std::span<const double> row{trained.qps.data.data() + (r - 1) * n_q, n_q};
        DqRow dq = dq_quantize_row(row, cfg.dq_bits_v, cfg.dq_group);
        const std::vector<double> rec = dq_reconstruct(dq);
        std::copy(rec.begin(), rec.end(), qps_dq.data.begin() + (r - 1) * n_q);
        ds.v_rows.push_back(std::move(dq));
      }

      // The trained offset keeps its codeword identity; only its value is
      // re-read from the dq-reconstructed codebook. Re-running the nearest
      // substitution here could flip near-midpoint selections and shift a
      // whole group's codebook by a full gap.
      const Tensor cpre_dq = build_codebook(scales_dq, qps_dq, Tensor({n_groups}));
      const SortedCodebook pre_sorted_dq = sort_clamp_rows(cpre_dq, cfg.epsilon);
      ds.offset_index.resize(n_groups);
      ds.codebook = Tensor({n_groups, n_q});
      for (std::size_t g = 0; g < n_groups; ++g) {
        const std::uint32_t column =
            trained.pre_sorted.perm[g * n_q + trained.offset_index[g]];
        std::uint32_t z_dq = 0;
        for (std::size_t m = 0; m < n_q; ++m)
          if (pre_sorted_dq.perm[g * n_q + m] == column) {
            z_dq = static_cast<std::uint32_t>(m);
            break;
          }
        ds.offset_index[g] = z_dq;
        const double offset = pre_sorted_dq.values[g * n_q + z_dq];
        for (std::size_t k = 0; k < n_q; ++k)
          ds.codebook.data[g * n_q + k] = cpre_dq.data[g * n_q + k] - offset;
      }
      ds.scales = std::move(scales_dq);
      ds.qps = std::move(qps_dq);

      const SortedCodebook sorted = sort_clamp_rows(ds.codebook, cfg.epsilon);
      const std::size_t gsz = lp.grouping.group_size;
      const std::size_t first = lp.grouping.subset_first_group(s);
      Tensor wslice({n_groups, gsz});
      std::copy(wt.data.begin() + first * gsz, wt.data.begin() + (first + n_groups) * gsz,
                wslice.data.begin());
      QuantizeResult q = quantize_segmented(wslice, sorted, gsz);
      ds.indices = std::move(q.indices);
      std::copy(q.values.data.begin(), q.values.data.end(), wq_t.data.begin() + first * gsz);

      dl.subsets.push_back(std::move(ds));
    }
    dl.wq = transposed(wq_t);
  }
  return out;
}

}  // namespace lcq
