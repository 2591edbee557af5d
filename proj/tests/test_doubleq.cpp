#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcq/doubleq.hpp"
#include "lcq/half.hpp"
#include "lcq/rng.hpp"
#include "lcq/trainer.hpp"

using namespace lcq;

namespace {

// Independent re-evaluation of one grid candidate, mirroring the committed
// scheme: f16 scale from the shrunk range, both zero-code roundings.
double oracle_best_error(std::span<const double> values, std::uint32_t bits) {
  double vmin = values[0], vmax = values[0];
  for (double v : values) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  const double levels = static_cast<double>((1u << bits) - 1);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 70; ++i) {
    const double alpha = static_cast<double>(100 - i) / 100.0;
    const double lo = alpha * vmin;
    const std::uint16_t sh = half_from_double(alpha * (vmax - vmin) / 2.0);
    const double step = half_to_double(sh) * 2.0 / levels;
    double zf = 0.0;
    if (step > 0.0) zf = std::min(std::max(std::floor(-lo / step), 0.0), levels);
    for (double zd : {zf, std::min(zf + 1.0, levels)}) {
      double err = 0.0;
      for (double v : values) {
        double code = zd;
        if (step > 0.0)
          code = std::min(std::max(std::nearbyint(v / step + zd), 0.0), levels);
        // the committed reconstruction expression, bit for bit
        const double rec = half_to_double(sh) * (code - zd) / levels * 2.0;
        err += (v - rec) * (v - rec);
      }
      best = std::min(best, err);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("constant group reconstructs exactly") {
  // 3.0 * 15 / 2 = 22.5 and 2.0 * 255 / 2 = 255 are binary16-representable.
  {
    const double g[] = {3.0, 3.0, 3.0, 3.0};
    const DqGroupResult r = grid_search_dq(g, 4);
    CHECK(r.error == 0.0);
    for (std::uint32_t c : r.codes) CHECK(c == 1);
    CHECK(dq_decode(r.params, r.codes[0], 4) == 3.0);
  }
  {
    const double g[] = {2.0, 2.0};
    const DqGroupResult r = grid_search_dq(g, 8);
    CHECK(r.error == 0.0);
  }
  {
    const double g[] = {0.0, 0.0, 0.0};
    const DqGroupResult r = grid_search_dq(g, 4);
    CHECK(r.error == 0.0);
    for (std::uint32_t c : r.codes) CHECK(c == 0);
  }
}

TEST_CASE("exactly representable uniform group has zero error") {
  // {0,1,2,3} at 2 bits: levels 0..3, step 1 at alpha = 1 with scale 1.5.
  const double g[] = {0.0, 1.0, 2.0, 3.0};
  const DqGroupResult r = grid_search_dq(g, 2);
  CHECK(r.error == 0.0);
  const auto rec = dq_reconstruct(DqRow{2, 16, 4, {r.params}, r.codes});
  for (std::size_t i = 0; i < 4; ++i) CHECK(rec[i] == g[i]);
}

TEST_CASE("returned alpha attains the exhaustive-grid minimum") {
  RngStream rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> vals(16);
    for (double& v : vals) v = 0.05 * rng.normal();
    for (std::uint32_t bits : {4u, 8u}) {
      const DqGroupResult r = grid_search_dq(vals, bits);
      CHECK(r.error == oracle_best_error(vals, bits));
    }
  }
}

TEST_CASE("dq-then-dequantize values stay in the snapped clip window") {
  RngStream rng(18);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> vals(16);
    for (double& v : vals) v = rng.uniform(-0.2, 0.15);
    const DqGroupResult r = grid_search_dq(vals, 4);
    const double levels = 15.0;
    const double step = half_to_double(r.params.scale_half) * 2.0 / levels;
    const double lo = -static_cast<double>(r.params.zero_code) * step;
    const double hi = (levels - static_cast<double>(r.params.zero_code)) * step;
    for (std::uint32_t c : r.codes) {
      const double v = dq_decode(r.params, c, 4);
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
    // The representable window always contains exact zero.
    CHECK(dq_decode(r.params, r.params.zero_code, 4) == 0.0);
  }
}

TEST_CASE("row quantization chunks by dq group") {
  RngStream rng(19);
  std::vector<double> vals(40);  // 16 + 16 + 8: partial final chunk
  for (double& v : vals) v = rng.normal();
  const DqRow row = dq_quantize_row(vals, 8, 16);
  CHECK(row.groups.size() == 3);
  CHECK(row.codes.size() == 40);
  const auto rec = dq_reconstruct(row);
  CHECK(rec.size() == 40);
  double err = 0.0;
  for (std::size_t i = 0; i < 40; ++i) err += (rec[i] - vals[i]) * (rec[i] - vals[i]);
  // 8-bit reconstruction of a unit-scale row is tight.
  CHECK(err / 40.0 < 1e-4);
}

TEST_CASE("apply_dq keeps exact zero in every deployed codebook row") {
  ModelSpec spec;
  spec.blocks = 1;
  spec.dim = 8;
  spec.ff_dim = 16;
  spec.heads = 2;
  spec.samples = 2;
  spec.seq_len = 4;
  spec.seed = 5;
  const GeneratedModel m = gen_calibration(spec);
  QuantConfig cfg;
  cfg.bits = 2;
  cfg.group_size = 8;
  cfg.groups_per_subset = 4;
  cfg.seed = 5;
  RngStream rng(substream_seed(cfg.seed, 0x4000));
  BlockParams p = init_block_params(m.blocks[0], cfg, rng);
  for (Tensor* t : param_tensors(p))
    for (double& v : t->data) v += 0.2 * std::sin(static_cast<double>(t->numel()) + v);

  const DeployedBlock dep = apply_dq(m.blocks[0], p, cfg);
  for (std::size_t l = 0; l < 6; ++l) {
    for (const DeployedSubset& ds : dep.layers[l].subsets) {
      const std::size_t n_q = cfg.levels();
      for (std::size_t g = 0; g < ds.group_count; ++g) {
        double closest = 1e300;
        for (std::size_t k = 0; k < n_q; ++k)
          closest = std::min(closest, std::fabs(ds.codebook.data[g * n_q + k]));
        CHECK(closest == 0.0);
      }
      // every stored scale is exactly a binary16 value
      for (std::size_t g = 0; g < ds.group_count; ++g)
        CHECK(ds.scales.data[g] == half_to_double(ds.s1_half[g]));
    }
  }
}

TEST_CASE("rank one leaves scale rows untouched and still dq-compresses the QPS") {
  ModelSpec spec;
  spec.blocks = 1;
  spec.dim = 8;
  spec.ff_dim = 16;
  spec.heads = 2;
  spec.samples = 2;
  spec.seq_len = 4;
  spec.seed = 6;
  const GeneratedModel m = gen_calibration(spec);
  QuantConfig cfg;
  cfg.bits = 2;
  cfg.group_size = 8;
  cfg.rank = 1;
  cfg.seed = 6;
  RngStream rng(substream_seed(cfg.seed, 0x4000));
  const BlockParams p = init_block_params(m.blocks[0], cfg, rng);
  const DeployedBlock dep = apply_dq(m.blocks[0], p, cfg);
  for (const DeployedSubset& ds : dep.layers[0].subsets) {
    CHECK(ds.s_rows.empty());
    CHECK(ds.v_rows.size() == 1);
    CHECK(ds.v_rows[0].bits == cfg.dq_bits_v);
  }
}

TEST_CASE("deployed quantized weights match dequantization of stored data") {
  ModelSpec spec;
  spec.blocks = 1;
  spec.dim = 8;
  spec.ff_dim = 16;
  spec.heads = 2;
  spec.samples = 2;
  spec.seq_len = 4;
  spec.seed = 7;
  const GeneratedModel m = gen_calibration(spec);
  QuantConfig cfg;
  cfg.bits = 2;
  cfg.group_size = 8;
  cfg.groups_per_subset = 4;
  cfg.seed = 7;
  RngStream rng(substream_seed(cfg.seed, 0x4000));
  const BlockParams p = init_block_params(m.blocks[0], cfg, rng);
  const DeployedBlock dep = apply_dq(m.blocks[0], p, cfg);

  for (std::size_t l = 0; l < 6; ++l) {
    const DeployedLayer& dl = dep.layers[l];
    const Tensor wt = transposed(m.blocks[0].layer(l));
    // Rebuild each subset's weights from codebook + indices only.
    Tensor rebuilt(wt.shape);
    std::size_t first = 0;
    for (const DeployedSubset& ds : dl.subsets) {
      const SortedCodebook sorted = sort_clamp_rows(ds.codebook, cfg.epsilon);
      const Tensor wq = dequantize(sorted, ds.indices,
                                   {ds.group_count, dl.grouping.group_size},
                                   dl.grouping.group_size);
      std::copy(wq.data.begin(), wq.data.end(),
                rebuilt.data.begin() + first * dl.grouping.group_size);
      first += ds.group_count;
    }
    const Tensor expected = transposed(dl.wq);
    for (std::size_t e = 0; e < rebuilt.numel(); ++e)
      CHECK(rebuilt.data[e] == expected.data[e]);
  }
}
