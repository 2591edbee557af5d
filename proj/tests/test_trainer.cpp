#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcq/trainer.hpp"

using namespace lcq;

namespace {

ModelSpec tiny_spec(std::uint64_t seed = 0) {
  ModelSpec s;
  s.blocks = 2;
  s.dim = 8;
  s.ff_dim = 16;
  s.heads = 2;
  s.samples = 4;
  s.seq_len = 4;
  s.seed = seed;
  return s;
}

QuantConfig tiny_cfg(std::uint64_t seed = 0) {
  QuantConfig cfg;
  cfg.bits = 2;
  cfg.group_size = 8;
  cfg.groups_per_subset = 4;
  cfg.epochs = 4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("cosine schedule hits the midpoint value exactly") {
  CHECK(cosine_lr(0.01, 0, 40) == 0.01);
  CHECK(cosine_lr(0.01, 20, 40) == 0.005);
  CHECK(cosine_lr(0.01, 40, 40) == doctest::Approx(0.0).epsilon(1e-18));
  // halving is monotone over the schedule
  for (std::size_t t = 1; t <= 40; ++t)
    CHECK(cosine_lr(0.01, t, 40) <= cosine_lr(0.01, t - 1, 40));
}

TEST_CASE("zero learning rate leaves parameters and loss untouched") {
  const GeneratedModel m = gen_calibration(tiny_spec());
  QuantConfig cfg = tiny_cfg();
  cfg.lr = 0.0;
  const CalibrationSet calib = initial_calibration(m);
  const TrainResult r = optimize_block(m.blocks[0], calib.q, calib.fp, cfg, 0);
  CHECK(r.final_loss == r.initial_loss);
  for (std::size_t e = 1; e < r.trace.size(); ++e)
    CHECK(r.trace[e].mean_loss == r.trace[0].mean_loss);
}

TEST_CASE("default optimization decreases the reconstruction loss") {
  const GeneratedModel m = gen_calibration(tiny_spec(3));
  const QuantConfig cfg = tiny_cfg(3);
  const CalibrationSet calib = initial_calibration(m);
  const TrainResult r = optimize_block(m.blocks[0], calib.q, calib.fp, cfg, 0);
  CHECK(r.final_loss < r.initial_loss);
  CHECK(r.trace.size() == cfg.epochs);
}

TEST_CASE("zero inclusion holds after every optimizer step") {
  const GeneratedModel m = gen_calibration(tiny_spec(1));
  const QuantConfig cfg = tiny_cfg(1);
  const CalibrationSet calib = initial_calibration(m);
  std::size_t checked = 0;
  TrainOptions opts;
  opts.step_callback = [&](const BlockParams& p, std::size_t) {
    for (const auto& layer : p)
      for (const auto& s : layer.subsets) {
        const DerivedCodebook d = derive_codebook(s, cfg.epsilon);
        const std::size_t n_q = s.n_q();
        for (std::size_t g = 0; g < s.n_groups(); ++g) {
          double closest = 1e300;
          for (std::size_t k = 0; k < n_q; ++k)
            closest = std::min(closest, std::fabs(d.codebook.data[g * n_q + k]));
          CHECK(closest == 0.0);
          ++checked;
        }
      }
  };
  optimize_block(m.blocks[0], calib.q, calib.fp, cfg, 0, opts);
  CHECK(checked > 0);
}

TEST_CASE("freezing rank-1 parameters really freezes them") {
  const GeneratedModel m = gen_calibration(tiny_spec(2));
  const QuantConfig cfg = tiny_cfg(2);
  const CalibrationSet calib = initial_calibration(m);
  TrainOptions opts;
  opts.freeze_rank1_and_offset = true;
  const TrainResult r = optimize_block(m.blocks[0], calib.q, calib.fp, cfg, 0, opts);

  RngStream rng(substream_seed(cfg.seed, 0x4000 + 0));
  const BlockParams init = init_block_params(m.blocks[0], cfg, rng);
  for (std::size_t l = 0; l < 6; ++l)
    for (std::size_t s = 0; s < init[l].subsets.size(); ++s) {
      const SubsetParams& a = init[l].subsets[s];
      const SubsetParams& b = r.params[l].subsets[s];
      const std::size_t n_groups = a.n_groups();
      for (std::size_t g = 0; g < n_groups; ++g) {
        CHECK(b.scales_u.data[g] == a.scales_u.data[g]);        // rank-1 row frozen
        CHECK(b.offset_u.data[g] == a.offset_u.data[g]);        // offsets frozen
      }
      bool rank2_moved = false;
      for (std::size_t g = 0; g < n_groups; ++g)
        if (b.scales_u.data[n_groups + g] != a.scales_u.data[n_groups + g])
          rank2_moved = true;
      CHECK(rank2_moved);
      for (std::size_t k = 0; k < a.n_q(); ++k)
        CHECK(b.qps_u.data[k] == a.qps_u.data[k]);              // rank-1 QPS frozen
    }
  CHECK(r.final_loss <= r.initial_loss);
}

TEST_CASE("divergence guard aborts with a diagnostic") {
  const GeneratedModel m = gen_calibration(tiny_spec(4));
  // Fine quantization (8 bits) starts near-exact, so wrecking the parameters
  // between steps blows the per-sample loss far past 10^3x.
  QuantConfig cfg = tiny_cfg(4);
  cfg.bits = 8;
  const CalibrationSet calib = initial_calibration(m);
  TrainOptions opts;
  opts.step_callback = [&](const BlockParams& p, std::size_t) {
    auto& params = const_cast<BlockParams&>(p);
    for (Tensor* t : param_tensors(params)) {
      std::size_t e = 0;
      for (double& v : t->data) v = (e++ % 2) ? 4.0 : -4.0;
    }
  };
  CHECK_THROWS_AS(optimize_block(m.blocks[0], calib.q, calib.fp, cfg, 0, opts),
                  NumericError);
}

TEST_CASE("two-block pipeline propagates features and stays deterministic") {
  const GeneratedModel m = gen_calibration(tiny_spec(5));
  const QuantConfig cfg = tiny_cfg(5);
  const ModelQuantizeResult r1 = quantize_model(m, cfg);
  const ModelQuantizeResult r2 = quantize_model(m, cfg);
  REQUIRE(r1.blocks.size() == 2);

  // Determinism: bit-identical losses and features across runs.
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(r1.blocks[b].train.initial_loss == r2.blocks[b].train.initial_loss);
    CHECK(r1.blocks[b].train.final_loss == r2.blocks[b].train.final_loss);
    CHECK(r1.blocks[b].deployed_loss == r2.blocks[b].deployed_loss);
  }
  for (std::size_t i = 0; i < r1.final_features.q.size(); ++i)
    for (std::size_t k = 0; k < r1.final_features.q[i].numel(); ++k)
      CHECK(r1.final_features.q[i].data[k] == r2.final_features.q[i].data[k]);

  // Block-2 inputs differ between the variants once block 1 is lossy.
  double diff = 0.0;
  for (std::size_t i = 0; i < r1.final_features.q.size(); ++i)
    for (std::size_t k = 0; k < r1.final_features.q[i].numel(); ++k)
      diff += std::fabs(r1.final_features.q[i].data[k] - r1.final_features.fp[i].data[k]);
  CHECK(diff > 0.0);
}

TEST_CASE("block_loss matches a hand-rolled evaluation") {
  const GeneratedModel m = gen_calibration(tiny_spec(6));
  const QuantConfig cfg = tiny_cfg(6);
  RngStream rng(substream_seed(cfg.seed, 0x4000));
  const BlockParams p = init_block_params(m.blocks[0], cfg, rng);
  const CalibrationSet calib = initial_calibration(m);

  const double loss = block_loss(calib.q, calib.fp, m.blocks[0], p, cfg);
  const auto wq = quantize_block_weights(m.blocks[0], p, cfg);
  BlockWeights q = m.blocks[0];
  for (std::size_t l = 0; l < 6; ++l) q.layer(l) = wq[l];
  double expect = 0.0;
  for (std::size_t i = 0; i < calib.q.size(); ++i) {
    const Tensor yq = block_forward(calib.q[i], q);
    const Tensor t1 = block_forward(calib.fp[i], m.blocks[0]);
    const Tensor t2 = block_forward(calib.q[i], m.blocks[0]);
    double n1 = 0.0, n2 = 0.0;
    for (std::size_t e = 0; e < yq.numel(); ++e)
      n1 += (yq.data[e] - t1.data[e]) * (yq.data[e] - t1.data[e]);
    for (std::size_t e = 0; e < yq.numel(); ++e)
      n2 += (yq.data[e] - t2.data[e]) * (yq.data[e] - t2.data[e]);
    expect += n1 + n2;
  }
  CHECK(loss == expect);
  // At block 1 the histories coincide, so the loss graph's value agrees too.
  LossGraph lg = build_loss_graph(m.blocks[0], p, cfg, calib.q[0],
                                  block_forward(calib.fp[0], m.blocks[0]),
                                  block_forward(calib.q[0], m.blocks[0]));
  double sample0 = 0.0;
  {
    const Tensor yq = block_forward(calib.q[0], q);
    const Tensor t1 = block_forward(calib.fp[0], m.blocks[0]);
    const Tensor t2 = block_forward(calib.q[0], m.blocks[0]);
    for (std::size_t e = 0; e < yq.numel(); ++e) {
      sample0 += (yq.data[e] - t1.data[e]) * (yq.data[e] - t1.data[e]);
      sample0 += (yq.data[e] - t2.data[e]) * (yq.data[e] - t2.data[e]);
    }
  }
  CHECK(lg.graph.value(lg.loss).data[0] == doctest::Approx(sample0).epsilon(1e-13));
}
