#include <benchmark/benchmark.h>

#include "lcq/block.hpp"
#include "lcq/codebook.hpp"
#include "lcq/quantizer.hpp"
#include "lcq/rng.hpp"
#include "lcq/storage.hpp"
#include "lcq/trainer.hpp"

namespace {

lcq::SortedCodebook make_codebook(std::size_t rows, std::size_t n_q, std::uint64_t seed) {
  lcq::RngStream rng(seed);
  lcq::Tensor c({rows, n_q});
  for (double& v : c.data) v = rng.uniform(-1.0, 1.0);
  return lcq::sort_clamp_rows(c, 1e-6);
}

void BM_QuantizeSegmented(benchmark::State& state) {
  const std::size_t n_q = static_cast<std::size_t>(state.range(0));
  const std::size_t groups = 64, group_size = 64;
  const auto cb = make_codebook(groups, n_q, 7);
  lcq::RngStream rng(11);
  lcq::Tensor w({groups, group_size});
  for (double& v : w.data) v = rng.uniform(-1.2, 1.2);
  for (auto _ : state) {
    auto q = lcq::quantize_segmented(w, cb, group_size);
    benchmark::DoNotOptimize(q.values.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.numel()));
}
BENCHMARK(BM_QuantizeSegmented)->Arg(4)->Arg(8)->Arg(16);

void BM_OracleQuantize(benchmark::State& state) {
  const std::size_t n_q = static_cast<std::size_t>(state.range(0));
  const auto cb = make_codebook(1, n_q, 7);
  lcq::RngStream rng(11);
  std::vector<double> ws(4096);
  for (double& v : ws) v = rng.uniform(-1.2, 1.2);
  for (auto _ : state) {
    std::size_t acc = 0;
    for (double w : ws) acc += lcq::oracle_quantize_index(w, cb.row(0));
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ws.size()));
}
BENCHMARK(BM_OracleQuantize)->Arg(4)->Arg(8)->Arg(16);

void BM_PackIndices(benchmark::State& state) {
  const std::uint32_t bits = static_cast<std::uint32_t>(state.range(0));
  lcq::RngStream rng(3);
  std::vector<std::uint32_t> idx(16384);
  for (auto& v : idx) v = static_cast<std::uint32_t>(rng.below(1u << bits));
  for (auto _ : state) {
    auto bytes = lcq::pack_indices(idx, bits);
    benchmark::DoNotOptimize(bytes.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(idx.size()));
}
BENCHMARK(BM_PackIndices)->Arg(2)->Arg(3)->Arg(4);

void BM_BlockForward(benchmark::State& state) {
  lcq::ModelSpec spec;
  spec.blocks = 1;
  const lcq::GeneratedModel m = lcq::gen_calibration(spec);
  for (auto _ : state) {
    lcq::Tensor y = lcq::block_forward(m.samples[0], m.blocks[0]);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(BM_BlockForward);

void BM_TrainStep(benchmark::State& state) {
  lcq::ModelSpec spec;
  spec.blocks = 1;
  const lcq::GeneratedModel m = lcq::gen_calibration(spec);
  lcq::QuantConfig cfg;
  lcq::RngStream rng(1);
  lcq::BlockParams params = lcq::init_block_params(m.blocks[0], cfg, rng);
  const lcq::Tensor target_fp = lcq::block_forward(m.samples[1], m.blocks[0]);
  const lcq::Tensor target_q = lcq::block_forward(m.samples[0], m.blocks[0]);
  for (auto _ : state) {
    lcq::LossGraph lg = lcq::build_loss_graph(m.blocks[0], params, cfg, m.samples[0],
                                              target_fp, target_q);
    auto grads = lg.graph.backward(lg.loss, lg.leaves, lcq::GradMode::Ste);
    benchmark::DoNotOptimize(grads.data());
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
