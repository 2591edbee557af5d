#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lcq/codebook.hpp"
#include "lcq/quantizer.hpp"
#include "lcq/rng.hpp"
#include "lcq/verify.hpp"

using namespace lcq;

namespace {

SortedCodebook sorted_row(std::initializer_list<double> vals, double eps = 1e-6) {
  Tensor c({1, vals.size()});
  std::size_t i = 0;
  for (double v : vals) c.data[i++] = v;
  return sort_clamp_rows(c, eps);
}

double q1(double w, const SortedCodebook& cb) {
  Tensor t({1, 1});
  t.data[0] = w;
  return quantize_segmented(t, cb, 1).values.data[0];
}

}  // namespace

TEST_CASE("two-bit codebook quantization cases") {
  const auto cb = sorted_row({-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0});
  CHECK(q1(0.7, cb) == 1.0);          // nearest neighbour
  CHECK(q1(-5.0, cb) == -1.0);        // clips to the smallest codeword
  CHECK(q1(5.0, cb) == 1.0);          // clips to the largest codeword
  CHECK(q1(1.0 / 3.0, cb) == 1.0 / 3.0);  // codeword maps to itself
}

TEST_CASE("midpoint ties go to the even sorted position") {
  const auto cb = sorted_row({-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0});
  // Exact midpoints of the three segments. Positions are 1-based in the
  // even-position rule: segment 1 moves up to position 2, segment 2 stays at
  // position 2, segment 3 moves up to position 4.
  CHECK(q1(-2.0 / 3.0, cb) == -1.0 / 3.0);
  CHECK(q1(0.0, cb) == -1.0 / 3.0);
  CHECK(q1(2.0 / 3.0, cb) == 1.0);
  // The oracle agrees on all three.
  CHECK(oracle_quantize(-2.0 / 3.0, cb.row(0)) == -1.0 / 3.0);
  CHECK(oracle_quantize(0.0, cb.row(0)) == -1.0 / 3.0);
  CHECK(oracle_quantize(2.0 / 3.0, cb.row(0)) == 1.0);
}

TEST_CASE("index form recovers sorted positions and dequantizes exactly") {
  const auto cb = sorted_row({-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0});
  Tensor w({1, 3});
  w.data = {-5.0, 0.0, 0.7};
  const auto idx = quantize_indices(w, cb, 3);
  CHECK(idx == std::vector<std::uint32_t>{0, 1, 3});
  const Tensor back = dequantize(cb, idx, {1, 3}, 3);
  const QuantizeResult q = quantize_segmented(w, cb, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back.data[i] == q.values.data[i]);
}

TEST_CASE("single-codeword row: all gaps clamped from zero") {
  const auto cb = sorted_row({0.7, 0.7, 0.7, 0.7});
  const auto row = cb.row(0);
  for (std::size_t k = 1; k < 4; ++k)
    CHECK(row[k] - row[k - 1] == doctest::Approx(1e-6).epsilon(1e-9));
  Tensor w({1, 2});
  w.data = {0.7, -3.0};
  const auto idx = quantize_indices(w, cb, 2);
  CHECK(idx[0] == 0);
  CHECK(idx[1] == 0);
}

TEST_CASE("unsorted codebook input is rejected by the quantizer") {
  SortedCodebook cb;
  cb.n_q = 3;
  cb.values = {0.5, -0.5, 1.0};
  cb.perm = {0, 1, 2};
  Tensor w({1, 1});
  CHECK_THROWS_AS(quantize_segmented(w, cb, 1), ShapeError);
}

TEST_CASE("monotonicity: larger weights never quantize lower") {
  RngStream rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor c({1, 8});
    for (double& v : c.data) v = rng.uniform(-1.0, 1.0);
    const auto cb = sort_clamp_rows(c, 1e-6);
    double prev = -1e9, prev_q = -1e9;
    for (int i = 0; i < 50; ++i) {
      const double w = prev + rng.uniform(0.0, 0.2);
      const double qv = q1(w, cb);
      CHECK(qv >= prev_q);
      prev = w;
      prev_q = qv;
    }
  }
}

TEST_CASE("idempotence when codewords are distinct") {
  RngStream rng(78);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor c({1, 4});
    for (double& v : c.data) v = rng.uniform(-1.0, 1.0);
    const auto cb = sort_clamp_rows(c, 1e-6);
    const double w = rng.uniform(-1.5, 1.5);
    const double once = q1(w, cb);
    CHECK(q1(once, cb) == once);
  }
}

TEST_CASE("oracle: exhaustive scan on an empty row throws") {
  CHECK_THROWS_AS(oracle_quantize(0.0, std::span<const double>{}), ShapeError);
}

TEST_CASE("segmented form is equivalent to the oracle on random cases") {
  const auto rep = oracle_equivalence_fuzz(123, 20000);
  CHECK(rep.cases >= 20000);
  CHECK(rep.mismatches == 0);
}

TEST_CASE("sort permutation maps sorted positions to original columns") {
  Tensor c({1, 4});
  c.data = {0.3, -1.0, 0.9, -0.2};
  const auto cb = sort_clamp_rows(c, 1e-6);
  CHECK(cb.perm == std::vector<std::uint32_t>{1, 3, 0, 2});
  const auto row = cb.row(0);
  CHECK(row[0] == -1.0);
  CHECK(row[3] == 0.9);
}
