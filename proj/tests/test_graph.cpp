#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcq/graph.hpp"
#include "lcq/quantizer.hpp"
#include "lcq/rng.hpp"

using namespace lcq;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// Deterministic non-degenerate weighting so losses are never constant in x.
Tensor probe_weights(const std::vector<std::size_t>& shape) {
  Tensor w(shape);
  for (std::size_t i = 0; i < w.numel(); ++i)
    w.data[i] = std::sin(0.7 * static_cast<double>(i) + 0.3) + 1.5;
  return w;
}

// Finite-difference check of d(sum of w*f(x))/dx for a single-input builder.
double fd_check_unary(const std::function<NodeId(Graph&, NodeId)>& build, const Tensor& x,
                      double step = 1e-6) {
  const auto make_loss = [&](Graph& g, const Tensor& p, NodeId& in) {
    in = g.input("x", p);
    const NodeId y = build(g, in);
    const NodeId w = g.constant(probe_weights(g.value(y).shape));
    return g.reduce_sum(g.mul(y, w));
  };
  const ScalarField field{
      [&](const Tensor& p) {
        Graph g;
        NodeId in = -1;
        const NodeId loss = make_loss(g, p, in);
        return g.value(loss).data[0];
      },
      [&](const Tensor& p) {
        Graph g;
        NodeId in = -1;
        const NodeId loss = make_loss(g, p, in);
        const NodeId wrt[] = {in};
        return g.backward(loss, wrt)[0];
      }};
  return finite_diff_check(field, x, step);
}

}  // namespace

TEST_CASE("forward examples from hand arithmetic") {
  Graph g;
  const NodeId a = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  const NodeId b = g.constant(Tensor::matrix({{1}, {1}}));
  const NodeId c = g.matmul(a, b);
  CHECK(g.value(c).data[0] == 3.0);
  CHECK(g.value(c).data[1] == 7.0);

  const NodeId s = g.softmax(g.constant(Tensor::matrix({{0, 0}})));
  CHECK(g.value(s).data[0] == 0.5);
  CHECK(g.value(s).data[1] == 0.5);

  // Layer-norm of a constant row is all zeros thanks to the variance floor.
  const NodeId ln = g.layer_norm(g.constant(Tensor::matrix({{2.5, 2.5, 2.5, 2.5}})));
  for (double v : g.value(ln).data) CHECK(v == 0.0);
}

TEST_CASE("backward basics") {
  // loss = sum(x*x), x = [3] -> grad 6
  {
    Graph g;
    const NodeId x = g.input("x", Tensor::row({3}));
    const NodeId loss = g.squared_norm(x);
    const NodeId wrt[] = {x};
    CHECK(g.backward(loss, wrt)[0].data[0] == doctest::Approx(6.0).epsilon(1e-12));
  }
  // loss = sum(tanh(x)), x = [0] -> grad 1
  {
    Graph g;
    const NodeId x = g.input("x", Tensor::row({0}));
    const NodeId loss = g.reduce_sum(g.tanh(x));
    const NodeId wrt[] = {x};
    CHECK(g.backward(loss, wrt)[0].data[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("every primitive matches central finite differences") {
  RngStream rng(42);
  const double tol = 1e-6;

  CHECK(fd_check_unary([](Graph& g, NodeId x) { return g.tanh(x); },
                       random_tensor({3, 4}, rng)) < tol);
  CHECK(fd_check_unary([](Graph& g, NodeId x) { return g.softmax(x); },
                       random_tensor({3, 5}, rng)) < tol);
  CHECK(fd_check_unary([](Graph& g, NodeId x) { return g.layer_norm(x); },
                       random_tensor({3, 6}, rng)) < tol);
  CHECK(fd_check_unary([](Graph& g, NodeId x) { return g.gelu(x); },
                       random_tensor({2, 7}, rng)) < tol);
  CHECK(fd_check_unary([](Graph& g, NodeId x) { return g.transpose(x); },
                       random_tensor({3, 4}, rng)) < tol);
  CHECK(fd_check_unary([](Graph& g, NodeId x) { return g.reshape(x, {12}); },
                       random_tensor({3, 4}, rng)) < tol);
  // Clip checked away from its kinks.
  {
    Tensor x = random_tensor({4, 4}, rng, 2.0);
    for (double& v : x.data)
      if (std::fabs(std::fabs(v) - 1.0) < 1e-3) v += 0.01;
    CHECK(fd_check_unary([](Graph& g, NodeId xx) { return g.clip(xx, -1.0, 1.0); }, x) < tol);
  }

  // Binary ops and broadcasts via mixed graphs.
  {
    const Tensor a0 = random_tensor({3, 4}, rng);
    const Tensor b0 = random_tensor({4, 5}, rng);
    const ScalarField field{
        [&](const Tensor& p) {
          Graph g;
          const NodeId a = g.input("a", p);
          const NodeId b = g.constant(b0);
          return g.value(g.squared_norm(g.matmul(a, b))).data[0];
        },
        [&](const Tensor& p) {
          Graph g;
          const NodeId a = g.input("a", p);
          const NodeId b = g.constant(b0);
          const NodeId loss = g.squared_norm(g.matmul(a, b));
          const NodeId wrt[] = {a};
          return g.backward(loss, wrt)[0];
        }};
    CHECK(finite_diff_check(field, a0, 1e-6) < tol);

    const ScalarField field_b{
        [&](const Tensor& p) {
          Graph g;
          const NodeId a = g.constant(a0);
          const NodeId b = g.input("b", p);
          return g.value(g.squared_norm(g.matmul(a, b))).data[0];
        },
        [&](const Tensor& p) {
          Graph g;
          const NodeId a = g.constant(a0);
          const NodeId b = g.input("b", p);
          const NodeId loss = g.squared_norm(g.matmul(a, b));
          const NodeId wrt[] = {b};
          return g.backward(loss, wrt)[0];
        }};
    CHECK(finite_diff_check(field_b, b0, 1e-6) < tol);
  }
  {
    // add/sub/mul/broadcast_rows/broadcast_cols/broadcast_full/concat in one net.
    const Tensor vec = random_tensor({4}, rng);
    const ScalarField field{
        [&](const Tensor& p) {
          Graph g;
          const NodeId v = g.input("v", p);
          const NodeId r = g.broadcast_rows(v, 3);
          const NodeId c = g.broadcast_cols(v, 3);
          const NodeId s = g.broadcast_full(g.reduce_sum(v), {3, 4});
          const NodeId mixed = g.mul(g.add(r, g.transpose(c)), g.sub(s, g.transpose(c)));
          const NodeId cat = g.concat_rows({mixed, r});
          return g.value(g.squared_norm(cat)).data[0];
        },
        [&](const Tensor& p) {
          Graph g;
          const NodeId v = g.input("v", p);
          const NodeId r = g.broadcast_rows(v, 3);
          const NodeId c = g.broadcast_cols(v, 3);
          const NodeId s = g.broadcast_full(g.reduce_sum(v), {3, 4});
          const NodeId mixed = g.mul(g.add(r, g.transpose(c)), g.sub(s, g.transpose(c)));
          const NodeId cat = g.concat_rows({mixed, r});
          const NodeId loss = g.squared_norm(cat);
          const NodeId wrt[] = {v};
          return g.backward(loss, wrt)[0];
        }};
    CHECK(finite_diff_check(field, vec, 1e-6) < tol);
  }
}

TEST_CASE("sort-clamp gradient matches finite differences away from ties") {
  RngStream rng(7);
  Tensor c({2, 4});
  for (double& v : c.data) v = rng.uniform(-1.0, 1.0);
  const ScalarField field{
      [&](const Tensor& p) {
        Graph g;
        const NodeId in = g.input("c", p);
        const NodeId sb = g.sort_clamp(in, 1e-6);
        const NodeId w = g.constant(Tensor::matrix({{0.5, 0.5, 0.5, 0.5}, {0.1, 0.1, 0.1, 0.1}}));
        return g.value(g.squared_norm(g.sub(sb, w))).data[0];
      },
      [&](const Tensor& p) {
        Graph g;
        const NodeId in = g.input("c", p);
        const NodeId sb = g.sort_clamp(in, 1e-6);
        const NodeId w = g.constant(Tensor::matrix({{0.5, 0.5, 0.5, 0.5}, {0.1, 0.1, 0.1, 0.1}}));
        const NodeId loss = g.squared_norm(g.sub(sb, w));
        const NodeId wrt[] = {in};
        return g.backward(loss, wrt)[0];
      }};
  CHECK(finite_diff_check(field, c, 1e-7) < 1e-6);
}

TEST_CASE("quantize codebook-path gradient matches finite differences at safe points") {
  RngStream rng(19);
  // A codebook whose induced selections sit far from every boundary.
  Tensor c({1, 4});
  c.data = {-0.9, -0.3, 0.35, 1.05};
  Tensor w({1, 6});
  w.data = {-1.4, -0.72, -0.1, 0.2, 0.61, 1.4};
  const ScalarField field{
      [&](const Tensor& p) {
        Graph g;
        const NodeId in = g.input("c", p);
        const NodeId sb = g.sort_clamp(in, 1e-6);
        const NodeId q = g.quantize(g.constant(w), sb, 6);
        return g.value(g.squared_norm(q)).data[0];
      },
      [&](const Tensor& p) {
        Graph g;
        const NodeId in = g.input("c", p);
        const NodeId sb = g.sort_clamp(in, 1e-6);
        const NodeId q = g.quantize(g.constant(w), sb, 6);
        const NodeId loss = g.squared_norm(q);
        const NodeId wrt[] = {in};
        return g.backward(loss, wrt)[0];
      }};
  CHECK(finite_diff_check(field, c, 1e-6) < 1e-6);
}

TEST_CASE("straight-through estimator on the quantizee path") {
  // Quantizee gradient is the count of segments whose normalized position
  // lies in [0,1]: 1 inside the range, 0 outside, and 0 in exact mode.
  Tensor c({1, 4});
  c.data = {-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0};
  Tensor w({1, 3});
  w.data = {-5.0, 0.2, 5.0};
  Graph g;
  const NodeId in = g.input("w", w);
  const NodeId sb = g.sort_clamp(g.constant(c), 1e-6);
  const NodeId q = g.quantize(in, sb, 3);
  const NodeId loss = g.reduce_sum(q);
  const NodeId wrt[] = {in};
  const Tensor ste = g.backward(loss, wrt, GradMode::Ste)[0];
  CHECK(ste.data[0] == 0.0);
  CHECK(ste.data[1] == 1.0);
  CHECK(ste.data[2] == 0.0);
  const Tensor exact = g.backward(loss, wrt, GradMode::Exact)[0];
  for (double v : exact.data) CHECK(v == 0.0);

  // Scaling the upstream gradient scales the estimator linearly.
  Graph g2;
  const NodeId in2 = g2.input("w", w);
  const NodeId sb2 = g2.sort_clamp(g2.constant(c), 1e-6);
  const NodeId q2 = g2.quantize(in2, sb2, 3);
  const NodeId loss2 = g2.reduce_sum(g2.mul(q2, g2.constant(Tensor::full({1, 3}, 2.5))));
  const NodeId wrt2[] = {in2};
  const Tensor scaled = g2.backward(loss2, wrt2, GradMode::Ste)[0];
  CHECK(scaled.data[1] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("gradient of a sum equals the sum of per-output gradients") {
  RngStream rng(5);
  const Tensor x0 = random_tensor({3, 3}, rng);
  Graph g;
  const NodeId x = g.input("x", x0);
  const NodeId y1 = g.squared_norm(g.tanh(x));
  const NodeId y2 = g.squared_norm(g.gelu(x));
  const NodeId total = g.add(y1, y2);
  const NodeId wrt[] = {x};
  const Tensor g1 = g.backward(y1, wrt)[0];
  const Tensor g2 = g.backward(y2, wrt)[0];
  const Tensor gt = g.backward(total, wrt)[0];
  for (std::size_t i = 0; i < gt.numel(); ++i)
    CHECK(gt.data[i] == doctest::Approx(g1.data[i] + g2.data[i]).epsilon(1e-12));
}

TEST_CASE("determinism: identical graphs produce bit-identical tensors") {
  RngStream rng1(11), rng2(11);
  const auto build = [](RngStream& rng) {
    Graph g;
    const NodeId x = g.input("x", random_tensor({8, 8}, rng));
    const NodeId y = g.softmax(g.matmul(x, g.transpose(x)));
    g.mark_output(y, "y");
    return g.outputs().at("y");
  };
  const Tensor a = build(rng1);
  const Tensor b = build(rng2);
  REQUIRE(a.numel() == b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("forward_eval rebinds named inputs and recomputes in order") {
  Graph g;
  const NodeId x = g.input("x", Tensor::row({1, 2}));
  const NodeId y = g.squared_norm(x);
  g.mark_output(y, "norm");
  auto out1 = forward_eval(g, {{"x", Tensor::row({3, 4})}});
  CHECK(out1.at("norm").data[0] == 25.0);
  auto out2 = forward_eval(g, {{"x", Tensor::row({3, 4})}});
  CHECK(out2.at("norm").data[0] == 25.0);
}

TEST_CASE("errors: shape mismatch, non-finite, non-leaf gradient request") {
  Graph g;
  const NodeId a = g.constant(Tensor::matrix({{1, 2}}));
  const NodeId b = g.constant(Tensor::matrix({{1, 2, 3}}));
  CHECK_THROWS_AS(g.add(a, b), ShapeError);
  CHECK_THROWS_AS(g.matmul(a, b), ShapeError);

  const NodeId big = g.constant(Tensor::full({1, 1}, 1e308));
  CHECK_THROWS_AS(g.mul(big, big), NumericError);

  const NodeId x = g.input("x", Tensor::row({1}));
  const NodeId y = g.tanh(x);
  const NodeId loss = g.reduce_sum(y);
  const NodeId wrt[] = {y};
  CHECK_THROWS_AS(g.backward(loss, wrt), ShapeError);
}

TEST_CASE("finite_diff_check on analytic cases") {
  // f(x) = x^2 at x = 3
  const ScalarField square{
      [](const Tensor& p) { return p.data[0] * p.data[0]; },
      [](const Tensor& p) {
        Tensor g({1});
        g.data[0] = 2.0 * p.data[0];
        return g;
      }};
  CHECK(finite_diff_check(square, Tensor::row({3}), 1e-6) < 1e-8);

  // f(x) = tanh(x) at x = 0.5
  const ScalarField th{
      [](const Tensor& p) { return std::tanh(p.data[0]); },
      [](const Tensor& p) {
        Tensor g({1});
        const double t = std::tanh(p.data[0]);
        g.data[0] = 1.0 - t * t;
        return g;
      }};
  CHECK(finite_diff_check(th, Tensor::row({0.5}), 1e-6) < 1e-8);
}
