#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lcq/half.hpp"
#include "lcq/rng.hpp"
#include "lcq/tensor_io.hpp"

using namespace lcq;

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  t.at(1, 2) = 5.0;
  CHECK(t.data[5] == 5.0);
  CHECK(Tensor::full({2}, 3.0).data[1] == 3.0);
  CHECK_THROWS_AS(Tensor::matrix({{1, 2}, {3}}), ShapeError);
}

TEST_CASE("binary16 conversion round trips and rounds to nearest even") {
  CHECK(half_to_double(half_from_double(1.0)) == 1.0);
  CHECK(half_to_double(half_from_double(-2.5)) == -2.5);
  CHECK(half_to_double(half_from_double(0.0)) == 0.0);
  CHECK(half_to_double(half_from_double(65504.0)) == 65504.0);
  CHECK(half_to_double(half_from_double(1e6)) ==
        std::numeric_limits<double>::infinity());
  CHECK(half_from_double(6.103515625e-05) == 0x0400);  // smallest normal
  CHECK(half_to_double(half_from_double(5.9604644775390625e-08)) ==
        5.9604644775390625e-08);  // smallest subnormal

  // Ties to even: 2048 + 1 is exactly between 2048 and 2050 -> 2048.
  CHECK(half_to_double(half_from_double(2049.0)) == 2048.0);
  // 2051 is exactly between 2050 and 2052 -> 2052.
  CHECK(half_to_double(half_from_double(2051.0)) == 2052.0);

  // Round trip through the encoding is the identity on representables.
  RngStream rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = half_to_double(half_from_double(rng.normal() * 8.0));
    CHECK(half_to_double(half_from_double(v)) == v);
  }
}

TEST_CASE("LCQT container round trips bit-identically") {
  RngStream rng(3);
  std::vector<NamedTensor> ts;
  Tensor a({3, 4});
  for (double& v : a.data) v = rng.normal();
  ts.push_back({"weights", a, Dtype::F64});
  Tensor b({5});
  for (double& v : b.data) v = half_round(rng.normal());
  ts.push_back({"halves", b, Dtype::F16});
  Tensor c({2, 2});
  for (double& v : c.data) v = static_cast<float>(rng.normal());
  ts.push_back({"floats", c, Dtype::F32});
  Tensor d({7});
  for (double& v : d.data) v = static_cast<double>(rng.below(256));
  ts.push_back({"bytes", d, Dtype::U8});

  const auto bytes = encode_lcqt(ts);
  const auto back = decode_lcqt(bytes);
  REQUIRE(back.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].name == ts[i].name);
    CHECK(back[i].dtype == ts[i].dtype);
    REQUIRE(back[i].value.shape == ts[i].value.shape);
    for (std::size_t k = 0; k < ts[i].value.numel(); ++k)
      CHECK(back[i].value.data[k] == ts[i].value.data[k]);
  }
  // Re-encoding the decoded container reproduces the bytes exactly.
  CHECK(encode_lcqt(back) == bytes);
}

TEST_CASE("LCQT validation errors carry offsets") {
  std::vector<NamedTensor> ts{{"x", Tensor::row({1, 2, 3}), Dtype::F64}};
  auto bytes = encode_lcqt(ts);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_lcqt(bad), FormatError);

  bad = bytes;
  bad[4] = 9;  // version
  CHECK_THROWS_AS(decode_lcqt(bad), FormatError);

  bad = bytes;
  bad.resize(bad.size() - 4);  // truncate payload
  CHECK_THROWS_AS(decode_lcqt(bad), FormatError);

  bad = bytes;
  bad.push_back(0);  // trailing garbage
  CHECK_THROWS_AS(decode_lcqt(bad), FormatError);

  try {
    decode_lcqt(bad);
  } catch (const FormatError& e) {
    CHECK(e.offset == bytes.size());
  }
}

TEST_CASE("deterministic rng streams") {
  RngStream a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  CHECK(substream_seed(1, 2) != substream_seed(1, 3));
  CHECK(substream_seed(1, 2) == substream_seed(1, 2));
}
