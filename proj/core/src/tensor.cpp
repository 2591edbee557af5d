#include "lcq/tensor.hpp"

#include <cmath>
#include <string>

namespace lcq {

std::size_t shape_numel(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
  data.assign(shape_numel(shape), 0.0);
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::row(std::initializer_list<double> vals) {
  Tensor t({vals.size()});
  std::size_t i = 0;
  for (double v : vals) t.data[i++] = v;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Tensor t({r, c});
  std::size_t i = 0;
  for (const auto& rr : rows) {
    if (rr.size() != c) throw ShapeError("ragged matrix initializer");
    for (double v : rr) t.data[i++] = v;
  }
  return t;
}

std::size_t Tensor::rows() const {
  if (shape.size() <= 1) return shape.empty() ? 0 : 1;
  if (shape.size() != 2) throw ShapeError("rows(): tensor is not 2-D: " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() == 1) return shape[0];
  if (shape.size() != 2) throw ShapeError("cols(): tensor is not 2-D: " + shape_str(shape));
  return shape[1];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor transposed(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("transposed: tensor is not 2-D");
  const std::size_t r = t.shape[0], c = t.shape[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = t.data[i * c + j];
  return out;
}

}  // namespace lcq
