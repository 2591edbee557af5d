#pragma once
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "lcq/errors.hpp"

namespace lcq {

// Dense row-major tensor of 64-bit floats. All optimization-path arithmetic
// works on this type; narrower dtypes exist only at the storage boundary.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);
  static Tensor scalar(double v);
  static Tensor row(std::initializer_list<double> vals);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // 2-D helpers. A rank-1 tensor counts as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& s);
std::string shape_str(const std::vector<std::size_t>& s);
Tensor transposed(const Tensor& t);

}  // namespace lcq
