// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace sota {

// Dense row-major tensor of doubles. The shape product always equals the
// data length; ops that could produce NaN/Inf are checked at the tape
// level, not here.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<size_t> shape);
  static Tensor full(std::vector<size_t> shape, double v);
  static Tensor scalar(double v);
  static Tensor vec(std::initializer_list<double> v);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(size_t n);

  size_t size() const { return data.size(); }
  size_t rank() const { return shape.size(); }
  size_t rows() const;  // requires rank 2
  size_t cols() const;  // requires rank 2

  double& operator()(size_t i, size_t j);
  double operator()(size_t i, size_t j) const;
  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  bool finite() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

double max_abs_diff(const Tensor& a, const Tensor& b);

void require_shape(const Tensor& t, const std::vector<size_t>& shape, const std::string& what);

}  // namespace sota
