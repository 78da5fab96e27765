// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/tensor.hpp"

#include <cmath>
#include <sstream>

#include "sota/kernels.hpp"
#include "sota/util.hpp"

namespace sota {

namespace {
size_t shape_product(const std::vector<size_t>& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_product(shape) != data.size())
    throw NumericError("tensor shape/data mismatch: " + shape_str());
}

Tensor Tensor::zeros(std::vector<size_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(shape_product(t.shape), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<size_t> shape, double v) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::vec(std::initializer_list<double> v) {
  return Tensor({v.size()}, std::vector<double>(v));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const size_t m = rows.size();
  const size_t n = m ? rows.begin()->size() : 0;
  Tensor t = zeros({m, n});
  size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != n) throw NumericError("ragged row in Tensor::from_rows");
    size_t j = 0;
    for (double v : row) t(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor Tensor::identity(size_t n) {
  Tensor t = zeros({n, n});
  for (size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

size_t Tensor::rows() const {
  if (rank() != 2) throw NumericError("rows() on tensor of rank " + std::to_string(rank()));
  return shape[0];
}

size_t Tensor::cols() const {
  if (rank() != 2) throw NumericError("cols() on tensor of rank " + std::to_string(rank()));
  return shape[1];
}

double& Tensor::operator()(size_t i, size_t j) { return data[i * shape[1] + j]; }
double Tensor::operator()(size_t i, size_t j) const { return data[i * shape[1] + j]; }

bool Tensor::finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream ss;
  ss << "[";
  for (size_t i = 0; i < shape.size(); ++i) ss << (i ? "x" : "") << shape[i];
  ss << "]";
  return ss.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw NumericError("matmul shape mismatch " + a.shape_str() + " * " + b.shape_str());
  Tensor c = Tensor::zeros({a.rows(), b.cols()});
  kern::matmul_acc(c.data.data(), a.data.data(), b.data.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw NumericError("transpose needs rank 2, got " + a.shape_str());
  Tensor t = Tensor::zeros({a.cols(), a.rows()});
  for (size_t i = 0; i < a.rows(); ++i)
    for (size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw NumericError("max_abs_diff shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

void require_shape(const Tensor& t, const std::vector<size_t>& shape, const std::string& what) {
  if (t.shape != shape) {
    Tensor want = Tensor::zeros(shape);
    throw NumericError(what + ": expected shape " + want.shape_str() + ", got " + t.shape_str());
  }
}

}  // namespace sota
