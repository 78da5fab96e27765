// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar-loop reference implementations used as independent oracles in
// tests. Deliberately written with plain nested loops and no shared code
// with the library's kernels or tape.

#pragma once

#include <cmath>
#include <vector>

namespace sota::testref {

// out[m x n] = a[m x k] * b[k x n]
inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b, size_t m, size_t k,
                                        size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
      out[i * n + j] = s;
    }
  return out;
}

// y = tanh(x W1 + b1) W2 + b2, x row vector
inline std::vector<double> naive_mlp(const std::vector<double>& x,
                                     const std::vector<double>& w1,
                                     const std::vector<double>& b1,
                                     const std::vector<double>& w2,
                                     const std::vector<double>& b2, size_t din, size_t dh,
                                     size_t dout) {
  std::vector<double> h(dh, 0.0);
  for (size_t j = 0; j < dh; ++j) {
    double s = b1[j];
    for (size_t i = 0; i < din; ++i) s += x[i] * w1[i * dh + j];
    h[j] = std::tanh(s);
  }
  std::vector<double> y(dout, 0.0);
  for (size_t j = 0; j < dout; ++j) {
    double s = b2[j];
    for (size_t i = 0; i < dh; ++i) s += h[i] * w2[i * dout + j];
    y[j] = s;
  }
  return y;
}

inline std::vector<double> naive_softmax(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> y(x.size());
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += (y[i] = std::exp(x[i] - mx));
  for (auto& v : y) v /= s;
  return y;
}

}  // namespace sota::testref
