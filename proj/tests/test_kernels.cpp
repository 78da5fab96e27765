// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sota/kernels.hpp"
#include "sota/rng.hpp"

using namespace sota;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Runs fn once under the active ISA and once forced scalar, restoring the
// dispatch afterwards.
template <typename F>
void with_scalar(F fn) {
  const kern::Isa saved = kern::active_isa();
  kern::force_isa(kern::Isa::kScalar);
  fn();
  kern::force_isa(saved);
}

}  // namespace

TEST_CASE("dispatched kernels match the scalar reference") {
  Rng rng(42);
  // sizes straddle the vector width so tails are exercised
  for (size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 15u, 64u, 257u}) {
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);

    double dot_ref = 0.0, sum_ref = 0.0, max_ref = 0.0;
    std::vector<double> add_ref(n), sub_ref(n), mul_ref(n), scale_ref(n), axpy_ref = b;
    with_scalar([&] {
      dot_ref = kern::dot(a.data(), b.data(), n);
      sum_ref = kern::sum(a.data(), n);
      max_ref = kern::max_abs(a.data(), n);
      kern::add(add_ref.data(), a.data(), b.data(), n);
      kern::sub(sub_ref.data(), a.data(), b.data(), n);
      kern::mul(mul_ref.data(), a.data(), b.data(), n);
      kern::scale(scale_ref.data(), a.data(), 1.7, n);
      kern::axpy(axpy_ref.data(), -0.3, a.data(), n);
    });

    CHECK(kern::dot(a.data(), b.data(), n) == doctest::Approx(dot_ref).epsilon(1e-13));
    CHECK(kern::sum(a.data(), n) == doctest::Approx(sum_ref).epsilon(1e-13));
    CHECK(kern::max_abs(a.data(), n) == max_ref);  // max is order-independent

    std::vector<double> out(n);
    kern::add(out.data(), a.data(), b.data(), n);
    CHECK(out == add_ref);
    kern::sub(out.data(), a.data(), b.data(), n);
    CHECK(out == sub_ref);
    kern::mul(out.data(), a.data(), b.data(), n);
    CHECK(out == mul_ref);
    kern::scale(out.data(), a.data(), 1.7, n);
    CHECK(out == scale_ref);
    out = b;
    kern::axpy(out.data(), -0.3, a.data(), n);
    for (size_t i = 0; i < n; ++i) CHECK(out[i] == doctest::Approx(axpy_ref[i]).epsilon(1e-14));
  }
}

TEST_CASE("matmul_acc matches a triple-loop reference") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const size_t m = 1 + rng.uniform_int(6);
    const size_t k = 1 + rng.uniform_int(9);
    const size_t n = 1 + rng.uniform_int(11);
    auto a = random_vec(rng, m * k);
    auto b = random_vec(rng, k * n);

    std::vector<double> ref(m * n, 0.0);
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
        ref[i * n + j] = s;
      }

    std::vector<double> c(m * n, 0.0);
    kern::matmul_acc(c.data(), a.data(), b.data(), m, k, n);
    for (size_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("forced scalar dispatch reports scalar") {
  with_scalar([] { CHECK(kern::active_isa() == kern::Isa::kScalar); });
}
