// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>

namespace sota::kern {

// Data-parallel double-precision kernels behind all tensor arithmetic.
// Every kernel has a scalar reference implementation and, where the host
// supports it, an AVX2+FMA (x86-64) or NEON (aarch64) variant selected
// once at startup. The SOTA_KERNELS environment variable ("scalar",
// "avx2", "neon", "auto") or force_isa() overrides the choice; tests run
// the variants against the scalar reference.

enum class Isa { kScalar, kAvx2, kNeon };

Isa active_isa();
const char* isa_name(Isa isa);

// Overrides dispatch. Throws ConfigError if the requested ISA is not
// supported on this host. Not thread-safe against in-flight kernels.
void force_isa(Isa isa);
void force_isa_from_env();  // reads SOTA_KERNELS, no-op when unset

double dot(const double* a, const double* b, size_t n);
double sum(const double* a, size_t n);
double max_abs(const double* a, size_t n);

void axpy(double* y, double a, const double* x, size_t n);  // y += a*x
void add(double* out, const double* a, const double* b, size_t n);
void sub(double* out, const double* a, const double* b, size_t n);
void mul(double* out, const double* a, const double* b, size_t n);
void scale(double* out, const double* a, double s, size_t n);

// C[m x n] += A[m x k] * B[k x n], all row-major. The inner loop is an
// axpy over rows of B, so it picks up the dispatched kernel.
void matmul_acc(double* c, const double* a, const double* b, size_t m, size_t k, size_t n);

}  // namespace sota::kern
