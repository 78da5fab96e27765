// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>

#include "sota/util.hpp"

#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
#define SOTA_HAVE_AVX2_PATH 1
#include <immintrin.h>
#endif

#if defined(__aarch64__)
#define SOTA_HAVE_NEON_PATH 1
#include <arm_neon.h>
#endif

namespace sota::kern {

// ---------------------------------------------------------------------------
// scalar reference kernels
// ---------------------------------------------------------------------------

namespace {

double dot_scalar(const double* a, const double* b, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_scalar(const double* a, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += a[i];
  return s;
}

double max_abs_scalar(const double* a, size_t n) {
  double m = 0.0;
  for (size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

void axpy_scalar(double* y, double a, const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add_scalar_k(double* out, const double* a, const double* b, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar_k(double* out, const double* a, const double* b, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar_k(double* out, const double* a, const double* b, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_scalar_k(double* out, const double* a, double s, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

// ---------------------------------------------------------------------------
// AVX2 + FMA variants (4 doubles per vector)
// ---------------------------------------------------------------------------

#ifdef SOTA_HAVE_AVX2_PATH

__attribute__((target("avx2,fma"))) inline double hsum256(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

__attribute__((target("avx2,fma"))) double dot_avx2(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  }
  double s = hsum256(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

__attribute__((target("avx2,fma"))) double sum_avx2(const double* a, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double s = hsum256(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

__attribute__((target("avx2,fma"))) double max_abs_avx2(const double* a, size_t n) {
  const __m256d sign = _mm256_set1_pd(-0.0);
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_max_pd(acc, _mm256_andnot_pd(sign, _mm256_loadu_pd(a + i)));
  }
  double lanes[4];
  _mm256_storeu_pd(lanes, acc);
  double m = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

__attribute__((target("avx2,fma"))) void axpy_avx2(double* y, double a, const double* x, size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

__attribute__((target("avx2,fma"))) void add_avx2(double* out, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

__attribute__((target("avx2,fma"))) void sub_avx2(double* out, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

__attribute__((target("avx2,fma"))) void mul_avx2(double* out, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

__attribute__((target("avx2,fma"))) void scale_avx2(double* out, const double* a, double s, size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  }
  for (; i < n; ++i) out[i] = a[i] * s;
}

bool host_has_avx2() { return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"); }

#endif  // SOTA_HAVE_AVX2_PATH

// ---------------------------------------------------------------------------
// NEON variants (2 doubles per vector)
// ---------------------------------------------------------------------------

#ifdef SOTA_HAVE_NEON_PATH

double dot_neon(const double* a, const double* b, size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_neon(const double* a, size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

double max_abs_neon(const double* a, size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vmaxq_f64(acc, vabsq_f64(vld1q_f64(a + i)));
  double m = vmaxvq_f64(acc);
  for (; i < n; ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

void axpy_neon(double* y, double a, const double* x, size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void add_neon(double* out, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_neon(double* out, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_neon(double* out, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_neon(double* out, const double* a, double s, size_t n) {
  const float64x2_t vs = vdupq_n_f64(s);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

#endif  // SOTA_HAVE_NEON_PATH

// ---------------------------------------------------------------------------
// dispatch table
// ---------------------------------------------------------------------------

struct KernelTable {
  double (*dot)(const double*, const double*, size_t);
  double (*sum)(const double*, size_t);
  double (*max_abs)(const double*, size_t);
  void (*axpy)(double*, double, const double*, size_t);
  void (*add)(double*, const double*, const double*, size_t);
  void (*sub)(double*, const double*, const double*, size_t);
  void (*mul)(double*, const double*, const double*, size_t);
  void (*scale)(double*, const double*, double, size_t);
  Isa isa;
};

constexpr KernelTable kScalarTable = {dot_scalar, sum_scalar,   max_abs_scalar,
                                      axpy_scalar, add_scalar_k, sub_scalar_k,
                                      mul_scalar_k, scale_scalar_k, Isa::kScalar};

#ifdef SOTA_HAVE_AVX2_PATH
constexpr KernelTable kAvx2Table = {dot_avx2, sum_avx2, max_abs_avx2, axpy_avx2,
                                    add_avx2, sub_avx2, mul_avx2,     scale_avx2,
                                    Isa::kAvx2};
#endif
#ifdef SOTA_HAVE_NEON_PATH
constexpr KernelTable kNeonTable = {dot_neon, sum_neon, max_abs_neon, axpy_neon,
                                    add_neon, sub_neon, mul_neon,     scale_neon,
                                    Isa::kNeon};
#endif

const KernelTable* best_table() {
#ifdef SOTA_HAVE_AVX2_PATH
  if (host_has_avx2()) return &kAvx2Table;
#endif
#ifdef SOTA_HAVE_NEON_PATH
  return &kNeonTable;
#endif
  return &kScalarTable;
}

const KernelTable* g_table = nullptr;

const KernelTable* table() {
  if (!g_table) {
    g_table = best_table();
    force_isa_from_env();
  }
  return g_table;
}

}  // namespace

Isa active_isa() { return table()->isa; }

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
    case Isa::kNeon: return "neon";
  }
  return "?";
}

void force_isa(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      g_table = &kScalarTable;
      return;
    case Isa::kAvx2:
#ifdef SOTA_HAVE_AVX2_PATH
      if (host_has_avx2()) {
        g_table = &kAvx2Table;
        return;
      }
#endif
      throw ConfigError("SOTA_KERNELS=avx2 requested but host lacks AVX2+FMA");
    case Isa::kNeon:
#ifdef SOTA_HAVE_NEON_PATH
      g_table = &kNeonTable;
      return;
#else
      throw ConfigError("SOTA_KERNELS=neon requested but this is not an aarch64 build");
#endif
  }
}

void force_isa_from_env() {
  const char* env = std::getenv("SOTA_KERNELS");
  if (!env) return;
  const std::string v(env);
  if (v == "auto" || v.empty()) {
    g_table = best_table();
  } else if (v == "scalar") {
    force_isa(Isa::kScalar);
  } else if (v == "avx2") {
    force_isa(Isa::kAvx2);
  } else if (v == "neon") {
    force_isa(Isa::kNeon);
  } else {
    throw ConfigError("unknown SOTA_KERNELS value: " + v);
  }
}

double dot(const double* a, const double* b, size_t n) { return table()->dot(a, b, n); }
double sum(const double* a, size_t n) { return table()->sum(a, n); }
double max_abs(const double* a, size_t n) { return table()->max_abs(a, n); }
void axpy(double* y, double a, const double* x, size_t n) { table()->axpy(y, a, x, n); }
void add(double* out, const double* a, const double* b, size_t n) { table()->add(out, a, b, n); }
void sub(double* out, const double* a, const double* b, size_t n) { table()->sub(out, a, b, n); }
void mul(double* out, const double* a, const double* b, size_t n) { table()->mul(out, a, b, n); }
void scale(double* out, const double* a, double s, size_t n) { table()->scale(out, a, s, n); }

void matmul_acc(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (size_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      if (aik != 0.0) axpy(ci, aik, b + kk * n, n);
    }
  }
}

}  // namespace sota::kern
