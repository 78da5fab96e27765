// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "sota/rng.hpp"

#include <cmath>

#include "sota/util.hpp"

namespace sota {

Rng Rng::sub(const std::string& label) const {
  uint64_t h = fnv1a(label);
  h = fnv1a(&seed_, sizeof(seed_), h);
  return Rng(h);
}

Rng Rng::sub(const std::string& label, uint64_t index) const {
  uint64_t h = fnv1a(label);
  h = fnv1a(&seed_, sizeof(seed_), h);
  h = fnv1a(&index, sizeof(index), h);
  return Rng(h);
}

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) throw NumericError("uniform_int(0)");
  // rejection sampling keeps the distribution exact
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 in (0,1] so log is finite
  const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1p-53;
  const double u2 = static_cast<double>(gen_() >> 11) * 0x1p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

}  // namespace sota
