// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace sota {

// Deterministic RNG. All randomness in the project flows from one master
// seed through named substreams (e.g. "data", "train", "eval/17"), so a
// run is reproducible bit-for-bit regardless of thread count. Gaussian
// draws use an explicit Box-Muller transform because the distribution in
// <random> is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed), seed_(seed) {}

  // Substream derivation: hash the label into the seed.
  Rng sub(const std::string& label) const;
  Rng sub(const std::string& label, uint64_t index) const;

  uint64_t bits() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n);

  double normal();

  uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 gen_;
  uint64_t seed_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sota
