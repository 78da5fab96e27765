// Copyright 2026 The SOTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sota {

// Error taxonomy maps onto CLI exit codes: ConfigError -> 2,
// DataError -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a, used for config hashes and output fingerprints.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex64(uint64_t v);

// Hash of a file's raw bytes; throws DataError if unreadable.
uint64_t hash_file(const std::string& path);

// Runs fn(i) for i in [0, n) on up to n_threads workers. Work is split
// into contiguous chunks so results never depend on scheduling.
void parallel_for(size_t n, size_t n_threads, const std::function<void(size_t)>& fn);

// Same splitting, but the callback also receives the worker index that
// owns the element, for per-worker accumulation buffers.
void parallel_for_workers(size_t n, size_t n_threads,
                          const std::function<void(size_t, size_t)>& fn);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace sota
