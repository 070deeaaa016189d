// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tcd {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view s);
/// Order-dependent combination of two 64-bit seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Seeded generator with platform-independent sampling (the std distributions
/// are implementation-defined, so they are avoided).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::int64_t below(std::int64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tcd
