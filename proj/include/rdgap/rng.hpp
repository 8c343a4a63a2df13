// Copyright 2026 The rdgap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>

namespace rdgap {

// SplitMix64 finalizer (Steele, Lea & Flood 2014). Bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

// Derives an independent stream key from a parent key and a stream index.
constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t stream) noexcept {
  return mix64(key ^ mix64(stream + kGoldenGamma));
}

// Counter-based generator: the i-th output of stream `key` is
//   mix64(key + (i + 1) * kGoldenGamma)
// which is exactly the SplitMix64 sequence seeded with `key`. Any element can
// be computed without generating its predecessors, so encoder and decoder can
// agree on a value from (key, index) alone.
constexpr std::uint64_t counter_bits(std::uint64_t key, std::uint64_t index) noexcept {
  return mix64(key + (index + 1) * kGoldenGamma);
}

// Maps 64 random bits to a double in [0, 1) with 53 bits of resolution.
constexpr double bits_to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Maps 64 random bits to a double in (0, 1).
constexpr double bits_to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Sequential SplitMix64 stream with portable normal and Gumbel variates.
// Standard-library distributions are implementation-defined, so every
// transformation here is spelled out to keep runs bit-identical everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : key_(seed) {}

  std::uint64_t next_u64() noexcept { return counter_bits(key_, counter_++); }
  double uniform() noexcept { return bits_to_unit(next_u64()); }
  double open_uniform() noexcept { return bits_to_open_unit(next_u64()); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Box-Muller; caches the second variate.
  double normal() noexcept;
  double gumbel() noexcept;
  std::uint64_t below(std::uint64_t bound) noexcept;

  Rng split(std::uint64_t stream) const noexcept { return Rng(derive_key(key_, stream)); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace rdgap
