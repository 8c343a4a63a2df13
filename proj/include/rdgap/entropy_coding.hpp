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

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rdgap/codec.hpp"

namespace rdgap {

inline constexpr int kFrequencyBits = 16;
inline constexpr std::uint32_t kFrequencyTotal = 1u << kFrequencyBits;

// Integer frequencies summing to kFrequencyTotal: each letter gets
// 1 + floor(p * (total - m)); the remaining mass goes to the largest
// remainders (lower index first on ties).
std::vector<std::uint32_t> quantize_frequencies(std::span<const double> pmf);

// Cumulative frequency tables, one per latent dimension. Position i of a
// stream uses dimension i mod dimension().
class CdfTable {
 public:
  CdfTable() = default;
  CdfTable(std::vector<std::vector<std::uint32_t>> frequencies, int symbol_offset);

  std::size_t dimension() const { return cdf_.size(); }
  std::size_t alphabet_size() const { return cdf_.empty() ? 0 : cdf_.front().size() - 1; }
  int symbol_offset() const { return symbol_offset_; }
  std::span<const std::uint32_t> cdf(std::size_t dim) const { return cdf_[dim]; }
  std::uint32_t frequency(std::size_t dim, int symbol) const;
  // Quantized probability freq / 2^16 (0 outside the alphabet); SymbolModel.
  double probability(std::size_t position, int symbol) const;
  std::uint64_t hash() const;

 private:
  std::vector<std::vector<std::uint32_t>> cdf_;
  int symbol_offset_ = 0;
};

CdfTable build_tables(std::span<const std::vector<double>> pmfs, int symbol_offset);
// Discretized Gaussian tables over [kSymbolMin, kSymbolMax] for the given
// prior scales (each >= kScaleFloor).
CdfTable build_tables(const Eigen::VectorXd& scales);
CdfTable build_tables(const CodecParams& params);

// Carry-less range coder: 64-bit state, 32-bit output words.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq);
  // Emits the shortest dyadic interval inside the final range.
  void finish();
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::uint64_t bit_length() const { return bits_; }

 private:
  void put_word(std::uint32_t w);
  void normalize();

  std::uint64_t low_ = 0;
  std::uint64_t range_ = ~std::uint64_t{0};
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bits_ = 0;
  bool finished_ = false;
};

class RangeDecoder {
 public:
  RangeDecoder(std::span<const std::uint8_t> payload, std::uint64_t bit_length);
  // Decodes one symbol index from a cumulative table (cdf.size() = m + 1).
  std::size_t decode(std::span<const std::uint32_t> cdf);

 private:
  std::uint32_t next_word();
  void normalize();

  std::span<const std::uint8_t> payload_;
  std::uint64_t bit_length_;
  std::size_t word_index_ = 0;
  std::uint64_t low_ = 0;
  std::uint64_t range_ = ~std::uint64_t{0};
  std::uint64_t code_ = 0;
};

// Header: "RDGB", u16 version, u32 symbol count, u64 model hash, u64
// payload bit length (little-endian), then the payload bytes.
struct Bitstream {
  static constexpr std::uint16_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 8 + 8;

  std::uint32_t symbol_count = 0;
  std::uint64_t model_hash = 0;
  std::uint64_t payload_bits = 0;
  std::vector<std::uint8_t> payload;

  std::uint64_t total_bits() const { return 8 * kHeaderBytes + payload_bits; }
  std::vector<std::uint8_t> serialize() const;
  // Throws DiagnosticError on a bad magic, version, or truncated payload.
  static Bitstream parse(std::span<const std::uint8_t> bytes);
};

// Throws DiagnosticError for a symbol with no table entry.
Bitstream encode(std::span<const int> symbols, const CdfTable& tables);
// Throws DiagnosticError when the header hash does not match the tables.
std::vector<int> decode(const Bitstream& stream, const CdfTable& tables);

// Deterministic model path: all columns of x (n x B) coded into one stream.
Bitstream encode_samples(const CodecParams& params, const Eigen::MatrixXd& x);
Eigen::MatrixXd decode_samples(const Bitstream& stream, const CodecParams& params);

struct StreamGap {
  std::size_t symbols = 0;
  double ideal_bits = 0.0;       // under the quantized tables
  double model_ideal_bits = 0.0; // under the real-valued model
  std::uint64_t actual_bits = 0; // payload only
  double overhead_bits() const { return static_cast<double>(actual_bits) - ideal_bits; }
};

// Codes one stream and compares against its ideal code length.
StreamGap measure_stream(std::span<const int> symbols, const CdfTable& tables,
                         const DiscretizedGaussianModel* model = nullptr);

struct AsymptoticGap {
  std::vector<StreamGap> streams;
  std::size_t source_dim = 0;
  std::size_t samples = 0;
  double mean_overhead_bits = 0.0;
  double max_overhead_bits = 0.0;
  double min_overhead_bits = 0.0;
  double mean_relative_overhead = 0.0;  // mean of overhead / ideal over streams with ideal > 0
  double overhead_bits_per_dim = 0.0;   // total payload overhead / (samples * n)
  double header_bits_per_dim = 0.0;     // header cost / (samples * n)
};

// Codes consecutive groups of `samples_per_stream` columns of x as separate
// streams under the deterministic model.
AsymptoticGap measure_asymptotic_gap(const CodecParams& params, const Eigen::MatrixXd& x,
                                     std::size_t samples_per_stream = 1);

// Shared dither for universal quantization.
struct DitherKey {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

// u (L x B) in (-1/2, 1/2); entry (i, j) uses counter j * L + i.
Eigen::MatrixXd dither_offsets(const DitherKey& key, std::size_t latent_dim, std::size_t batch);

struct DitheredCode {
  Bitstream stream;
  Eigen::MatrixXi symbols;       // k = round(z - mu - u)
  Eigen::MatrixXd dither;        // u
  Eigen::MatrixXd latent;        // y = k + u + mu
  Eigen::MatrixXd reconstruction;
  double rate_bits = 0.0;        // header + payload bits
};

// With force_zero_dither the path is bit-identical to encode_samples.
DitheredCode dithered_code(const CodecParams& params, const Eigen::MatrixXd& x, const DitherKey& key,
                           bool force_zero_dither = false);
Eigen::MatrixXd dithered_decode(const Bitstream& stream, const CodecParams& params, const DitherKey& key,
                                bool force_zero_dither = false);

}  // namespace rdgap
