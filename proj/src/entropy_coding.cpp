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

#include "rdgap/entropy_coding.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "rdgap/error.hpp"
#include "rdgap/hash.hpp"
#include "rdgap/metrics.hpp"

namespace rdgap {

namespace {

constexpr std::uint64_t kWordMask = 0xFFFFFFFFULL;
constexpr std::uint64_t kForceBelow = 1ULL << 16;
using u128 = unsigned __int128;

}  // namespace

std::vector<std::uint32_t> quantize_frequencies(std::span<const double> pmf) {
  const std::size_t m = pmf.size();
  if (m == 0 || m > kFrequencyTotal) throw SpecError("quantize_frequencies: alphabet size out of range");
  double total = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw SpecError("quantize_frequencies: invalid probability");
    total += p;
  }
  if (!(total > 0.0)) throw SpecError("quantize_frequencies: zero total mass");
  const double spare = static_cast<double>(kFrequencyTotal - m);
  std::vector<std::uint32_t> freq(m);
  std::vector<double> remainder(m);
  std::uint64_t used = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double share = pmf[i] / total * spare;
    const double whole = std::floor(share);
    freq[i] = 1 + static_cast<std::uint32_t>(whole);
    remainder[i] = share - whole;
    used += freq[i];
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  // Rounding can leave used a few counts off in either direction.
  std::size_t k = 0;
  while (used < kFrequencyTotal) {
    ++freq[order[k++ % m]];
    ++used;
  }
  k = m;
  while (used > kFrequencyTotal) {
    const std::size_t i = order[--k % m];
    if (freq[i] > 1) {
      --freq[i];
      --used;
    }
    if (k == 0) k = m;
  }
  return freq;
}

CdfTable::CdfTable(std::vector<std::vector<std::uint32_t>> frequencies, int symbol_offset)
    : symbol_offset_(symbol_offset) {
  if (frequencies.empty()) throw SpecError("CdfTable: no dimensions");
  const std::size_t m = frequencies.front().size();
  for (const auto& f : frequencies) {
    if (f.size() != m || m == 0) throw SpecError("CdfTable: ragged alphabet");
    std::vector<std::uint32_t> cdf(m + 1, 0);
    for (std::size_t i = 0; i < m; ++i) {
      if (f[i] == 0) throw SpecError("CdfTable: zero frequency");
      cdf[i + 1] = cdf[i] + f[i];
    }
    if (cdf.back() != kFrequencyTotal) throw SpecError("CdfTable: frequencies must sum to 2^16");
    cdf_.push_back(std::move(cdf));
  }
}

std::uint32_t CdfTable::frequency(std::size_t dim, int symbol) const {
  const long idx = static_cast<long>(symbol) - symbol_offset_;
  if (idx < 0 || idx >= static_cast<long>(alphabet_size())) return 0;
  const auto& c = cdf_[dim % cdf_.size()];
  return c[static_cast<std::size_t>(idx) + 1] - c[static_cast<std::size_t>(idx)];
}

double CdfTable::probability(std::size_t position, int symbol) const {
  return static_cast<double>(frequency(position % cdf_.size(), symbol)) / kFrequencyTotal;
}

std::uint64_t CdfTable::hash() const {
  Fnv1a h;
  h.text("RDGB-tables").u64(cdf_.size()).u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(symbol_offset_)));
  h.u64(alphabet_size());
  for (const auto& c : cdf_)
    for (std::uint32_t v : c) h.u64(v);
  return h.digest();
}

CdfTable build_tables(std::span<const std::vector<double>> pmfs, int symbol_offset) {
  std::vector<std::vector<std::uint32_t>> freqs;
  freqs.reserve(pmfs.size());
  for (const auto& p : pmfs) freqs.push_back(quantize_frequencies(p));
  return CdfTable(std::move(freqs), symbol_offset);
}

CdfTable build_tables(const Eigen::VectorXd& scales) {
  std::vector<std::vector<double>> pmfs;
  for (Eigen::Index i = 0; i < scales.size(); ++i) pmfs.push_back(discretized_gaussian_pmf(scales(i)));
  return build_tables(pmfs, kSymbolMin);
}

CdfTable build_tables(const CodecParams& params) { return build_tables(params.prior_scale()); }

void RangeEncoder::put_word(std::uint32_t w) {
  for (int s = 24; s >= 0; s -= 8) bytes_.push_back(static_cast<std::uint8_t>(w >> s));
  bits_ += 32;
}

void RangeEncoder::normalize() {
  for (;;) {
    if (((low_ ^ (low_ + range_ - 1)) >> 32) == 0) {
      put_word(static_cast<std::uint32_t>(low_ >> 32));
      low_ <<= 32;
      range_ = range_ > kWordMask ? ~std::uint64_t{0} : range_ << 32;
    } else if (range_ < kForceBelow) {
      range_ = (0 - low_) & kWordMask;
    } else {
      return;
    }
  }
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq) {
  if (finished_) throw SpecError("RangeEncoder: encode after finish");
  if (freq == 0 || cum + freq > kFrequencyTotal) throw SpecError("RangeEncoder: bad frequency interval");
  const std::uint64_t r = range_ >> kFrequencyBits;
  low_ += r * cum;
  range_ = r * freq;
  normalize();
}

void RangeEncoder::finish() {
  if (finished_) return;
  finished_ = true;
  const u128 hi = static_cast<u128>(low_) + range_;
  for (int k = 1; k <= 64; ++k) {
    const u128 step = static_cast<u128>(1) << (64 - k);
    const u128 v = (static_cast<u128>(low_) + step - 1) / step * step;
    if (v + step > hi) continue;
    const auto value = static_cast<std::uint64_t>(v);
    int remaining = k;
    for (int shift = 56; remaining > 0; shift -= 8, remaining -= 8)
      bytes_.push_back(static_cast<std::uint8_t>(value >> shift));
    bits_ += static_cast<std::uint64_t>(k);
    return;
  }
  throw DiagnosticError("RangeEncoder: final range too small to flush");
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> payload, std::uint64_t bit_length)
    : payload_(payload), bit_length_(bit_length) {
  if ((bit_length + 7) / 8 > payload.size()) throw DiagnosticError("bitstream: payload shorter than its bit length");
  code_ = static_cast<std::uint64_t>(next_word()) << 32;
  code_ |= next_word();
}

std::uint32_t RangeDecoder::next_word() {
  std::uint32_t w = 0;
  const std::uint64_t first_bit = static_cast<std::uint64_t>(word_index_) * 32;
  for (int b = 0; b < 4; ++b) {
    const std::size_t idx = word_index_ * 4 + static_cast<std::size_t>(b);
    const std::uint8_t byte = idx < payload_.size() ? payload_[idx] : 0;
    w = (w << 8) | byte;
  }
  ++word_index_;
  if (first_bit >= bit_length_) return 0;
  const std::uint64_t valid = bit_length_ - first_bit;
  if (valid < 32) w &= ~((1u << (32 - valid)) - 1);
  return w;
}

void RangeDecoder::normalize() {
  for (;;) {
    if (((low_ ^ (low_ + range_ - 1)) >> 32) == 0) {
      low_ <<= 32;
      code_ = (code_ << 32) | next_word();
      range_ = range_ > kWordMask ? ~std::uint64_t{0} : range_ << 32;
    } else if (range_ < kForceBelow) {
      range_ = (0 - low_) & kWordMask;
    } else {
      return;
    }
  }
}

std::size_t RangeDecoder::decode(std::span<const std::uint32_t> cdf) {
  const std::uint64_t r = range_ >> kFrequencyBits;
  const std::uint64_t value = std::min<std::uint64_t>((code_ - low_) / r, kFrequencyTotal - 1);
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), static_cast<std::uint32_t>(value));
  const auto s = static_cast<std::size_t>(it - cdf.begin()) - 1;
  low_ += r * cdf[s];
  range_ = r * (cdf[s + 1] - cdf[s]);
  normalize();
  return s;
}

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> Bitstream::serialize() const {
  std::vector<std::uint8_t> out = {'R', 'D', 'G', 'B'};
  put_le(out, kVersion, 2);
  put_le(out, symbol_count, 4);
  put_le(out, model_hash, 8);
  put_le(out, payload_bits, 8);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Bitstream Bitstream::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw DiagnosticError("bitstream: truncated header");
  if (!(bytes[0] == 'R' && bytes[1] == 'D' && bytes[2] == 'G' && bytes[3] == 'B'))
    throw DiagnosticError("bitstream: bad magic");
  if (get_le(bytes, 4, 2) != kVersion) throw DiagnosticError("bitstream: unsupported version");
  Bitstream s;
  s.symbol_count = static_cast<std::uint32_t>(get_le(bytes, 6, 4));
  s.model_hash = get_le(bytes, 10, 8);
  s.payload_bits = get_le(bytes, 18, 8);
  const std::size_t need = static_cast<std::size_t>((s.payload_bits + 7) / 8);
  if (bytes.size() - kHeaderBytes != need) throw DiagnosticError("bitstream: payload size does not match bit length");
  s.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return s;
}

namespace {

template <class TableFor>
Bitstream encode_with(std::span<const int> symbols, int offset, std::uint64_t hash, TableFor&& table_for) {
  if (symbols.size() > 0xFFFFFFFFULL) throw SpecError("encode: too many symbols");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const std::span<const std::uint32_t> cdf = table_for(i);
    const long idx = static_cast<long>(symbols[i]) - offset;
    if (idx < 0 || idx + 1 >= static_cast<long>(cdf.size()))
      throw DiagnosticError("encode: symbol " + std::to_string(symbols[i]) + " at index " + std::to_string(i) +
                            " is outside the table");
    const auto u = static_cast<std::size_t>(idx);
    enc.encode(cdf[u], cdf[u + 1] - cdf[u]);
  }
  if (!symbols.empty()) enc.finish();
  Bitstream s;
  s.symbol_count = static_cast<std::uint32_t>(symbols.size());
  s.model_hash = hash;
  s.payload_bits = enc.bit_length();
  s.payload = enc.bytes();
  return s;
}

template <class TableFor>
std::vector<int> decode_with(const Bitstream& stream, int offset, TableFor&& table_for) {
  std::vector<int> out(stream.symbol_count);
  if (out.empty()) return out;
  RangeDecoder dec(stream.payload, stream.payload_bits);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(dec.decode(table_for(i))) + offset;
  return out;
}

void check_hash(const Bitstream& stream, std::uint64_t expected) {
  if (stream.model_hash != expected) throw DiagnosticError("bitstream: model hash does not match the supplied model");
}

}  // namespace

Bitstream encode(std::span<const int> symbols, const CdfTable& tables) {
  if (tables.dimension() == 0) throw SpecError("encode: empty tables");
  return encode_with(symbols, tables.symbol_offset(), tables.hash(),
                     [&](std::size_t i) { return tables.cdf(i % tables.dimension()); });
}

std::vector<int> decode(const Bitstream& stream, const CdfTable& tables) {
  check_hash(stream, tables.hash());
  return decode_with(stream, tables.symbol_offset(),
                     [&](std::size_t i) { return tables.cdf(i % tables.dimension()); });
}

namespace {

std::vector<int> flat_symbols(const Eigen::MatrixXi& symbols) {
  return {symbols.data(), symbols.data() + symbols.size()};
}

}  // namespace

Bitstream encode_samples(const CodecParams& params, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXi symbols = encode_batch(params, x);
  return encode(flat_symbols(symbols), build_tables(params));
}

Eigen::MatrixXd decode_samples(const Bitstream& stream, const CodecParams& params) {
  const auto latent = static_cast<Eigen::Index>(params.latent_dim());
  if (stream.symbol_count % latent != 0) throw DiagnosticError("bitstream: symbol count is not a multiple of the latent dimension");
  const std::vector<int> flat = decode(stream, build_tables(params));
  const Eigen::MatrixXi symbols =
      Eigen::Map<const Eigen::MatrixXi>(flat.data(), latent, static_cast<Eigen::Index>(flat.size()) / latent);
  return decode_batch(params, symbols);
}

StreamGap measure_stream(std::span<const int> symbols, const CdfTable& tables, const DiscretizedGaussianModel* model) {
  StreamGap g;
  g.symbols = symbols.size();
  g.ideal_bits = empirical_codelength_bits(symbols, tables);
  if (model) g.model_ideal_bits = empirical_codelength_bits(symbols, *model);
  const Bitstream s = encode(symbols, tables);
  g.actual_bits = s.payload_bits;
  return g;
}

AsymptoticGap measure_asymptotic_gap(const CodecParams& params, const Eigen::MatrixXd& x,
                                     std::size_t samples_per_stream) {
  if (params.posterior_log_scale) throw SpecError("measure_asymptotic_gap: deterministic model required");
  if (samples_per_stream == 0 || x.cols() == 0) throw SpecError("measure_asymptotic_gap: empty stream");
  const Eigen::MatrixXi symbols = encode_batch(params, x);
  const CdfTable tables = build_tables(params);
  const DiscretizedGaussianModel model(params);
  const std::size_t latent = params.latent_dim();
  const auto count = static_cast<std::size_t>(x.cols());
  AsymptoticGap gap;
  gap.source_dim = params.source_dim();
  gap.samples = count;
  double total_overhead = 0.0, relative = 0.0;
  std::size_t relative_count = 0;
  gap.max_overhead_bits = -1e300;
  gap.min_overhead_bits = 1e300;
  for (std::size_t start = 0; start < count; start += samples_per_stream) {
    const std::size_t n = std::min(samples_per_stream, count - start);
    const std::span<const int> s(symbols.data() + start * latent, n * latent);
    StreamGap g = measure_stream(s, tables, &model);
    total_overhead += g.overhead_bits();
    gap.max_overhead_bits = std::max(gap.max_overhead_bits, g.overhead_bits());
    gap.min_overhead_bits = std::min(gap.min_overhead_bits, g.overhead_bits());
    if (g.ideal_bits > 0.0) {
      relative += g.overhead_bits() / g.ideal_bits;
      ++relative_count;
    }
    gap.streams.push_back(g);
  }
  const double dims = static_cast<double>(count * gap.source_dim);
  gap.mean_overhead_bits = total_overhead / static_cast<double>(gap.streams.size());
  gap.mean_relative_overhead = relative_count ? relative / static_cast<double>(relative_count) : 0.0;
  gap.overhead_bits_per_dim = total_overhead / dims;
  gap.header_bits_per_dim = 8.0 * Bitstream::kHeaderBytes * static_cast<double>(gap.streams.size()) / dims;
  return gap;
}

Eigen::MatrixXd dither_offsets(const DitherKey& key, std::size_t latent_dim, std::size_t batch) {
  const std::uint64_t k = derive_key(key.seed, key.stream);
  Eigen::MatrixXd u(static_cast<Eigen::Index>(latent_dim), static_cast<Eigen::Index>(batch));
  for (std::size_t j = 0; j < batch; ++j)
    for (std::size_t i = 0; i < latent_dim; ++i)
      u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          bits_to_open_unit(counter_bits(k, j * latent_dim + i)) - 0.5;
  return u;
}

namespace {

std::uint64_t dithered_hash(const CdfTable& base, const DitherKey& key) {
  return Fnv1a().u64(base.hash()).text("dither").u64(key.seed).u64(key.stream).digest();
}

// Per-position tables of P(k | u) for the dither-shifted model.
std::vector<std::vector<std::uint32_t>> shifted_cdfs(const Eigen::VectorXd& scales, const Eigen::MatrixXd& u) {
  std::vector<std::vector<std::uint32_t>> cdfs;
  cdfs.reserve(static_cast<std::size_t>(u.size()));
  for (Eigen::Index j = 0; j < u.cols(); ++j)
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const std::vector<std::uint32_t> f = quantize_frequencies(discretized_gaussian_pmf(scales(i), u(i, j)));
      std::vector<std::uint32_t> c(f.size() + 1, 0);
      for (std::size_t t = 0; t < f.size(); ++t) c[t + 1] = c[t] + f[t];
      cdfs.push_back(std::move(c));
    }
  return cdfs;
}

}  // namespace

DitheredCode dithered_code(const CodecParams& params, const Eigen::MatrixXd& x, const DitherKey& key,
                           bool force_zero_dither) {
  if (params.posterior_log_scale) throw SpecError("dithered_code: deterministic (uniform-noise) model required");
  const Eigen::Index latent = static_cast<Eigen::Index>(params.latent_dim());
  const Eigen::Index batch = x.cols();
  DitheredCode out;
  out.dither = force_zero_dither ? Eigen::MatrixXd::Zero(latent, batch)
                                 : dither_offsets(key, params.latent_dim(), static_cast<std::size_t>(batch));
  const Eigen::MatrixXd z = params.analysis.forward(x);
  out.symbols.resize(latent, batch);
  for (Eigen::Index j = 0; j < batch; ++j)
    for (Eigen::Index i = 0; i < latent; ++i) {
      const double k = round_half_away(z(i, j) - params.prior_mean(i) - out.dither(i, j));
      if (!(k >= kSymbolMin && k <= kSymbolMax))
        throw DiagnosticError("dithered_code: symbol overflow at latent " + std::to_string(i) + ", sample " +
                              std::to_string(j));
      out.symbols(i, j) = static_cast<int>(k);
    }
  out.latent = out.symbols.cast<double>() + out.dither;
  out.latent.colwise() += params.prior_mean;
  out.reconstruction = params.synthesis.forward(out.latent);
  const std::vector<int> flat = flat_symbols(out.symbols);
  if (force_zero_dither) {
    out.stream = encode(flat, build_tables(params));
  } else {
    const auto cdfs = shifted_cdfs(params.prior_scale(), out.dither);
    out.stream = encode_with(flat, kSymbolMin, dithered_hash(build_tables(params), key),
                             [&](std::size_t i) { return std::span<const std::uint32_t>(cdfs[i]); });
  }
  out.rate_bits = static_cast<double>(out.stream.total_bits());
  return out;
}

Eigen::MatrixXd dithered_decode(const Bitstream& stream, const CodecParams& params, const DitherKey& key,
                                bool force_zero_dither) {
  if (force_zero_dither) return decode_samples(stream, params);
  const CdfTable base = build_tables(params);
  check_hash(stream, dithered_hash(base, key));
  const auto latent = static_cast<Eigen::Index>(params.latent_dim());
  if (stream.symbol_count % latent != 0) throw DiagnosticError("bitstream: symbol count is not a multiple of the latent dimension");
  const Eigen::Index batch = static_cast<Eigen::Index>(stream.symbol_count) / latent;
  const Eigen::MatrixXd u = dither_offsets(key, params.latent_dim(), static_cast<std::size_t>(batch));
  const auto cdfs = shifted_cdfs(params.prior_scale(), u);
  const std::vector<int> flat =
      decode_with(stream, kSymbolMin, [&](std::size_t i) { return std::span<const std::uint32_t>(cdfs[i]); });
  Eigen::MatrixXd y = Eigen::Map<const Eigen::MatrixXi>(flat.data(), latent, batch).cast<double>() + u;
  y.colwise() += params.prior_mean;
  return params.synthesis.forward(y);
}

}  // namespace rdgap
