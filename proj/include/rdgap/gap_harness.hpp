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
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdgap/per_sample_opt.hpp"
#include "rdgap/rd_reference.hpp"
#include "rdgap/source_models.hpp"
#include "rdgap/trainer.hpp"

namespace rdgap {

struct ModelSize {
  std::string name;
  std::vector<std::size_t> hidden;
  // The i.i.d. sources have no redundancy, so the harness keeps one latent
  // per source dimension.
  std::size_t latent_dim = 16;
};

struct ExperimentConfig {
  SourceSpec source = SourceSpec::mixture(16, {{0.5, -0.8, 0.36}, {0.5, 0.8, 0.36}});
  std::vector<double> lambdas = {0.6, 1.2, 2.4, 4.8, 9.6, 19.2};
  std::vector<ModelSize> sizes = {{"small", {16}, 16}, {"large", {64}, 16}};
  Surrogate surrogate{SurrogateKind::kMixed, 0.5};
  std::vector<std::uint64_t> seeds = {1, 2};
  std::size_t train_steps = 4000;
  std::size_t batch_size = 256;
  LrSchedule schedule{2e-3, {0.8, 0.9}, {0.4, 0.25}};
  std::size_t test_samples = 256;
  std::size_t samples_per_stream = 0;  // 0: the whole test set is one stream
  PerSampleConfig per_sample;
  // Reference curve: slopes spread geometrically over [lambda_min, 2 lambda_max].
  std::size_t ba_grid_points = 400;
  double ba_half_width = 6.0;
  std::size_t ba_slopes = 16;
  int ba_max_iter = 3000;
  std::size_t threads = 1;
  std::string out_dir;  // per-seed CSVs are written here as they complete

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

inline constexpr double kNoValue = std::numeric_limits<double>::quiet_NaN();

// BD-rates in percent (negative = the second-named curve saves rate);
// NaN when a curve pair does not admit a BD-rate.
struct GapTable {
  double amortization_stochastic = kNoValue;    // estimated-bound -> estimated-bound-persample
  double amortization_deterministic = kNoValue; // empirical-ideal -> empirical-persample
  double digitization = kNoValue;               // empirical-persample -> estimated-bound-persample
  double bound_vs_empirical = kNoValue;         // empirical-ideal -> estimated-bound
  double asymptotic = kNoValue;                 // empirical-ideal -> empirical-bitstream
  double asymptotic_bits_per_dim = kNoValue;    // payload overhead over the ideal code length
  double header_bits_per_dim = kNoValue;
  double oneshot_bits_per_dim = kNoValue;       // overhead when every sample is its own stream, header included
};

struct SizeReport {
  std::string size;
  GapTable gaps;
  std::vector<GapTable> per_seed;  // amortization entries only, seed order
};

struct SeedCurves {
  std::string size;
  std::uint64_t seed = 0;
  std::vector<RdCurve> curves;  // raw per-lambda points, unhulled
};

struct InvariantCheck {
  std::string name;
  bool passed = false;
  bool soft = false;  // soft checks only warn
  std::string detail;
};

struct StreamLengthReport {
  std::size_t symbols = 0;
  std::size_t streams = 0;
  double mean_overhead_bits = 0.0;
  double min_overhead_bits = 0.0;
  double max_overhead_bits = 0.0;
  double mean_relative_overhead = 0.0;
};

struct EffectReport {
  std::string source_id;
  std::vector<RdCurve> curves;  // series = size name; true-rd has an empty series
  std::vector<SizeReport> sizes;
  GapTable gaps;                // mean over sizes
  std::vector<SeedCurves> per_seed;
  std::vector<StreamLengthReport> stream_lengths;
  std::vector<InvariantCheck> checks;

  bool all_passed() const;
};

nlohmann::json to_json(const EffectReport& report);
EffectReport effect_report_from_json(const nlohmann::json& j);

EffectReport run(const ExperimentConfig& config);

// Writes report.json, curves.csv, gaps.csv, figures.json and per-seed CSVs
// under seeds/. Output is byte-identical for identical reports.
void report(const EffectReport& report, const std::string& dir);

// Reference R(D) curve: Blahut-Arimoto on the discretized marginal for i.i.d.
// sources, reverse water-filling for Gauss-Markov sources.
// `max_gap_bits`, when given, receives the largest final BA duality gap
// (0 for water-filling).
RdCurve true_rd_curve(const SourceSpec& source, std::span<const double> slopes, std::size_t grid_points = 1000,
                      double half_width_sigmas = 6.0, const BlahutArimotoOptions& options = {},
                      double* max_gap_bits = nullptr);

// bd_rate that returns NaN instead of throwing when either curve has fewer
// than four points or the quality ranges do not overlap.
double try_bd_rate(const RdCurve& reference, const RdCurve& test, std::string* why = nullptr);

}  // namespace rdgap
