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
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdgap/codec.hpp"
#include "rdgap/error.hpp"
#include "rdgap/rd_reference.hpp"
#include "rdgap/source_models.hpp"

namespace rdgap {

// Piecewise-constant decay: lr = initial * prod(factors[k] for milestones[k] <= t / steps).
struct LrSchedule {
  double initial = 5e-4;
  std::vector<double> milestones = {0.8, 0.9};
  std::vector<double> factors = {0.4, 0.25};

  double at(std::size_t step, std::size_t steps) const;
};

struct TrainConfig {
  double lambda = 1.0;
  SystemKind system = SystemKind::kDeterministic;
  Surrogate surrogate;
  std::size_t steps = 10000;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  LrSchedule schedule;
  SourceSpec source = SourceSpec::gaussian(16);
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden;

  Architecture architecture() const;
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
// Hex FNV-1a of the canonical JSON form.
std::string config_hash(const TrainConfig& config);

struct TracePoint {
  std::size_t step = 0;
  double rate_bits = 0.0;   // per source dimension, training surrogate
  double distortion = 0.0;  // per-dimension MSE, training surrogate
  double loss = 0.0;
  double lr = 0.0;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct TrainedModel {
  CodecParams params;
  TrainConfig config;
  std::vector<TracePoint> trace;
  Provenance provenance;
};

// Raised when the loss or a gradient becomes non-finite.
class TrainingDiverged : public DiagnosticError {
 public:
  TrainingDiverged(std::size_t step, CodecParams snapshot);
  std::size_t step() const { return step_; }
  const CodecParams& snapshot() const { return snapshot_; }

 private:
  std::size_t step_;
  CodecParams snapshot_;
};

class Adam {
 public:
  explicit Adam(const CodecParams& shape, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(CodecParams& params, const CodecParams& grad, double lr);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

TrainedModel train(const TrainConfig& config);
// Continues from given parameters (used by tests and warm starts).
TrainedModel train_from(const TrainConfig& config, CodecParams initial);

// Hard evaluation. Deterministic: ideal code length under the folded
// discretized model (label empirical-ideal). Stochastic: Gaussian KL rate and
// the MSE of one posterior sample per input drawn from `seed` (label
// estimated-bound). Inputs are the rows of `batch.data`.
RdPoint eval_rd(const CodecParams& params, SystemKind system, double lambda, const SampleBatch& batch,
                std::uint64_t seed = 0);
RdPoint eval_rd(const TrainedModel& model, const SampleBatch& batch, std::uint64_t seed = 0);

struct SweepResult {
  std::vector<TrainedModel> models;   // one per lambda, in input order
  std::vector<RdPoint> points;        // raw evaluation points, input order
  RdCurve curve;                      // hull-cleaned
};

// Trains one model per lambda (concurrently up to `threads`) and evaluates it
// on `test_batch`.
SweepResult sweep(const TrainConfig& base, std::span<const double> lambdas, const SampleBatch& test_batch,
                  std::size_t threads = 1);

void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace);

// Means of consecutive non-overlapping windows of the loss trace; a window
// counts as an increase when it exceeds the previous one by more than
// `sigmas` combined standard errors.
struct TraceCheck {
  std::vector<double> window_means;
  std::size_t increases = 0;
  bool ok() const { return increases == 0; }
};
TraceCheck check_trace_nonincreasing(const std::vector<TracePoint>& trace, std::size_t window = 100,
                                     double sigmas = 3.0);

// n x B matrix of the batch rows.
inline Eigen::MatrixXd columns(const SampleBatch& batch) { return batch.data.transpose(); }

}  // namespace rdgap
