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
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rdgap/codec.hpp"
#include "rdgap/rd_reference.hpp"

namespace rdgap {

struct PerSampleConfig {
  std::size_t steps = 2000;
  double lr_initial = 5e-3;
  double lr_final = 1e-4;
  // tau(t) = max(tau_min, tau0 * exp(-c t)), c chosen so that tau_min is
  // reached at tau_min_fraction * steps.
  double tau0 = 0.5;
  double tau_min = 0.05;
  double tau_min_fraction = 0.8;
  std::size_t eval_every = 10;
  // Stochastic keep-best checkpoints; 0 compares only the final iterate with
  // the start. The stochastic objective is a Monte Carlo estimate, and picking
  // the best of many checkpoints on it favours lucky draws.
  std::size_t stochastic_eval_every = 0;
  std::size_t mc_samples = 32;    // fixed draws behind the stochastic keep-best objective
  std::size_t draws_per_step = 4; // fresh reparameterized draws per stochastic step
  int symbol_bound = kSymbolMax;  // candidates are restricted to |k| <= symbol_bound
  std::uint64_t seed = 0;

  void validate() const;
  double lr(std::size_t step) const;   // cosine from lr_initial to lr_final
  double tau(std::size_t step) const;
};

nlohmann::json to_json(const PerSampleConfig& config);
PerSampleConfig per_sample_config_from_json(const nlohmann::json& j);

struct DeterministicRefinement {
  std::vector<int> initial_symbols;
  std::vector<int> symbols;
  Eigen::VectorXd latent;          // symbols + prior mean
  double initial_objective = 0.0;  // nats: -ln Q(k) + lambda * SSE
  double final_objective = 0.0;
  double rate_bits = 0.0;          // per source dimension
  double distortion = 0.0;         // per-dimension MSE
};

// Hard objective -ln Q(k) + lambda * ||x - g_s(k + mu)||^2 in nats.
double deterministic_objective(const CodecParams& params, double lambda, const Eigen::VectorXd& x,
                               std::span<const int> symbols);

// Refines the latent of one input under an annealed SGA proxy with the
// decoder and entropy model frozen, keeping the best hard-rounded candidate.
DeterministicRefinement refine_deterministic(const Eigen::VectorXd& x, const CodecParams& params, double lambda,
                                             const PerSampleConfig& config, std::uint64_t sample_index = 0);

struct StochasticRefinement {
  Eigen::VectorXd initial_mean, initial_scale;
  Eigen::VectorXd mean, scale;
  double initial_objective = 0.0;  // nats, on the fixed common random numbers
  double final_objective = 0.0;
  double rate_bits = 0.0;          // KL per source dimension
  double distortion = 0.0;         // per-dimension MSE averaged over the fixed draws
};

// KL(N(mean, scale) || prior) in nats + lambda * mean SSE over the draws in eps
// (latent_dim x M).
double stochastic_objective(const CodecParams& params, double lambda, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& mean, const Eigen::VectorXd& scale, const Eigen::MatrixXd& eps);

StochasticRefinement refine_stochastic(const Eigen::VectorXd& x, const CodecParams& params, double lambda,
                                       const PerSampleConfig& config, std::uint64_t sample_index = 0);

struct PerSampleRow {
  std::size_t index = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double rate_bits = 0.0;
  double distortion = 0.0;
};

struct PerSampleBatch {
  std::vector<PerSampleRow> rows;
  RdPoint point;  // empirical-persample or estimated-bound-persample
};

// Refines every column of x (n x B), in parallel over samples up to `threads`.
// The stochastic distortion uses one posterior sample per input drawn from
// `eval_seed`, as in eval_rd.
PerSampleBatch refine_batch(const Eigen::MatrixXd& x, const CodecParams& params, SystemKind system, double lambda,
                            const PerSampleConfig& config, std::size_t threads = 1, std::uint64_t eval_seed = 0);

void write_persample_csv(std::ostream& out, const std::vector<PerSampleRow>& rows);

}  // namespace rdgap
