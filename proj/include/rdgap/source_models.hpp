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
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace rdgap {

enum class SourceKind { kScalarGaussian, kLaplacian, kGaussMarkov, kGaussianMixture, kDiscretePmf };

std::string to_string(SourceKind kind);
SourceKind source_kind_from_string(const std::string& name);

struct MixtureComponent {
  double weight = 1.0;
  double mean = 0.0;
  double variance = 1.0;
};

// A tractable vector source X in R^n. Not every field is used by every kind:
//   scalar-gaussian   i.i.d. N(0, variance) per dimension
//   laplacian         i.i.d. Laplace(0, scale) per dimension
//   gauss-markov      stationary AR(1), Cov[i][j] = variance * correlation^|i-j|
//   gaussian-mixture  i.i.d. scalar mixture per dimension
//   discrete-pmf      i.i.d. letters {0, 1, ..., m-1} with probabilities pmf
struct SourceSpec {
  SourceKind kind = SourceKind::kScalarGaussian;
  std::size_t dimension = 1;
  double variance = 1.0;
  double scale = 1.0;
  double correlation = 0.0;
  std::vector<MixtureComponent> components;
  std::vector<double> pmf;

  static SourceSpec gaussian(std::size_t n, double variance = 1.0);
  static SourceSpec laplacian(std::size_t n, double scale = 1.0);
  static SourceSpec gauss_markov(std::size_t n, double correlation, double variance = 1.0);
  static SourceSpec mixture(std::size_t n, std::vector<MixtureComponent> components);
  static SourceSpec discrete(std::size_t n, std::vector<double> pmf);

  // Throws SpecError if any invariant is violated.
  void validate() const;

  // Per-dimension marginal moments.
  double marginal_mean() const;
  double marginal_variance() const;
  // Whether all coordinates are independent and identically distributed.
  bool is_iid() const { return kind != SourceKind::kGaussMarkov; }
};

// JSON schema: {"kind": "<kind>", "n": <int>, "params": {...}} with params
//   scalar-gaussian  {"variance"}
//   laplacian        {"scale"}
//   gauss-markov     {"variance", "rho"}
//   gaussian-mixture {"weights": [...], "means": [...], "variances": [...]}
//   discrete-pmf     {"pmf": [...]}
nlohmann::json to_json(const SourceSpec& spec);
SourceSpec source_from_json(const nlohmann::json& j);
// Stable identifier derived from the canonical JSON form.
std::string source_id(const SourceSpec& spec);

struct SampleBatch {
  Eigen::MatrixXd data;  // count x n, one sample per row
  std::string source_id;
  std::uint64_t seed = 0;

  std::size_t count() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t dimension() const { return static_cast<std::size_t>(data.cols()); }
};

// Sample i is drawn from its own stream derive_key(seed, i), so any prefix of
// a batch is reproducible on its own.
SampleBatch sample(const SourceSpec& spec, std::size_t count, std::uint64_t seed);

struct AnalyticRd {
  double rate_bits = 0.0;   // per dimension
  double distortion = 0.0;  // achieved per-dimension MSE (or Hamming)
  double water_level = 0.0;
};

// Closed-form R(D) per dimension where one exists; nullopt otherwise.
std::optional<AnalyticRd> analytic_rd(const SourceSpec& spec, double distortion);

// Eigenvalues of the explicit n x n Toeplitz covariance, ascending.
Eigen::VectorXd gauss_markov_eigenvalues(const SourceSpec& spec);

struct WaterFilling {
  double level = 0.0;
  double rate_bits = 0.0;   // per dimension
  double distortion = 0.0;  // per dimension
  Eigen::VectorXd component_distortion;
};

// Reverse water-filling over independent Gaussian components with the given
// variances, targeting a mean per-component distortion.
WaterFilling reverse_water_fill(const Eigen::VectorXd& variances, double distortion);

double binary_entropy_bits(double p);

}  // namespace rdgap
