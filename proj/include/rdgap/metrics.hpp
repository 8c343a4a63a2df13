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

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdgap/error.hpp"
#include "rdgap/rd_reference.hpp"

namespace rdgap {

double distortion_sse(std::span<const double> x, std::span<const double> xhat);

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
};

struct GaussianPrior {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
};

// KL(N(mean, scale^2) || N(prior.mean, prior.scale^2)) in bits, summed over
// dimensions.
double gaussian_kl_bits(const GaussianPosterior& posterior, const GaussianPrior& prior);

// Batch mean of gaussian_kl_bits divided by the source dimension.
double mc_rate_estimate(std::span<const GaussianPosterior> posteriors, const GaussianPrior& prior,
                        std::size_t source_dimension);

// Quality axis for unit-less sources: -10 log10(per-dimension MSE).
double quality_db(double distortion);

// Monotonicity-preserving piecewise cubic Hermite interpolant (Fritsch-Carlson
// slopes with the three-point end conditions), as used for BD metrics.
class MonotoneCubic {
 public:
  MonotoneCubic(std::vector<double> xs, std::vector<double> ys);

  double operator()(double x) const;
  // Exact integral of the interpolant over [a, b] inside the knot range.
  double integral(double a, double b) const;
  double min_x() const { return xs_.front(); }
  double max_x() const { return xs_.back(); }

 private:
  std::size_t segment(double x) const;
  double segment_integral(std::size_t k, double t) const;

  std::vector<double> xs_, ys_, slopes_;
};

// Bjontegaard delta rate of `test` against `reference` in percent; negative
// means the test curve needs less rate at equal quality. Both curves need at
// least four points and a nonempty quality overlap.
double bd_rate(const RdCurve& reference, const RdCurve& test);

template <class M>
concept SymbolModel = requires(const M& model, std::size_t position, int symbol) {
  { model.probability(position, symbol) } -> std::convertible_to<double>;
};

// Ideal code length sum_i -log2 Q(symbol_i) under the model.
template <SymbolModel M>
double empirical_codelength_bits(std::span<const int> symbols, const M& model) {
  double bits = 0.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const double p = model.probability(i, symbols[i]);
    if (!(p > 0.0))
      throw DiagnosticError("empirical_codelength_bits: zero probability for symbol " +
                            std::to_string(symbols[i]) + " at index " + std::to_string(i));
    bits -= std::log2(p);
  }
  return bits;
}

}  // namespace rdgap
