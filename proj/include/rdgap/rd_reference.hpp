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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdgap/source_models.hpp"

namespace rdgap {

enum class CurveLabel {
  kTrueRd,
  kBa,
  kEstimatedBound,
  kEstimatedBoundPerSample,
  kEmpiricalIdeal,
  kEmpiricalPerSample,
  kEmpiricalBitstream,
};

std::string to_string(CurveLabel label);
CurveLabel curve_label_from_string(const std::string& name);

// Rate in bits per source dimension, distortion as per-dimension expected
// distortion. `lambda` is the Lagrange slope (nats per unit distortion) that
// produced the point, or 0 when not applicable.
struct RdPoint {
  double rate_bits = 0.0;
  double distortion = 0.0;
  double lambda = 0.0;
  CurveLabel label = CurveLabel::kBa;
};

struct RdCurve {
  CurveLabel label = CurveLabel::kBa;
  std::string series;  // optional qualifier, e.g. a model size name
  std::vector<RdPoint> points;

  void sort_by_distortion();
};

// CSV with header `label,lambda,distortion,rate_bits`, or
// `series,label,lambda,distortion,rate_bits` when any curve carries a series.
void write_curves_csv(std::ostream& out, std::span<const RdCurve> curves);
std::vector<RdCurve> read_curves_csv(std::istream& in);

struct Grid {
  double lo = 0.0;
  double step = 0.0;
  std::size_t count = 0;
  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * step; }
};

struct DiscreteRdProblem {
  std::vector<double> pmf;       // m source letters
  Eigen::MatrixXd distortion;    // m x k, d(x, xhat)
  std::optional<Grid> grid;      // set when produced by discretize()

  void validate() const;
};

DiscreteRdProblem hamming_problem(std::vector<double> pmf);
DiscreteRdProblem squared_error_problem(std::vector<double> pmf, std::span<const double> letters,
                                        std::span<const double> reconstructions);

struct BlahutArimotoResult {
  RdPoint point;
  int iterations = 0;
  double gap_bits = 0.0;  // final upper/lower bound gap on the Lagrangian
  bool converged = false;
  double lagrangian_nats = 0.0;
  std::vector<double> reconstruction_marginal;
};

struct BlahutArimotoOptions {
  double tol_bits = 1e-7;
  int max_iter = 100000;
};

// Parametric point of R(D) at slope `slope` (nats per unit distortion).
// A run that exhausts max_iter returns converged == false with the residual
// gap; it is never reported as a success.
BlahutArimotoResult blahut_arimoto(const DiscreteRdProblem& problem, double slope,
                                   const BlahutArimotoOptions& options = {});

// Uniform grid of `grid_points` cells on mean +- half_width_sigmas * sigma of
// the per-dimension marginal of an i.i.d. continuous source, cell masses from
// the CDF, squared error between cell centres.
DiscreteRdProblem discretize(const SourceSpec& spec, std::size_t grid_points = 1000,
                             double half_width_sigmas = 6.0);

// One BA point per slope, sorted by distortion. Throws DiagnosticError naming
// the first slope that did not converge.
RdCurve sweep_curve(const DiscreteRdProblem& problem, std::span<const double> slopes,
                    const BlahutArimotoOptions& options = {});

// Lower-left convex hull in the (D, R) plane: dominated points and points on
// or above a chord are removed. Result is sorted by distortion with strictly
// decreasing rate.
RdCurve lower_convex_hull(std::span<const RdPoint> points);

}  // namespace rdgap
