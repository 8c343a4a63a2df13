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

namespace rdgap {

double normal_pdf(double x) noexcept;
double normal_cdf(double x) noexcept;
// log Phi(x), accurate in both tails (asymptotic series below -37).
double log_normal_cdf(double x) noexcept;

// Log of the N(0, scale^2) mass of the unit bin centred at `center`,
//   log(Phi((center + 1/2) / scale) - Phi((center - 1/2) / scale)),
// together with its partial derivatives.
struct LogBinMass {
  double value;
  double d_center;
  double d_scale;
};
LogBinMass log_bin_mass(double center, double scale) noexcept;

}  // namespace rdgap
