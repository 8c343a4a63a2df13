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

#include "rdgap/normal.hpp"

#include <cmath>
#include <numbers>

namespace rdgap {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_normal_pdf(double x) noexcept { return -0.5 * x * x - kLogSqrt2Pi; }

// log Q(t) = log(1 - Phi(t)).
double log_upper_tail(double t) noexcept { return log_normal_cdf(-t); }

}  // namespace

double normal_pdf(double x) noexcept { return std::exp(log_normal_pdf(x)); }

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double log_normal_cdf(double x) noexcept {
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
  if (x > -37.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  // Phi(x) = phi(x) / |x| * (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8 - ...)
  const double r = 1.0 / (x * x);
  const double series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - r * 105.0)));
  return log_normal_pdf(x) - std::log(-x) + std::log(series);
}

LogBinMass log_bin_mass(double center, double scale) noexcept {
  const double sign = center < 0.0 ? -1.0 : 1.0;
  const double v = std::fabs(center);
  const double a = (v - 0.5) / scale;
  const double b = (v + 0.5) / scale;
  const double log_qa = log_upper_tail(a);
  const double log_qb = log_upper_tail(b);
  const double log_mass = log_qa + std::log1p(-std::exp(log_qb - log_qa));
  const double ra = std::exp(log_normal_pdf(a) - log_mass);  // phi(a) / mass
  const double rb = std::exp(log_normal_pdf(b) - log_mass);
  LogBinMass out;
  out.value = log_mass;
  out.d_center = sign * (rb - ra) / scale;
  out.d_scale = (ra * a - rb * b) / scale;
  return out;
}

}  // namespace rdgap
