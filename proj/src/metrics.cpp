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

#include "rdgap/metrics.hpp"

#include <algorithm>
#include <numbers>

namespace rdgap {

double distortion_sse(std::span<const double> x, std::span<const double> xhat) {
  if (x.size() != xhat.size()) throw SpecError("distortion_sse: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = x[i] - xhat[i];
    s += e * e;
  }
  return s;
}

double gaussian_kl_bits(const GaussianPosterior& posterior, const GaussianPrior& prior) {
  const Eigen::Index n = posterior.mean.size();
  if (posterior.scale.size() != n || prior.mean.size() != n || prior.scale.size() != n)
    throw SpecError("gaussian_kl_bits: dimension mismatch");
  double nats = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = posterior.scale(i);
    const double sp = prior.scale(i);
    if (!(s > 0.0) || !(sp > 0.0)) throw SpecError("gaussian_kl_bits: scales must be positive");
    const double dm = posterior.mean(i) - prior.mean(i);
    nats += std::log(sp / s) + (s * s + dm * dm) / (2.0 * sp * sp) - 0.5;
  }
  return std::max(0.0, nats) / std::numbers::ln2;
}

double mc_rate_estimate(std::span<const GaussianPosterior> posteriors, const GaussianPrior& prior,
                        std::size_t source_dimension) {
  if (posteriors.empty()) throw SpecError("mc_rate_estimate: empty batch");
  if (source_dimension == 0) throw SpecError("mc_rate_estimate: source dimension must be positive");
  double total = 0.0;
  for (const auto& post : posteriors) total += gaussian_kl_bits(post, prior);
  return total / static_cast<double>(posteriors.size()) / static_cast<double>(source_dimension);
}

double quality_db(double distortion) {
  if (!(distortion > 0.0)) throw SpecError("quality_db: distortion must be positive");
  return -10.0 * std::log10(distortion);
}

MonotoneCubic::MonotoneCubic(std::vector<double> xs, std::vector<double> ys)
    : xs_(std::move(xs)), ys_(std::move(ys)) {
  const std::size_t n = xs_.size();
  if (n < 2 || ys_.size() != n) throw SpecError("MonotoneCubic: need at least two matching knots");
  for (std::size_t i = 1; i < n; ++i)
    if (!(xs_[i] > xs_[i - 1])) throw SpecError("MonotoneCubic: knots must be strictly increasing");

  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = xs_[k + 1] - xs_[k];
    delta[k] = (ys_[k + 1] - ys_[k]) / h[k];
  }
  slopes_.assign(n, 0.0);
  if (n == 2) {
    slopes_[0] = slopes_[1] = delta[0];
    return;
  }
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (delta[k - 1] * delta[k] <= 0.0) continue;
    const double w1 = 2.0 * h[k] + h[k - 1];
    const double w2 = h[k] + 2.0 * h[k - 1];
    slopes_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
  }
  auto end_slope = [](double h0, double h1, double d0, double d1) {
    double m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (m * d0 <= 0.0) return 0.0;
    if (d0 * d1 <= 0.0 && std::fabs(m) > 3.0 * std::fabs(d0)) return 3.0 * d0;
    return m;
  };
  slopes_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
  slopes_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
}

std::size_t MonotoneCubic::segment(double x) const {
  const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
  const auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - xs_.begin() - 1, 0));
  return std::min(k, xs_.size() - 2);
}

double MonotoneCubic::operator()(double x) const {
  const std::size_t k = segment(x);
  const double h = xs_[k + 1] - xs_[k];
  const double t = (x - xs_[k]) / h;
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * ys_[k] + (t3 - 2 * t2 + t) * h * slopes_[k] +
         (-2 * t3 + 3 * t2) * ys_[k + 1] + (t3 - t2) * h * slopes_[k + 1];
}

// Integral over [xs_[k], xs_[k] + t * h].
double MonotoneCubic::segment_integral(std::size_t k, double t) const {
  const double h = xs_[k + 1] - xs_[k];
  const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
  const double a00 = t4 / 2 - t3 + t;
  const double a10 = t4 / 4 - 2 * t3 / 3 + t2 / 2;
  const double a01 = -t4 / 2 + t3;
  const double a11 = t4 / 4 - t3 / 3;
  return h * (a00 * ys_[k] + a10 * h * slopes_[k] + a01 * ys_[k + 1] + a11 * h * slopes_[k + 1]);
}

double MonotoneCubic::integral(double a, double b) const {
  if (a > b) return -integral(b, a);
  if (a < xs_.front() || b > xs_.back()) throw SpecError("MonotoneCubic: integration outside knots");
  auto cumulative = [&](double x) {
    const std::size_t k = segment(x);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += segment_integral(j, 1.0);
    return s + segment_integral(k, (x - xs_[k]) / (xs_[k + 1] - xs_[k]));
  };
  return cumulative(b) - cumulative(a);
}

namespace {

MonotoneCubic log_rate_interpolant(const RdCurve& curve, const char* which) {
  if (curve.points.size() < 4)
    throw SpecError(std::string("bd_rate: ") + which + " curve needs at least 4 points");
  std::vector<std::pair<double, double>> qr;
  for (const auto& p : curve.points) {
    if (!(p.rate_bits > 0.0)) throw SpecError(std::string("bd_rate: ") + which + " curve has nonpositive rate");
    qr.emplace_back(quality_db(p.distortion), std::log(p.rate_bits));
  }
  std::sort(qr.begin(), qr.end());
  std::vector<double> xs, ys;
  for (const auto& [q, r] : qr) {
    xs.push_back(q);
    ys.push_back(r);
  }
  return MonotoneCubic(std::move(xs), std::move(ys));
}

}  // namespace

double bd_rate(const RdCurve& reference, const RdCurve& test) {
  const MonotoneCubic ref = log_rate_interpolant(reference, "reference");
  const MonotoneCubic tst = log_rate_interpolant(test, "test");
  const double lo = std::max(ref.min_x(), tst.min_x());
  const double hi = std::min(ref.max_x(), tst.max_x());
  if (!(hi > lo)) throw DiagnosticError("bd_rate: curves have no quality overlap");
  const double mean_diff = (tst.integral(lo, hi) - ref.integral(lo, hi)) / (hi - lo);
  return 100.0 * std::expm1(mean_diff);
}

}  // namespace rdgap
