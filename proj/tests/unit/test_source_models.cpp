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

#include <cmath>
#include <vector>

#include "doctest.h"
#include "rdgap/error.hpp"
#include "rdgap/rng.hpp"
#include "rdgap/source_models.hpp"

using namespace rdgap;

namespace {

double mean(const Eigen::MatrixXd& m) { return m.mean(); }

double variance(const Eigen::MatrixXd& m) {
  const double mu = m.mean();
  return (m.array() - mu).square().sum() / static_cast<double>(m.size() - 1);
}

}  // namespace

TEST_CASE("unit Gaussian moments") {
  const SampleBatch b = sample(SourceSpec::gaussian(1), 100000, 7);
  CHECK(b.count() == 100000);
  CHECK(std::fabs(mean(b.data)) < 3.0 / std::sqrt(1e5));
  CHECK(std::fabs(variance(b.data) - 1.0) < 0.05);
}

TEST_CASE("Laplacian and mixture moments match the declared marginals") {
  const SourceSpec lap = SourceSpec::laplacian(4, 0.7);
  const SampleBatch a = sample(lap, 50000, 3);
  CHECK(lap.marginal_variance() == doctest::Approx(2.0 * 0.49));
  CHECK(std::fabs(mean(a.data)) < 4.0 * std::sqrt(lap.marginal_variance() / 2e5));
  CHECK(std::fabs(variance(a.data) / lap.marginal_variance() - 1.0) < 0.03);

  const SourceSpec mix = SourceSpec::mixture(2, {{0.3, -1.0, 0.25}, {0.7, 2.0, 0.5}});
  // E = 0.3 * -1 + 0.7 * 2 = 1.1; E[x^2] = 0.3 * 1.25 + 0.7 * 4.5 = 3.525.
  CHECK(mix.marginal_mean() == doctest::Approx(1.1));
  CHECK(mix.marginal_variance() == doctest::Approx(3.525 - 1.21));
  const SampleBatch m = sample(mix, 50000, 4);
  CHECK(std::fabs(mean(m.data) - 1.1) < 0.02);
  CHECK(std::fabs(variance(m.data) / mix.marginal_variance() - 1.0) < 0.03);
}

TEST_CASE("degenerate pmf always yields symbol 0") {
  const SampleBatch b = sample(SourceSpec::discrete(3, {1.0}), 500, 9);
  CHECK(b.data.isZero(0.0));
}

TEST_CASE("discrete pmf frequencies") {
  const SampleBatch b = sample(SourceSpec::discrete(1, {0.2, 0.5, 0.3}), 60000, 5);
  std::vector<double> freq(3, 0.0);
  for (Eigen::Index i = 0; i < b.data.rows(); ++i) freq[static_cast<std::size_t>(b.data(i, 0))] += 1.0 / 60000.0;
  CHECK(freq[0] == doctest::Approx(0.2).epsilon(0.04));
  CHECK(freq[1] == doctest::Approx(0.5).epsilon(0.02));
  CHECK(freq[2] == doctest::Approx(0.3).epsilon(0.03));
}

TEST_CASE("Gauss-Markov lag-1 autocorrelation") {
  const SampleBatch b = sample(SourceSpec::gauss_markov(16, 0.9), 100000, 12);
  double num = 0.0, den = 0.0;
  for (Eigen::Index r = 0; r < b.data.rows(); ++r)
    for (Eigen::Index i = 0; i + 1 < b.data.cols(); ++i) num += b.data(r, i) * b.data(r, i + 1);
  for (Eigen::Index r = 0; r < b.data.rows(); ++r)
    for (Eigen::Index i = 0; i < b.data.cols(); ++i) den += b.data(r, i) * b.data(r, i);
  const double lag1 = (num / (16.0 - 1.0)) / (den / 16.0);
  CHECK(std::fabs(lag1 - 0.9) < 0.01);
  // Stationary marginal.
  CHECK(std::fabs(variance(b.data.col(0)) - 1.0) < 0.02);
  CHECK(std::fabs(variance(b.data.col(15)) - 1.0) < 0.02);
}

TEST_CASE("sampling is deterministic in the seed") {
  const SourceSpec specs[] = {SourceSpec::gaussian(3, 2.0), SourceSpec::laplacian(2), SourceSpec::gauss_markov(5, 0.5),
                              SourceSpec::mixture(2, {{0.5, -1, 1}, {0.5, 1, 1}}), SourceSpec::discrete(2, {0.5, 0.5})};
  for (const auto& s : specs) {
    const SampleBatch a = sample(s, 257, 99), b = sample(s, 257, 99), c = sample(s, 257, 100);
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
    CHECK(a.data.allFinite());
    CHECK(a.source_id == source_id(s));
  }
}

TEST_CASE("invalid specifications are rejected") {
  CHECK_THROWS_AS(SourceSpec::gaussian(1, 0.0).validate(), SpecError);
  CHECK_THROWS_AS(SourceSpec::gauss_markov(4, 1.0).validate(), SpecError);
  CHECK_THROWS_AS(SourceSpec::gauss_markov(4, -0.1).validate(), SpecError);
  CHECK_THROWS_AS(SourceSpec::mixture(1, {{0.5, 0, 1}, {0.4, 1, 1}}).validate(), SpecError);
  CHECK_THROWS_AS(SourceSpec::mixture(1, {{0.5, 0, 1}, {0.5, 1, -1}}).validate(), SpecError);
  CHECK_THROWS_AS(SourceSpec::discrete(1, {0.5, 0.6}).validate(), SpecError);
  CHECK_THROWS_AS(SourceSpec::gaussian(0).validate(), SpecError);
  CHECK_THROWS_AS(sample(SourceSpec::gaussian(2), 0, 1), SpecError);
  CHECK_THROWS_AS(source_from_json(nlohmann::json{{"kind", "cauchy"}, {"n", 1}}), SpecError);
  CHECK_THROWS_AS(source_from_json(nlohmann::json{{"kind", "gauss-markov"}, {"n", 4}}), SpecError);
}

TEST_CASE("source JSON round trip") {
  const SourceSpec specs[] = {SourceSpec::gaussian(3, 2.0), SourceSpec::laplacian(2, 0.5),
                              SourceSpec::gauss_markov(5, 0.5, 3.0),
                              SourceSpec::mixture(2, {{0.25, -1.5, 0.5}, {0.75, 1, 2}}),
                              SourceSpec::discrete(2, {0.125, 0.875})};
  for (const auto& s : specs) {
    const SourceSpec back = source_from_json(nlohmann::json::parse(to_json(s).dump()));
    CHECK(source_id(back) == source_id(s));
    CHECK(sample(back, 32, 5).data == sample(s, 32, 5).data);
  }
}

TEST_CASE("closed-form R(D) values") {
  const SourceSpec g = SourceSpec::gaussian(1);
  CHECK(analytic_rd(g, 1.0)->rate_bits == 0.0);
  CHECK(analytic_rd(g, 2.0)->rate_bits == 0.0);
  CHECK(analytic_rd(g, 0.25)->rate_bits == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(analytic_rd(SourceSpec::gaussian(1, 4.0), 0.25)->rate_bits == doctest::Approx(2.0).epsilon(1e-14));
  // 1 - H_b(0.1) = 1 - 0.468996
  CHECK(std::fabs(analytic_rd(SourceSpec::discrete(1, {0.5, 0.5}), 0.1)->rate_bits - 0.5310) < 1e-4);
  CHECK(analytic_rd(SourceSpec::discrete(1, {0.9, 0.1}), 0.2)->rate_bits == 0.0);
  CHECK_FALSE(analytic_rd(SourceSpec::laplacian(1), 0.5).has_value());
  CHECK_FALSE(analytic_rd(SourceSpec::mixture(1, {{1.0, 0.0, 1.0}}), 0.5).has_value());
  CHECK_FALSE(analytic_rd(SourceSpec::discrete(1, {0.2, 0.3, 0.5}), 0.1).has_value());
  CHECK_THROWS_AS(analytic_rd(g, 0.0), SpecError);
}

TEST_CASE("Gauss-Markov with rho = 0 reduces to the scalar Gaussian") {
  for (double d : {0.05, 0.3, 0.9})
    CHECK(analytic_rd(SourceSpec::gauss_markov(8, 0.0, 1.0), d)->rate_bits ==
          doctest::Approx(analytic_rd(SourceSpec::gaussian(1), d)->rate_bits).epsilon(1e-9));
}

TEST_CASE("Gauss-Markov eigenvalues") {
  // 2 x 2: sigma^2 (1 -+ rho).
  const Eigen::VectorXd e2 = gauss_markov_eigenvalues(SourceSpec::gauss_markov(2, 0.6, 2.0));
  CHECK(e2.minCoeff() == doctest::Approx(0.8));
  CHECK(e2.maxCoeff() == doctest::Approx(3.2));
  // Trace n sigma^2 and determinant sigma^(2n) (1 - rho^2)^(n - 1).
  const Eigen::VectorXd e = gauss_markov_eigenvalues(SourceSpec::gauss_markov(16, 0.9, 1.5));
  CHECK(e.sum() == doctest::Approx(16 * 1.5).epsilon(1e-12));
  CHECK(e.array().log().sum() == doctest::Approx(16 * std::log(1.5) + 15 * std::log(1 - 0.81)).epsilon(1e-10));
}

TEST_CASE("property: analytic R(D) is non-increasing and convex") {
  const SourceSpec specs[] = {SourceSpec::gaussian(1, 2.0), SourceSpec::gauss_markov(16, 0.9),
                              SourceSpec::gauss_markov(7, 0.3, 0.5), SourceSpec::discrete(1, {0.3, 0.7})};
  for (const auto& s : specs) {
    const double dmax = s.kind == SourceKind::kDiscretePmf ? 0.3 : s.marginal_variance();
    std::vector<double> d, r;
    for (int i = 1; i <= 40; ++i) {
      d.push_back(dmax * i / 40.0);
      r.push_back(analytic_rd(s, d.back())->rate_bits);
    }
    for (std::size_t i = 0; i + 1 < r.size(); ++i) CHECK(r[i + 1] <= r[i] + 1e-12);
    for (std::size_t i = 1; i + 1 < r.size(); ++i) {
      const double left = (r[i] - r[i - 1]) / (d[i] - d[i - 1]);
      const double right = (r[i + 1] - r[i]) / (d[i + 1] - d[i]);
      CHECK(right >= left - 1e-9);
    }
  }
}

TEST_CASE("property: water-filling hits the requested distortion") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(24));
    Eigen::VectorXd var(n);
    for (Eigen::Index i = 0; i < n; ++i) var(i) = 0.01 + 3.0 * rng.uniform();
    const double d = var.mean() * (0.01 + 0.98 * rng.uniform());
    const WaterFilling wf = reverse_water_fill(var, d);
    CHECK(std::fabs(wf.distortion - d) < 1e-9);
    double rate = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(wf.component_distortion(i) == doctest::Approx(std::min(wf.level, var(i))).epsilon(1e-15));
      rate += std::max(0.0, 0.5 * std::log2(var(i) / wf.level));
    }
    CHECK(wf.rate_bits == doctest::Approx(rate / static_cast<double>(n)).epsilon(1e-12));
  }
  // Above the mean variance every component is dropped.
  const WaterFilling all = reverse_water_fill(Eigen::Vector3d(1, 2, 3), 5.0);
  CHECK(all.rate_bits == 0.0);
  CHECK(all.distortion == doctest::Approx(2.0));
}

TEST_CASE("binary entropy") {
  CHECK(binary_entropy_bits(0.5) == doctest::Approx(1.0));
  CHECK(binary_entropy_bits(0.0) == 0.0);
  CHECK(binary_entropy_bits(1.0) == 0.0);
  CHECK(binary_entropy_bits(0.1) == doctest::Approx(0.4689955935892812).epsilon(1e-14));
}
