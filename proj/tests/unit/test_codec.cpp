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
#include "gradcheck.hpp"
#include "rdgap/codec.hpp"
#include "rdgap/error.hpp"

using namespace rdgap;

TEST_CASE("zero and identity transforms") {
  Transform zero;
  zero.layers.push_back({Eigen::MatrixXd::Zero(3, 4), Eigen::VectorXd::Zero(3)});
  CHECK(zero.forward(Eigen::VectorXd::Random(4)).isZero(0.0));
  Transform id;
  id.layers.push_back({Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4)});
  const Eigen::VectorXd x = Eigen::VectorXd::Random(4);
  CHECK(id.forward(x) == x);
  CHECK_THROWS_AS(id.forward(Eigen::VectorXd::Random(3)), SpecError);
}

TEST_CASE("two-layer forward matches a straight-line evaluation") {
  Rng rng(11);
  Architecture arch{5, 3, {7}, SystemKind::kDeterministic};
  const CodecParams p = init_params(arch, rng);
  Eigen::VectorXd x(5);
  for (int i = 0; i < 5; ++i) x(i) = rng.normal();
  const auto& l0 = p.analysis.layers[0];
  const auto& l1 = p.analysis.layers[1];
  std::vector<double> h(7), z(3);
  for (int r = 0; r < 7; ++r) {
    double s = l0.bias(r);
    for (int c = 0; c < 5; ++c) s += l0.weight(r, c) * x(c);
    h[static_cast<std::size_t>(r)] = std::log1p(std::exp(s)) - std::log(2.0);
  }
  for (int r = 0; r < 3; ++r) {
    double s = l1.bias(r);
    for (int c = 0; c < 7; ++c) s += l1.weight(r, c) * h[static_cast<std::size_t>(c)];
    z[static_cast<std::size_t>(r)] = s;
  }
  const Eigen::VectorXd y = analyze(p, x);
  for (int r = 0; r < 3; ++r) CHECK(y(r) == doctest::Approx(z[static_cast<std::size_t>(r)]).epsilon(1e-14));
  CHECK(synthesize(p, y).size() == 5);
}

TEST_CASE("zero-centred quantization") {
  const Eigen::VectorXd mu = (Eigen::VectorXd(3) << 0.3, -1.2, 2.0).finished();
  CHECK(quantize(mu, mu) == mu);
  const std::vector<double> lat = {0.8, -1.7, 2.5}, means = {0.3, -1.2, 2.0};
  CHECK(quantize_symbols(lat, means) == std::vector<int>{1, -1, 1});
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> a(6), m(6), a2(6), m2(6);
    for (int i = 0; i < 6; ++i) {
      a[static_cast<std::size_t>(i)] = rng.uniform(-10, 10);
      m[static_cast<std::size_t>(i)] = rng.uniform(-3, 3);
    }
    const auto s = quantize_symbols(a, m);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(s[i] == static_cast<int>(std::round(a[i] - m[i])));
      const double shift = static_cast<double>(static_cast<int>(rng.below(7)) - 3);
      a2[i] = a[i] + shift;
      m2[i] = m[i] + shift;
    }
    // Symbols only see latent - mean; the integer shift cancels up to FP rounding.
    const auto s2 = quantize_symbols(a2, m2);
    int differ = 0;
    for (std::size_t i = 0; i < 6; ++i) differ += std::fabs(std::fabs(a[i] - m[i] - std::round(a[i] - m[i])) - 0.5) > 1e-9 && s2[i] != s[i];
    CHECK(differ == 0);
  }
}

TEST_CASE("discretized Gaussian likelihood") {
  CHECK(discretized_gaussian_likelihood(0, 1e3) / discretized_gaussian_likelihood(1, 1e3) ==
        doctest::Approx(1.0).epsilon(1e-3));
  for (int k = 1; k <= kSymbolMax; ++k)
    CHECK(std::fabs(discretized_gaussian_likelihood(k, 1.0) - discretized_gaussian_likelihood(-k, 1.0)) <= 1e-15);
  for (double s : {kScaleFloor, 0.5, 1.0, 7.0, 30.0, 200.0}) {
    const auto pmf = discretized_gaussian_pmf(s);
    double sum = 0.0;
    for (double p : pmf) {
      CHECK(p > 0.0);
      sum += p;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-9);
  }
  CHECK_THROWS_AS(discretized_gaussian_likelihood(kSymbolMax + 1, 1.0), DiagnosticError);
  CHECK_THROWS_AS(discretized_gaussian_likelihood(0, 0.05), SpecError);
}

TEST_CASE("surrogate outputs") {
  Rng rng(9);
  Eigen::MatrixXd z(4, 50);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.uniform(-5, 5);
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(4, 0.25);
  const auto none = surrogate_pass(z, {SurrogateKind::kNone}, mu, &rng);
  CHECK(none.rate_input == z);
  CHECK(none.distortion_input == z);
  const auto mixed = surrogate_pass(z, {SurrogateKind::kMixed}, mu, &rng);
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    for (Eigen::Index i = 0; i < 4; ++i)
      CHECK(mixed.distortion_input(i, j) == doctest::Approx(std::round(z(i, j) - mu(i)) + mu(i)).epsilon(1e-15));

  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(1, 1000000);
  const auto noise = surrogate_pass(big, {SurrogateKind::kNoise}, Eigen::VectorXd::Zero(1), &rng);
  const Eigen::ArrayXXd u = noise.rate_input.array();
  CHECK((u > -0.5).all());
  CHECK((u < 0.5).all());
  CHECK(std::fabs(u.mean()) <= 3.0 * std::sqrt(1.0 / 12.0 / 1e6));
}

TEST_CASE("SGA approaches hard rounding as the temperature vanishes") {
  Rng rng(17);
  std::size_t mismatch = 0, mismatch_away = 0, away = 0;
  const std::size_t draws = 100000;
  for (std::size_t t = 0; t < draws; ++t) {
    const double w = rng.uniform(-4.0, 4.0);
    const SgaSample s = sga_round(w, 0.01, rng.gumbel(), rng.gumbel());
    const bool wrong = std::fabs(s.value - std::round(w)) > 0.5;
    mismatch += wrong;
    if (std::fabs(std::fabs(w - std::floor(w)) - 0.5) >= 0.05) {
      ++away;
      mismatch_away += wrong;
    }
  }
  MESSAGE("SGA mismatch at tau=0.01: all=" << static_cast<double>(mismatch) / draws
                                          << " away-from-tie=" << static_cast<double>(mismatch_away) / away);
  CHECK(static_cast<double>(mismatch_away) / static_cast<double>(away) < 1e-3);
}

TEST_CASE("gradient of the hard objective is refused") {
  Rng rng(2);
  const CodecParams p = init_params({3, 2, {}, SystemKind::kDeterministic}, rng);
  CodecParams g = p.zeros_like();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
  CHECK_THROWS_AS(system_loss(p, x, {SystemKind::kDeterministic, {SurrogateKind::kNone}, 1.0}, &rng, nullptr, &g),
                  SpecError);
  CHECK_NOTHROW(system_loss(p, x, {SystemKind::kDeterministic, {SurrogateKind::kNone}, 1.0}, &rng));
}

TEST_CASE("zero-loss point has zero gradients") {
  // Zero transforms on an all-zero batch with the stochastic posterior equal
  // to the prior: KL = 0 and SSE = 0.
  Rng rng(1);
  CodecParams p = init_params({3, 2, {}, SystemKind::kStochasticGaussian}, rng);
  for (auto t : p.tensors()) std::fill(t.begin(), t.end(), 0.0);
  CodecParams g = p.zeros_like();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 5);
  const LossValue v = system_loss(p, x, {SystemKind::kStochasticGaussian, {SurrogateKind::kNone}, 1.0}, &rng, nullptr, &g);
  CHECK(std::fabs(v.loss) < 1e-15);
  for (auto t : g.tensors())
    for (double d : t) CHECK(std::fabs(d) < 1e-15);
}

TEST_CASE("gradients match central finite differences in every configuration") {
  const std::vector<std::pair<SystemKind, Surrogate>> configs = {
      {SystemKind::kDeterministic, {SurrogateKind::kNoise}},
      {SystemKind::kDeterministic, {SurrogateKind::kSte}},
      {SystemKind::kDeterministic, {SurrogateKind::kMixed}},
      {SystemKind::kDeterministic, {SurrogateKind::kSga, 0.5}},
      {SystemKind::kStochasticGaussian, {SurrogateKind::kNone}},
  };
  for (const auto& [system, surrogate] : configs) {
    const GradCheckSummary s = run_gradcheck(system, surrogate, 20, 1234);
    MESSAGE(to_string(system) << "/" << to_string(surrogate.kind) << ": worst relative error " << s.worst
                              << " over " << s.checked << " parameters");
    CHECK(s.worst <= 1e-4);
  }
}
