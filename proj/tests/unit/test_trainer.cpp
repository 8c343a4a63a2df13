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
#include <sstream>

#include "doctest.h"
#include "rdgap/entropy_coding.hpp"
#include "rdgap/error.hpp"
#include "rdgap/metrics.hpp"
#include "rdgap/trainer.hpp"

using namespace rdgap;

namespace {

TrainConfig scalar_config(double lambda, std::size_t steps) {
  TrainConfig c;
  c.lambda = lambda;
  c.steps = steps;
  c.batch_size = 128;
  c.seed = 3;
  c.source = SourceSpec::gaussian(1);
  c.latent_dim = 1;
  c.schedule.initial = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const LrSchedule s{1.0, {0.8, 0.9}, {0.4, 0.25}};
  CHECK(s.at(0, 100) == 1.0);
  CHECK(s.at(79, 100) == 1.0);
  CHECK(s.at(80, 100) == doctest::Approx(0.4));
  CHECK(s.at(95, 100) == doctest::Approx(0.1));
}

TEST_CASE("config validation and JSON") {
  TrainConfig c = scalar_config(0.5, 10);
  CHECK(train_config_from_json(to_json(c)).lambda == 0.5);
  CHECK(to_json(train_config_from_json(to_json(c))) == to_json(c));
  CHECK(config_hash(c) == config_hash(train_config_from_json(to_json(c))));
  TrainConfig d = c;
  d.lambda = 0.6;
  CHECK(config_hash(c) != config_hash(d));
  d = c;
  d.lambda = 0.0;
  CHECK_THROWS_AS(d.validate(), SpecError);
  d = c;
  d.surrogate.kind = SurrogateKind::kNone;
  CHECK_THROWS_AS(d.validate(), SpecError);
  d = c;
  d.system = SystemKind::kStochasticGaussian;
  CHECK_THROWS_AS(d.validate(), SpecError);
  d.surrogate.kind = SurrogateKind::kNone;
  CHECK_NOTHROW(d.validate());
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"lambda": "x"})")), SpecError);
}

TEST_CASE("training is deterministic and records a full trace") {
  const TrainConfig c = scalar_config(2.0, 50);
  const TrainedModel a = train(c), b = train(c);
  CHECK(a.params.flatten() == b.params.flatten());
  REQUIRE(a.trace.size() == 50);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].loss == b.trace[i].loss);
    CHECK(std::isfinite(a.trace[i].loss));
  }
  CHECK(a.provenance.seed == 3);
  CHECK(a.provenance.config_hash == config_hash(c));
  std::ostringstream csv;
  write_trace_csv(csv, a.trace);
  CHECK(csv.str().rfind("step,rate_bits,distortion,loss,lr\n", 0) == 0);
}

TEST_CASE("extreme lambdas") {
  const SampleBatch test = sample(SourceSpec::gaussian(1), 4000, 99);
  const RdPoint low = eval_rd(train(scalar_config(1e-6, 2000)), test);
  CHECK(low.rate_bits < 0.05);
  // The encoder gain has to grow about 30-fold, so this run uses a larger step.
  TrainConfig hc = scalar_config(1e3, 2000);
  hc.schedule.initial = 3e-2;
  const RdPoint high = eval_rd(train(hc), test);
  CHECK(high.distortion < 0.01);
}

TEST_CASE("evaluation of a zero model and the code-length oracle") {
  const SourceSpec src = SourceSpec::gaussian(4);
  const SampleBatch test = sample(src, 2000, 5);
  Rng rng(1);
  CodecParams p = init_params(Architecture{4, 3, {5}, SystemKind::kDeterministic}, rng);
  for (auto* t : {&p.analysis, &p.synthesis})
    for (auto& l : t->layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
  p.prior_log_scale.setConstant(std::log(kScaleFloor));
  const RdPoint z = eval_rd(p, SystemKind::kDeterministic, 1.0, test);
  CHECK(z.rate_bits < 1e-3);
  CHECK(z.distortion == doctest::Approx(test.data.array().square().mean()).epsilon(1e-12));
  CHECK(z.label == CurveLabel::kEmpiricalIdeal);

  // Deterministic rate equals the code length recomputed independently.
  const TrainedModel m = train([] {
    TrainConfig c;
    c.lambda = 4.0;
    c.steps = 200;
    c.source = SourceSpec::gaussian(4);
    c.latent_dim = 3;
    c.hidden = {6};
    c.schedule.initial = 5e-3;
    return c;
  }());
  const RdPoint r = eval_rd(m, test);
  const Eigen::MatrixXi k = encode_batch(m.params, columns(test));
  const DiscretizedGaussianModel model(m.params);
  const std::vector<int> flat(k.data(), k.data() + k.size());
  CHECK(r.rate_bits == doctest::Approx(empirical_codelength_bits(flat, model) / test.data.size()).epsilon(1e-12));
  CHECK(eval_rd(m, test).rate_bits == r.rate_bits);
}

TEST_CASE("stochastic linear-Gaussian system approaches R(D)") {
  TrainConfig c;
  c.system = SystemKind::kStochasticGaussian;
  c.surrogate.kind = SurrogateKind::kNone;
  c.lambda = 2.0;  // 1 / (2 D) at D = 0.25
  c.steps = 3000;
  c.seed = 11;
  c.source = SourceSpec::gaussian(16);
  c.latent_dim = 16;
  c.schedule.initial = 5e-3;
  const TrainedModel m = train(c);
  CHECK(check_trace_nonincreasing(m.trace).ok());
  const RdPoint p = eval_rd(m, sample(c.source, 4000, 12), 13);
  CHECK(p.label == CurveLabel::kEstimatedBound);
  const double analytic = 0.5 * std::log2(1.0 / p.distortion);
  INFO("rate ", p.rate_bits, " distortion ", p.distortion);
  CHECK(p.distortion == doctest::Approx(0.25).epsilon(0.1));
  CHECK(std::fabs(p.rate_bits - analytic) < 0.1);
  CHECK(p.rate_bits >= analytic - 0.02);
  CHECK(eval_rd(m, sample(c.source, 4000, 12), 13).distortion == p.distortion);
}

TEST_CASE("sweep yields a hulled curve") {
  TrainConfig c = scalar_config(1.0, 300);
  const std::vector<double> lambdas = {0.5, 1.0, 2.0, 4.0};
  const SweepResult s = sweep(c, lambdas, sample(c.source, 2000, 4), 1);
  CHECK(s.models.size() == 4);
  CHECK(s.points.size() == 4);
  for (std::size_t i = 1; i < s.curve.points.size(); ++i) {
    CHECK(s.curve.points[i].distortion > s.curve.points[i - 1].distortion);
    CHECK(s.curve.points[i].rate_bits <= s.curve.points[i - 1].rate_bits);
  }
  CHECK_THROWS_AS(sweep(c, std::vector<double>{1.0, 2.0}, sample(c.source, 10, 4), 1), SpecError);
}

TEST_CASE("trace check") {
  std::vector<TracePoint> flat(400);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = {i, 0, 0, 1.0 + 0.01 * ((i * 7919) % 13) / 13.0, 0};
  CHECK(check_trace_nonincreasing(flat).ok());
  std::vector<TracePoint> rising = flat;
  for (std::size_t i = 0; i < rising.size(); ++i) rising[i].loss += 0.01 * static_cast<double>(i);
  CHECK(!check_trace_nonincreasing(rising).ok());
}
