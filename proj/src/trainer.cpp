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

#include "rdgap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "rdgap/hash.hpp"
#include "rdgap/metrics.hpp"
#include "rdgap/parallel.hpp"

namespace rdgap {

double LrSchedule::at(std::size_t step, std::size_t steps) const {
  double lr = initial;
  if (steps == 0) return lr;
  const double t = static_cast<double>(step) / static_cast<double>(steps);
  for (std::size_t k = 0; k < milestones.size() && k < factors.size(); ++k)
    if (t >= milestones[k]) lr *= factors[k];
  return lr;
}

Architecture TrainConfig::architecture() const {
  Architecture a;
  a.source_dim = source.dimension;
  a.latent_dim = latent_dim;
  a.hidden = hidden;
  a.system = system;
  return a;
}

void TrainConfig::validate() const {
  source.validate();
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw SpecError("train config: lambda must be positive");
  if (system == SystemKind::kDeterministic && surrogate.kind == SurrogateKind::kNone)
    throw SpecError("train config: the deterministic system needs a quantization surrogate");
  if (system == SystemKind::kStochasticGaussian && surrogate.kind != SurrogateKind::kNone)
    throw SpecError("train config: the stochastic system takes surrogate 'none'");
  if (surrogate.kind == SurrogateKind::kSga && !(surrogate.temperature > 0.0))
    throw SpecError("train config: SGA temperature must be positive");
  if (batch_size == 0 || latent_dim == 0) throw SpecError("train config: batch size and latent dim must be positive");
  if (!(schedule.initial > 0.0)) throw SpecError("train config: learning rate must be positive");
  if (schedule.milestones.size() != schedule.factors.size())
    throw SpecError("train config: milestones and factors differ in length");
  for (double f : schedule.factors)
    if (!(f > 0.0)) throw SpecError("train config: schedule factors must be positive");
  if (source.kind == SourceKind::kDiscretePmf) throw SpecError("train config: discrete sources are not codec inputs");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {
      {"lambda", c.lambda},
      {"system", to_string(c.system)},
      {"surrogate", to_string(c.surrogate.kind)},
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"lr", {{"initial", c.schedule.initial}, {"milestones", c.schedule.milestones}, {"factors", c.schedule.factors}}},
      {"source", to_json(c.source)},
      {"latent_dim", c.latent_dim},
      {"hidden", c.hidden},
  };
  if (c.surrogate.kind == SurrogateKind::kSga) j["temperature"] = c.surrogate.temperature;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SpecError("train config: expected a JSON object");
  try {
    TrainConfig c;
    c.lambda = j.at("lambda").get<double>();
    c.system = system_kind_from_string(j.value("system", std::string("deterministic")));
    const std::string default_surrogate = c.system == SystemKind::kDeterministic ? "mixed" : "none";
    c.surrogate.kind = surrogate_kind_from_string(j.value("surrogate", default_surrogate));
    c.surrogate.temperature = j.value("temperature", c.surrogate.temperature);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("lr")) {
      const auto& lr = j.at("lr");
      c.schedule.initial = lr.value("initial", c.schedule.initial);
      c.schedule.milestones = lr.value("milestones", c.schedule.milestones);
      c.schedule.factors = lr.value("factors", c.schedule.factors);
    }
    if (j.contains("source")) c.source = source_from_json(j.at("source"));
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("train config: ") + e.what());
  }
}

std::string config_hash(const TrainConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(Fnv1a().text(to_json(config).dump()).digest()));
  return buf;
}

TrainingDiverged::TrainingDiverged(std::size_t step, CodecParams snapshot)
    : DiagnosticError("training diverged (non-finite loss or gradient) at step " + std::to_string(step)),
      step_(step),
      snapshot_(std::move(snapshot)) {}

Adam::Adam(const CodecParams& shape, double beta1, double beta2, double eps)
    : m_(shape.parameter_count(), 0.0), v_(shape.parameter_count(), 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(CodecParams& params, const CodecParams& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.tensors();
  const auto g = grad.tensors();
  std::size_t k = 0;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].size(); ++i, ++k) {
      const double gi = g[t][i];
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * gi;
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * gi * gi;
      p[t][i] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
    }
}

namespace {

bool all_finite(const CodecParams& p) {
  for (auto t : p.tensors())
    for (double v : t)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TrainedModel train_from(const TrainConfig& config, CodecParams params) {
  config.validate();
  params.validate();
  TrainedModel model;
  model.config = config;
  model.provenance = {config.seed, config_hash(config)};
  const std::uint64_t data_key = derive_key(config.seed, 1);
  Rng noise = Rng(config.seed).split(2);
  Adam adam(params);
  const LossConfig loss{config.system, config.surrogate, config.lambda};
  model.trace.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const SampleBatch batch = sample(config.source, config.batch_size, derive_key(data_key, step));
    const Eigen::MatrixXd x = columns(batch);
    CodecParams grad = params.zeros_like();
    const LossValue v = system_loss(params, x, loss, &noise, nullptr, &grad);
    if (!std::isfinite(v.loss) || !all_finite(grad)) throw TrainingDiverged(step, params);
    const double lr = config.schedule.at(step, config.steps);
    adam.step(params, grad, lr);
    model.trace.push_back({step, v.rate_bits, v.distortion, v.loss, lr});
  }
  if (!all_finite(params)) throw TrainingDiverged(config.steps, params);
  model.params = std::move(params);
  return model;
}

TrainedModel train(const TrainConfig& config) {
  config.validate();
  Rng init = Rng(config.seed).split(0);
  return train_from(config, init_params(config.architecture(), init));
}

RdPoint eval_rd(const CodecParams& params, SystemKind system, double lambda, const SampleBatch& batch,
                std::uint64_t seed) {
  if (batch.count() == 0) throw SpecError("eval_rd: empty batch");
  if (batch.dimension() != params.source_dim()) throw SpecError("eval_rd: batch dimension does not match the model");
  const Eigen::MatrixXd x = columns(batch);
  const double n = static_cast<double>(params.source_dim());
  const double count = static_cast<double>(batch.count());
  RdPoint p;
  p.lambda = lambda;
  if (system == SystemKind::kDeterministic) {
    const Eigen::MatrixXi symbols = encode_batch(params, x);
    const DiscretizedGaussianModel model(params);
    double bits = 0.0;
    for (Eigen::Index j = 0; j < symbols.cols(); ++j)
      bits += empirical_codelength_bits(std::span<const int>(symbols.col(j).data(), params.latent_dim()), model);
    const Eigen::MatrixXd xhat = decode_batch(params, symbols);
    p.rate_bits = bits / count / n;
    p.distortion = (x - xhat).squaredNorm() / count / n;
    p.label = CurveLabel::kEmpiricalIdeal;
    return p;
  }
  if (!params.posterior_log_scale) throw SpecError("eval_rd: stochastic evaluation needs a posterior head");
  const Eigen::MatrixXd mean = params.analysis.forward(x);
  Eigen::MatrixXd log_sigma = params.posterior_log_scale->weight * x;
  log_sigma.colwise() += params.posterior_log_scale->bias;
  const Eigen::MatrixXd sigma = log_sigma.array().exp().max(kScaleFloor).matrix();
  std::vector<GaussianPosterior> posts;
  posts.reserve(batch.count());
  Eigen::MatrixXd y(mean.rows(), mean.cols());
  for (Eigen::Index j = 0; j < mean.cols(); ++j) {
    posts.push_back({mean.col(j), sigma.col(j)});
    Rng rng(derive_key(seed, static_cast<std::uint64_t>(j)));
    for (Eigen::Index i = 0; i < mean.rows(); ++i) y(i, j) = mean(i, j) + sigma(i, j) * rng.normal();
  }
  const Eigen::MatrixXd xhat = params.synthesis.forward(y);
  p.rate_bits = mc_rate_estimate(posts, {params.prior_mean, params.prior_scale()}, params.source_dim());
  p.distortion = (x - xhat).squaredNorm() / count / n;
  p.label = CurveLabel::kEstimatedBound;
  return p;
}

RdPoint eval_rd(const TrainedModel& model, const SampleBatch& batch, std::uint64_t seed) {
  return eval_rd(model.params, model.config.system, model.config.lambda, batch, seed);
}

SweepResult sweep(const TrainConfig& base, std::span<const double> lambdas, const SampleBatch& test_batch,
                  std::size_t threads) {
  if (lambdas.size() < 4) throw SpecError("sweep: need at least 4 lambda values");
  for (std::size_t i = 1; i < lambdas.size(); ++i)
    if (!(lambdas[i] > lambdas[i - 1])) throw SpecError("sweep: lambda grid must be strictly increasing");
  SweepResult out;
  out.models.resize(lambdas.size());
  out.points.resize(lambdas.size());
  parallel_for(lambdas.size(), threads, [&](std::size_t i) {
    TrainConfig c = base;
    c.lambda = lambdas[i];
    out.models[i] = train(c);
    out.points[i] = eval_rd(out.models[i], test_batch, derive_key(base.seed, 7));
  });
  out.curve = lower_convex_hull(out.points);
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace) {
  out << "step,rate_bits,distortion,loss,lr\n";
  char line[160];
  for (const auto& t : trace) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", t.step, t.rate_bits, t.distortion, t.loss, t.lr);
    out << line;
  }
}

TraceCheck check_trace_nonincreasing(const std::vector<TracePoint>& trace, std::size_t window, double sigmas) {
  TraceCheck check;
  if (window == 0) throw SpecError("trace check: window must be positive");
  std::vector<double> se;
  for (std::size_t start = 0; start + window <= trace.size(); start += window) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = start; i < start + window; ++i) mean += trace[i].loss;
    mean /= static_cast<double>(window);
    for (std::size_t i = start; i < start + window; ++i) sq += (trace[i].loss - mean) * (trace[i].loss - mean);
    check.window_means.push_back(mean);
    se.push_back(std::sqrt(sq / static_cast<double>(window - (window > 1 ? 1 : 0))) /
                 std::sqrt(static_cast<double>(window)));
  }
  for (std::size_t k = 1; k < check.window_means.size(); ++k) {
    const double tol = sigmas * std::hypot(se[k], se[k - 1]);
    if (check.window_means[k] > check.window_means[k - 1] + tol) ++check.increases;
  }
  return check;
}

}  // namespace rdgap
