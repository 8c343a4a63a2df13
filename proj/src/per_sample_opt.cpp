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

#include "rdgap/per_sample_opt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <ostream>

#include "rdgap/error.hpp"
#include "rdgap/normal.hpp"
#include "rdgap/parallel.hpp"

namespace rdgap {

void PerSampleConfig::validate() const {
  if (!(lr_initial > 0.0) || !(lr_final > 0.0)) throw SpecError("per-sample config: learning rates must be positive");
  if (!(tau_min > 0.0) || !(tau0 >= tau_min)) throw SpecError("per-sample config: need tau0 >= tau_min > 0");
  if (!(tau_min_fraction > 0.0 && tau_min_fraction <= 1.0))
    throw SpecError("per-sample config: tau_min_fraction must lie in (0, 1]");
  if (eval_every == 0 || mc_samples == 0 || draws_per_step == 0)
    throw SpecError("per-sample config: eval_every, mc_samples and draws_per_step must be positive");
  if (symbol_bound < 0) throw SpecError("per-sample config: symbol_bound must be nonnegative");
}

double PerSampleConfig::lr(std::size_t step) const {
  if (steps <= 1) return lr_initial;
  const double t = static_cast<double>(step) / static_cast<double>(steps - 1);
  return lr_final + 0.5 * (lr_initial - lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

double PerSampleConfig::tau(std::size_t step) const {
  const double horizon = std::max(1.0, tau_min_fraction * static_cast<double>(steps));
  const double c = std::log(tau0 / tau_min) / horizon;
  return std::max(tau_min, tau0 * std::exp(-c * static_cast<double>(step)));
}

nlohmann::json to_json(const PerSampleConfig& c) {
  return {{"steps", c.steps},           {"lr_initial", c.lr_initial},
          {"lr_final", c.lr_final},     {"tau0", c.tau0},
          {"tau_min", c.tau_min},       {"tau_min_fraction", c.tau_min_fraction},
          {"eval_every", c.eval_every}, {"stochastic_eval_every", c.stochastic_eval_every},
          {"mc_samples", c.mc_samples},
          {"draws_per_step", c.draws_per_step}, {"symbol_bound", c.symbol_bound},
          {"seed", c.seed}};
}

PerSampleConfig per_sample_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SpecError("per-sample config: expected a JSON object");
  try {
    PerSampleConfig c;
    c.steps = j.value("steps", c.steps);
    c.lr_initial = j.value("lr_initial", c.lr_initial);
    c.lr_final = j.value("lr_final", c.lr_final);
    c.tau0 = j.value("tau0", c.tau0);
    c.tau_min = j.value("tau_min", c.tau_min);
    c.tau_min_fraction = j.value("tau_min_fraction", c.tau_min_fraction);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.stochastic_eval_every = j.value("stochastic_eval_every", c.stochastic_eval_every);
    c.mc_samples = j.value("mc_samples", c.mc_samples);
    c.draws_per_step = j.value("draws_per_step", c.draws_per_step);
    c.symbol_bound = j.value("symbol_bound", c.symbol_bound);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("per-sample config: ") + e.what());
  }
}

namespace {

// Adam on a plain vector.
class VectorAdam {
 public:
  explicit VectorAdam(Eigen::Index n) : m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}
  void step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double lr) {
    ++t_;
    m_ = 0.9 * m_ + 0.1 * g;
    v_ = 0.999 * v_ + 0.001 * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
    x.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + 1e-8);
  }

 private:
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

double hard_objective(const CodecParams& params, const DiscretizedGaussianModel& model, double lambda,
                      const Eigen::VectorXd& x, std::span<const int> symbols, double* rate_nats = nullptr,
                      double* sse = nullptr) {
  double r = 0.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const double p = model.probability(i, symbols[i]);
    if (!(p > 0.0)) throw DiagnosticError("per-sample: symbol outside the supported range at latent " + std::to_string(i));
    r -= std::log(p);
  }
  const Eigen::VectorXd y = dequantize(symbols, params.prior_mean);
  const double e = (x - params.synthesis.forward(y)).squaredNorm();
  if (rate_nats) *rate_nats = r;
  if (sse) *sse = e;
  return r + lambda * e;
}

void zero(Transform& t) {
  for (auto& l : t.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

}  // namespace

double deterministic_objective(const CodecParams& params, double lambda, const Eigen::VectorXd& x,
                               std::span<const int> symbols) {
  if (symbols.size() != params.latent_dim()) throw SpecError("deterministic_objective: symbol count mismatch");
  return hard_objective(params, DiscretizedGaussianModel(params), lambda, x, symbols);
}

namespace {

DeterministicRefinement refine_deterministic_with(const Eigen::VectorXd& x, const CodecParams& params,
                                                  const DiscretizedGaussianModel& model, double lambda,
                                                  const PerSampleConfig& cfg, std::uint64_t index) {
  const Eigen::Index latent = static_cast<Eigen::Index>(params.latent_dim());
  const Eigen::VectorXd scale = params.prior_scale();
  const Eigen::VectorXd& mu = params.prior_mean;
  const double n = static_cast<double>(params.source_dim());

  Eigen::VectorXd w = analyze(params, x) - mu;
  DeterministicRefinement out;
  out.initial_symbols.resize(static_cast<std::size_t>(latent));
  for (Eigen::Index i = 0; i < latent; ++i) {
    const double k = round_half_away(w(i));
    if (!(k >= kSymbolMin && k <= kSymbolMax)) throw DiagnosticError("per-sample: amortized symbol overflow");
    out.initial_symbols[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  out.symbols = out.initial_symbols;
  out.initial_objective = hard_objective(params, model, lambda, x, out.symbols);
  double best = out.initial_objective;

  const double lo = std::max<double>(kSymbolMin, -cfg.symbol_bound) - 0.499;
  const double hi = std::min<double>(kSymbolMax, cfg.symbol_bound) + 0.499;
  Rng rng = Rng(cfg.seed).split(index);
  VectorAdam adam(latent);
  Transform scratch = params.synthesis;
  Transform::Trace trace;
  std::vector<int> candidate(static_cast<std::size_t>(latent));
  Eigen::VectorXd v(latent), ds(latent), d_rate(latent);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double tau = cfg.tau(step);
    for (Eigen::Index i = 0; i < latent; ++i) {
      const double gf = rng.gumbel(), gc = rng.gumbel();
      const SgaSample s = sga_round(w(i), tau, gf, gc);
      v(i) = s.value;
      ds(i) = s.derivative;
      d_rate(i) = -log_bin_mass(s.value, scale(i)).d_center;
    }
    const Eigen::MatrixXd xhat = params.synthesis.forward(v + mu, &trace);
    zero(scratch);
    const Eigen::MatrixXd d_y = params.synthesis.backward(trace, 2.0 * lambda * (xhat - x), scratch);
    const Eigen::VectorXd g = ds.cwiseProduct(d_rate + d_y.col(0));
    adam.step(w, g, cfg.lr(step));
    if (!w.allFinite()) throw DiagnosticError("per-sample refinement diverged at step " + std::to_string(step));
    w = w.cwiseMax(lo).cwiseMin(hi);
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      for (Eigen::Index i = 0; i < latent; ++i) candidate[static_cast<std::size_t>(i)] = static_cast<int>(round_half_away(w(i)));
      const double j = hard_objective(params, model, lambda, x, candidate);
      if (j < best) {
        best = j;
        out.symbols = candidate;
      }
    }
  }
  double rate_nats = 0.0, sse = 0.0;
  out.final_objective = hard_objective(params, model, lambda, x, out.symbols, &rate_nats, &sse);
  out.latent = dequantize(out.symbols, mu);
  out.rate_bits = rate_nats / std::numbers::ln2 / n;
  out.distortion = sse / n;
  return out;
}

}  // namespace

DeterministicRefinement refine_deterministic(const Eigen::VectorXd& x, const CodecParams& params, double lambda,
                                             const PerSampleConfig& config, std::uint64_t sample_index) {
  config.validate();
  if (params.posterior_log_scale) throw SpecError("refine_deterministic: deterministic model required");
  if (x.size() != static_cast<Eigen::Index>(params.source_dim())) throw SpecError("refine_deterministic: input shape mismatch");
  return refine_deterministic_with(x, params, DiscretizedGaussianModel(params), lambda, config, sample_index);
}

double stochastic_objective(const CodecParams& params, double lambda, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& mean, const Eigen::VectorXd& scale, const Eigen::MatrixXd& eps) {
  const Eigen::VectorXd sp = params.prior_scale();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double d = mean(i) - params.prior_mean(i);
    kl += std::log(sp(i) / scale(i)) + (scale(i) * scale(i) + d * d) / (2.0 * sp(i) * sp(i)) - 0.5;
  }
  Eigen::MatrixXd y = eps.array().colwise() * scale.array();
  y.colwise() += mean;
  const Eigen::MatrixXd xhat = params.synthesis.forward(y);
  const double sse = (xhat.colwise() - x).squaredNorm() / static_cast<double>(eps.cols());
  return kl + lambda * sse;
}

namespace {

Eigen::MatrixXd normals(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd e(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) e(i, j) = rng.normal();
  return e;
}

Eigen::VectorXd floored_exp(const Eigen::VectorXd& r) { return r.array().exp().max(kScaleFloor).matrix(); }

}  // namespace

StochasticRefinement refine_stochastic(const Eigen::VectorXd& x, const CodecParams& params, double lambda,
                                       const PerSampleConfig& cfg, std::uint64_t index) {
  cfg.validate();
  if (!params.posterior_log_scale) throw SpecError("refine_stochastic: stochastic model required");
  if (x.size() != static_cast<Eigen::Index>(params.source_dim())) throw SpecError("refine_stochastic: input shape mismatch");
  const Eigen::Index latent = static_cast<Eigen::Index>(params.latent_dim());
  const Eigen::VectorXd sp = params.prior_scale();
  const Eigen::VectorXd& pm = params.prior_mean;

  Rng rng = Rng(cfg.seed).split(index);
  const Eigen::MatrixXd crn = normals(rng, latent, static_cast<Eigen::Index>(cfg.mc_samples));

  StochasticRefinement out;
  Eigen::VectorXd mu = analyze(params, x);
  Eigen::VectorXd rho = params.posterior_log_scale->weight * x + params.posterior_log_scale->bias;
  out.initial_mean = mu;
  out.initial_scale = floored_exp(rho);
  out.mean = out.initial_mean;
  out.scale = out.initial_scale;
  out.initial_objective = stochastic_objective(params, lambda, x, mu, out.initial_scale, crn);
  double best = out.initial_objective;

  VectorAdam adam_mu(latent), adam_rho(latent);
  Transform scratch = params.synthesis;
  Transform::Trace trace;
  const double inv_m = 1.0 / static_cast<double>(cfg.draws_per_step);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Eigen::VectorXd sigma = floored_exp(rho);
    const Eigen::MatrixXd eps = normals(rng, latent, static_cast<Eigen::Index>(cfg.draws_per_step));
    Eigen::MatrixXd y = eps.array().colwise() * sigma.array();
    y.colwise() += mu;
    const Eigen::MatrixXd xhat = params.synthesis.forward(y, &trace);
    zero(scratch);
    const Eigen::MatrixXd d_y =
        params.synthesis.backward(trace, (2.0 * lambda * inv_m) * (xhat.colwise() - x), scratch);
    Eigen::VectorXd g_mu = d_y.rowwise().sum();
    Eigen::VectorXd g_rho(latent);
    const Eigen::VectorXd d_sigma_mc = d_y.cwiseProduct(eps).rowwise().sum();
    for (Eigen::Index i = 0; i < latent; ++i) {
      const double sp2 = sp(i) * sp(i);
      g_mu(i) += (mu(i) - pm(i)) / sp2;
      const double d_sigma = -1.0 / sigma(i) + sigma(i) / sp2 + d_sigma_mc(i);
      const double e = std::exp(rho(i));
      g_rho(i) = e > kScaleFloor ? d_sigma * e : 0.0;
    }
    const double lr = cfg.lr(step);
    adam_mu.step(mu, g_mu, lr);
    adam_rho.step(rho, g_rho, lr);
    if (!mu.allFinite() || !rho.allFinite())
      throw DiagnosticError("per-sample refinement diverged at step " + std::to_string(step));
    const bool checkpoint = cfg.stochastic_eval_every > 0 && (step + 1) % cfg.stochastic_eval_every == 0;
    if (checkpoint || step + 1 == cfg.steps) {
      const Eigen::VectorXd s = floored_exp(rho);
      const double j = stochastic_objective(params, lambda, x, mu, s, crn);
      if (j < best) {
        best = j;
        out.mean = mu;
        out.scale = s;
      }
    }
  }
  out.final_objective = best;
  double kl = 0.0;
  for (Eigen::Index i = 0; i < latent; ++i) {
    const double d = out.mean(i) - pm(i);
    kl += std::log(sp(i) / out.scale(i)) + (out.scale(i) * out.scale(i) + d * d) / (2.0 * sp(i) * sp(i)) - 0.5;
  }
  out.rate_bits = kl / std::numbers::ln2 / static_cast<double>(params.source_dim());
  Eigen::MatrixXd y = crn.array().colwise() * out.scale.array();
  y.colwise() += out.mean;
  out.distortion = (params.synthesis.forward(y).colwise() - x).squaredNorm() /
                   static_cast<double>(crn.cols()) / static_cast<double>(params.source_dim());
  return out;
}

PerSampleBatch refine_batch(const Eigen::MatrixXd& x, const CodecParams& params, SystemKind system, double lambda,
                            const PerSampleConfig& config, std::size_t threads, std::uint64_t eval_seed) {
  config.validate();
  if (x.cols() == 0) throw SpecError("refine_batch: empty batch");
  const std::size_t count = static_cast<std::size_t>(x.cols());
  const double n = static_cast<double>(params.source_dim());
  PerSampleBatch out;
  out.rows.resize(count);
  std::optional<DiscretizedGaussianModel> model;
  if (system == SystemKind::kDeterministic) model.emplace(params);

  parallel_for(count, threads, [&](std::size_t j) {
    const Eigen::VectorXd xj = x.col(static_cast<Eigen::Index>(j));
    PerSampleRow& row = out.rows[j];
    row.index = j;
    if (system == SystemKind::kDeterministic) {
      if (params.posterior_log_scale) throw SpecError("refine_batch: model is not deterministic");
      const auto r = refine_deterministic_with(xj, params, *model, lambda, config, j);
      row.initial_objective = r.initial_objective;
      row.final_objective = r.final_objective;
      row.rate_bits = r.rate_bits;
      row.distortion = r.distortion;
    } else {
      const auto r = refine_stochastic(xj, params, lambda, config, j);
      row.initial_objective = r.initial_objective;
      row.final_objective = r.final_objective;
      row.rate_bits = r.rate_bits;
      // One posterior draw per input, with the same stream as eval_rd.
      Rng rng(derive_key(eval_seed, j));
      Eigen::VectorXd y(r.mean.size());
      for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = r.mean(i) + r.scale(i) * rng.normal();
      row.distortion = (xj - synthesize(params, y)).squaredNorm() / n;
    }
  });

  double rate = 0.0, dist = 0.0;
  for (const auto& r : out.rows) {
    rate += r.rate_bits;
    dist += r.distortion;
  }
  out.point.rate_bits = rate / static_cast<double>(count);
  out.point.distortion = dist / static_cast<double>(count);
  out.point.lambda = lambda;
  out.point.label =
      system == SystemKind::kDeterministic ? CurveLabel::kEmpiricalPerSample : CurveLabel::kEstimatedBoundPerSample;
  return out;
}

void write_persample_csv(std::ostream& out, const std::vector<PerSampleRow>& rows) {
  out << "index,initial_objective,final_objective,rate_bits,distortion\n";
  char line[200];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.index, r.initial_objective, r.final_objective,
                  r.rate_bits, r.distortion);
    out << line;
  }
}

}  // namespace rdgap
