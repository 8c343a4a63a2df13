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

#include "rdgap/codec.hpp"

#include <algorithm>
#include <numbers>

#include "rdgap/error.hpp"
#include "rdgap/normal.hpp"

namespace rdgap {

double shifted_softplus(double x) noexcept {
  const double sp = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return sp - std::numbers::ln2;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd Transform::forward(const Eigen::MatrixXd& x, Trace* trace) const {
  if (layers.empty()) throw SpecError("transform: no layers");
  if (x.rows() != input_dim())
    throw SpecError("transform: input has " + std::to_string(x.rows()) + " rows, expected " +
                    std::to_string(input_dim()));
  if (trace) {
    trace->inputs.clear();
    trace->pre_activations.clear();
  }
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (trace) trace->inputs.push_back(h);
    Eigen::MatrixXd z = layers[l].weight * h;
    z.colwise() += layers[l].bias;
    if (l + 1 < layers.size()) {
      if (trace) trace->pre_activations.push_back(z);
      h = z.unaryExpr([](double v) { return shifted_softplus(v); });
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Eigen::MatrixXd Transform::backward(const Trace& trace, const Eigen::MatrixXd& grad_out,
                                    Transform& grad) const {
  if (trace.inputs.size() != layers.size()) throw SpecError("transform: backward without a forward trace");
  Eigen::MatrixXd g = grad_out;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l + 1 < layers.size())
      g = g.cwiseProduct(trace.pre_activations[l].unaryExpr([](double v) { return sigmoid(v); }));
    grad.layers[l].weight.noalias() += g * trace.inputs[l].transpose();
    grad.layers[l].bias += g.rowwise().sum();
    g = layers[l].weight.transpose() * g;
  }
  return g;
}

std::string to_string(SystemKind kind) {
  return kind == SystemKind::kDeterministic ? "deterministic" : "stochastic-gaussian";
}

SystemKind system_kind_from_string(const std::string& name) {
  if (name == "deterministic") return SystemKind::kDeterministic;
  if (name == "stochastic-gaussian") return SystemKind::kStochasticGaussian;
  throw SpecError("unknown system '" + name + "'");
}

Eigen::VectorXd CodecParams::prior_scale() const {
  return prior_log_scale.array().exp().max(kScaleFloor).matrix();
}

void CodecParams::validate() const {
  if (analysis.layers.empty() || synthesis.layers.empty()) throw SpecError("codec: empty transform");
  auto check_chain = [](const Transform& t, const char* name) {
    for (std::size_t l = 0; l < t.layers.size(); ++l) {
      const auto& layer = t.layers[l];
      if (layer.bias.size() != layer.weight.rows())
        throw SpecError(std::string("codec: ") + name + " bias/weight mismatch");
      if (l > 0 && layer.weight.cols() != t.layers[l - 1].weight.rows())
        throw SpecError(std::string("codec: ") + name + " layer sizes do not chain");
    }
  };
  check_chain(analysis, "analysis");
  check_chain(synthesis, "synthesis");
  const Eigen::Index latent = prior_mean.size();
  if (analysis.output_dim() != latent || synthesis.input_dim() != latent || prior_log_scale.size() != latent)
    throw SpecError("codec: latent dimensions disagree");
  if (synthesis.output_dim() != analysis.input_dim()) throw SpecError("codec: synthesis output must match source");
  if (posterior_log_scale &&
      (posterior_log_scale->weight.rows() != latent || posterior_log_scale->weight.cols() != analysis.input_dim() ||
       posterior_log_scale->bias.size() != latent))
    throw SpecError("codec: posterior head shape mismatch");
  for (auto t : tensors())
    for (double v : t)
      if (!std::isfinite(v)) throw SpecError("codec: non-finite parameter");
}

CodecParams CodecParams::zeros_like() const {
  CodecParams z = *this;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

namespace {

template <class Self, class Span>
std::vector<Span> collect_tensors(Self& self) {
  std::vector<Span> out;
  auto add = [&](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (auto& l : self.analysis.layers) {
    add(l.weight);
    add(l.bias);
  }
  for (auto& l : self.synthesis.layers) {
    add(l.weight);
    add(l.bias);
  }
  add(self.prior_mean);
  add(self.prior_log_scale);
  if (self.posterior_log_scale) {
    add(self.posterior_log_scale->weight);
    add(self.posterior_log_scale->bias);
  }
  return out;
}

}  // namespace

std::vector<std::span<double>> CodecParams::tensors() {
  return collect_tensors<CodecParams, std::span<double>>(*this);
}

std::vector<std::span<const double>> CodecParams::tensors() const {
  return collect_tensors<const CodecParams, std::span<const double>>(*this);
}

std::size_t CodecParams::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

std::vector<double> CodecParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (auto t : tensors()) flat.insert(flat.end(), t.begin(), t.end());
  return flat;
}

void CodecParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw SpecError("codec: flat parameter size mismatch");
  std::size_t offset = 0;
  for (auto t : tensors()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.begin());
    offset += t.size();
  }
}

namespace {

AffineLayer glorot_layer(std::size_t in, std::size_t out, Rng& rng) {
  AffineLayer layer;
  layer.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = rng.uniform(-a, a);
  layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out));
  return layer;
}

Transform mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
  Transform t;
  std::size_t prev = in;
  for (std::size_t w : hidden) {
    t.layers.push_back(glorot_layer(prev, w, rng));
    prev = w;
  }
  t.layers.push_back(glorot_layer(prev, out, rng));
  return t;
}

}  // namespace

CodecParams init_params(const Architecture& arch, Rng& rng) {
  if (arch.source_dim == 0 || arch.latent_dim == 0) throw SpecError("codec: dimensions must be positive");
  CodecParams p;
  p.analysis = mlp(arch.source_dim, arch.hidden, arch.latent_dim, rng);
  std::vector<std::size_t> mirrored(arch.hidden.rbegin(), arch.hidden.rend());
  p.synthesis = mlp(arch.latent_dim, mirrored, arch.source_dim, rng);
  const auto latent = static_cast<Eigen::Index>(arch.latent_dim);
  p.prior_mean = Eigen::VectorXd::Zero(latent);
  p.prior_log_scale = Eigen::VectorXd::Zero(latent);
  if (arch.system == SystemKind::kStochasticGaussian) {
    AffineLayer head;
    head.weight = Eigen::MatrixXd::Zero(latent, static_cast<Eigen::Index>(arch.source_dim));
    head.bias = Eigen::VectorXd::Constant(latent, std::log(0.5));
    p.posterior_log_scale = std::move(head);
  }
  return p;
}

Eigen::VectorXd analyze(const CodecParams& params, const Eigen::VectorXd& x) {
  return params.analysis.forward(x);
}

Eigen::VectorXd synthesize(const CodecParams& params, const Eigen::VectorXd& y) {
  return params.synthesis.forward(y);
}

Eigen::VectorXd posterior_scale(const CodecParams& params, const Eigen::VectorXd& x) {
  if (!params.posterior_log_scale) throw SpecError("codec: model has no posterior scale head");
  if (x.size() != params.posterior_log_scale->weight.cols()) throw SpecError("codec: posterior head shape mismatch");
  const Eigen::VectorXd h = params.posterior_log_scale->weight * x + params.posterior_log_scale->bias;
  return h.array().exp().max(kScaleFloor).matrix();
}

std::vector<int> quantize_symbols(std::span<const double> latent, std::span<const double> means) {
  if (latent.size() != means.size()) throw SpecError("quantize: shape mismatch");
  std::vector<int> symbols(latent.size());
  for (std::size_t i = 0; i < latent.size(); ++i) {
    const double k = round_half_away(latent[i] - means[i]);
    if (!(std::fabs(k) < 1e9)) throw DiagnosticError("quantize: latent overflow at index " + std::to_string(i));
    symbols[i] = static_cast<int>(k);
  }
  return symbols;
}

Eigen::VectorXd quantize(const Eigen::VectorXd& latent, const Eigen::VectorXd& means) {
  if (latent.size() != means.size()) throw SpecError("quantize: shape mismatch");
  Eigen::VectorXd y(latent.size());
  for (Eigen::Index i = 0; i < latent.size(); ++i) y(i) = round_half_away(latent(i) - means(i)) + means(i);
  return y;
}

Eigen::VectorXd dequantize(std::span<const int> symbols, const Eigen::VectorXd& means) {
  if (static_cast<Eigen::Index>(symbols.size()) != means.size()) throw SpecError("dequantize: shape mismatch");
  Eigen::VectorXd y(means.size());
  for (Eigen::Index i = 0; i < means.size(); ++i) y(i) = symbols[static_cast<std::size_t>(i)] + means(i);
  return y;
}

namespace {

void check_scale(double scale) {
  if (!(scale >= kScaleFloor * (1.0 - 1e-12)) || !std::isfinite(scale))
    throw SpecError("discretized likelihood: scale below the floor");
}

// Far-tail bins underflow; they are kept strictly positive.
constexpr double kProbabilityFloor = 1e-300;

double folded_probability(int k, double scale, double offset) {
  double log_p;
  if (k == kSymbolMin)
    log_p = log_normal_cdf((k + offset + 0.5) / scale);
  else if (k == kSymbolMax)
    log_p = log_normal_cdf(-(k + offset - 0.5) / scale);
  else
    log_p = log_bin_mass(k + offset, scale).value;
  return std::max(std::exp(log_p), kProbabilityFloor);
}

}  // namespace

double discretized_gaussian_likelihood(int symbol, double scale, double offset) {
  check_scale(scale);
  if (symbol < kSymbolMin || symbol > kSymbolMax)
    throw DiagnosticError("discretized likelihood: symbol " + std::to_string(symbol) + " outside [" +
                          std::to_string(kSymbolMin) + ", " + std::to_string(kSymbolMax) + "]");
  return folded_probability(symbol, scale, offset);
}

std::vector<double> discretized_gaussian_pmf(double scale, double offset) {
  check_scale(scale);
  std::vector<double> pmf(kSymbolCount);
  for (int k = kSymbolMin; k <= kSymbolMax; ++k) pmf[static_cast<std::size_t>(k - kSymbolMin)] = folded_probability(k, scale, offset);
  return pmf;
}

DiscretizedGaussianModel::DiscretizedGaussianModel(Eigen::VectorXd scales) : scales_(std::move(scales)) {
  if (scales_.size() == 0) throw SpecError("entropy model: no dimensions");
  for (Eigen::Index i = 0; i < scales_.size(); ++i) pmf_.push_back(discretized_gaussian_pmf(scales_(i)));
}

double DiscretizedGaussianModel::probability(std::size_t position, int symbol) const {
  if (symbol < kSymbolMin || symbol > kSymbolMax) return 0.0;
  return pmf_[position % pmf_.size()][static_cast<std::size_t>(symbol - kSymbolMin)];
}

std::string to_string(SurrogateKind kind) {
  switch (kind) {
    case SurrogateKind::kNoise: return "additive-uniform-noise";
    case SurrogateKind::kSte: return "ste-round";
    case SurrogateKind::kMixed: return "mixed";
    case SurrogateKind::kSga: return "sga";
    case SurrogateKind::kNone: return "none";
  }
  return "unknown";
}

SurrogateKind surrogate_kind_from_string(const std::string& name) {
  if (name == "noise") return SurrogateKind::kNoise;
  if (name == "ste") return SurrogateKind::kSte;
  for (SurrogateKind k : {SurrogateKind::kNoise, SurrogateKind::kSte, SurrogateKind::kMixed,
                          SurrogateKind::kSga, SurrogateKind::kNone})
    if (to_string(k) == name) return k;
  throw SpecError("unknown surrogate '" + name + "'");
}

SgaSample sga_round(double w, double temperature, double gumbel_floor, double gumbel_ceil) noexcept {
  constexpr double kClip = 1.0 - 1e-5;
  const double lower = std::floor(w);
  const double d_floor = w - lower;        // in [0, 1)
  const double d_ceil = lower + 1.0 - w;   // in (0, 1]
  const double cf = std::min(d_floor, kClip);
  const double cc = std::min(d_ceil, kClip);
  const double logit_floor = -std::atanh(cf) / temperature;
  const double logit_ceil = -std::atanh(cc) / temperature;
  const double ceil_weight = sigmoid(((logit_ceil + gumbel_ceil) - (logit_floor + gumbel_floor)) / temperature);
  // d logit / d w for each branch; zero once clipped.
  const double dlf = d_floor < kClip ? -1.0 / (temperature * (1.0 - cf * cf)) : 0.0;
  const double dlc = d_ceil < kClip ? 1.0 / (temperature * (1.0 - cc * cc)) : 0.0;
  SgaSample s;
  s.ceil_weight = ceil_weight;
  s.value = lower + ceil_weight;
  s.derivative = ceil_weight * (1.0 - ceil_weight) * (dlc - dlf) / temperature;
  return s;
}

LatentChannelOutput surrogate_pass(const Eigen::MatrixXd& latent, const Surrogate& surrogate,
                                   const Eigen::VectorXd& prior_mean, Rng* rng, const ChannelRecord* replay,
                                   const Eigen::VectorXd* prior_scale) {
  const Eigen::Index rows = latent.rows(), cols = latent.cols();
  if (prior_mean.size() != rows) throw SpecError("surrogate: prior mean shape mismatch");
  if (surrogate.kind == SurrogateKind::kSga && !(surrogate.temperature > 0.0))
    throw SpecError("surrogate: SGA temperature must be positive");
  const bool replaying = replay && replay->filled;

  LatentChannelOutput out;
  out.d_rate_d_latent = Eigen::MatrixXd::Ones(rows, cols);
  out.d_dist_d_latent = Eigen::MatrixXd::Ones(rows, cols);
  ChannelRecord& rec = out.record;
  if (replaying) rec = *replay;
  auto need_rng = [&] {
    if (!rng) throw SpecError("surrogate: random generator required");
  };

  const bool uses_noise = surrogate.kind == SurrogateKind::kNoise || surrogate.kind == SurrogateKind::kMixed;
  const bool uses_round = surrogate.kind == SurrogateKind::kSte || surrogate.kind == SurrogateKind::kMixed;
  if (!replaying) {
    if (uses_noise) {
      need_rng();
      rec.noise.resize(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) rec.noise(i, j) = rng->open_uniform() - 0.5;
    }
    if (uses_round) {
      rec.round_offset.resize(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) {
          const double w = latent(i, j) - prior_mean(i);
          rec.round_offset(i, j) = round_half_away(w) - w;
        }
    }
    if (surrogate.kind == SurrogateKind::kSga) {
      need_rng();
      rec.gumbel_floor.resize(rows, cols);
      rec.gumbel_ceil.resize(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) {
          rec.gumbel_floor(i, j) = rng->gumbel();
          rec.gumbel_ceil(i, j) = rng->gumbel();
        }
    }
    rec.filled = true;
  }

  switch (surrogate.kind) {
    case SurrogateKind::kNone:
      out.rate_input = latent;
      out.distortion_input = latent;
      break;
    case SurrogateKind::kNoise:
      out.rate_input = latent + rec.noise;
      out.distortion_input = out.rate_input;
      break;
    case SurrogateKind::kSte:
      out.rate_input = latent + rec.round_offset;
      out.distortion_input = out.rate_input;
      break;
    case SurrogateKind::kMixed:
      out.rate_input = latent + rec.noise;
      out.distortion_input = latent + rec.round_offset;
      break;
    case SurrogateKind::kSga: {
      out.rate_input.resize(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) {
          const SgaSample s = sga_round(latent(i, j) - prior_mean(i), surrogate.temperature,
                                        rec.gumbel_floor(i, j), rec.gumbel_ceil(i, j));
          out.rate_input(i, j) = prior_mean(i) + s.value;
          out.d_rate_d_latent(i, j) = s.derivative;
        }
      out.distortion_input = out.rate_input;
      out.d_dist_d_latent = out.d_rate_d_latent;
      break;
    }
  }

  if (prior_scale) {
    out.rate_bits.resize(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i)
        out.rate_bits(i, j) =
            -log_bin_mass(out.rate_input(i, j) - prior_mean(i), (*prior_scale)(i)).value / std::numbers::ln2;
  }
  return out;
}

namespace {

// d sigma / d log-scale for sigma = max(floor, exp(s)).
double floored_exp_derivative(double log_scale) {
  const double e = std::exp(log_scale);
  return e > kScaleFloor ? e : 0.0;
}

LossValue deterministic_loss(const CodecParams& params, const Eigen::MatrixXd& x, const LossConfig& config,
                             Rng* rng, ChannelRecord* record, CodecParams* grad) {
  const Eigen::Index batch = x.cols();
  const Eigen::Index latent_dim = params.prior_mean.size();
  const double inv_b = 1.0 / static_cast<double>(batch);
  const Eigen::VectorXd scale = params.prior_scale();
  const Eigen::VectorXd& mu = params.prior_mean;

  Transform::Trace ta, ts;
  const Eigen::MatrixXd z = params.analysis.forward(x, grad ? &ta : nullptr);

  if (config.surrogate.kind == SurrogateKind::kNone) {
    if (grad) throw SpecError("system_loss: gradient of hard rounding requested without a surrogate");
    const DiscretizedGaussianModel model(scale);
    Eigen::MatrixXd y(latent_dim, batch);
    double rate_nats = 0.0;
    for (Eigen::Index j = 0; j < batch; ++j)
      for (Eigen::Index i = 0; i < latent_dim; ++i) {
        const double k = round_half_away(z(i, j) - mu(i));
        if (k < kSymbolMin || k > kSymbolMax)
          throw DiagnosticError("system_loss: symbol overflow at latent " + std::to_string(i) + ", sample " +
                                std::to_string(j));
        y(i, j) = k + mu(i);
        rate_nats -= std::log(model.probability(static_cast<std::size_t>(i), static_cast<int>(k)));
      }
    const Eigen::MatrixXd xhat = params.synthesis.forward(y);
    const double sse = (x - xhat).squaredNorm();
    LossValue v;
    v.loss = (rate_nats + config.lambda * sse) * inv_b;
    v.rate_bits = rate_nats * inv_b / std::numbers::ln2 / static_cast<double>(x.rows());
    v.distortion = sse * inv_b / static_cast<double>(x.rows());
    return v;
  }

  const ChannelRecord* replay = record && record->filled ? record : nullptr;
  LatentChannelOutput ch = surrogate_pass(z, config.surrogate, mu, rng, replay);
  if (record && !record->filled) *record = ch.record;

  const Eigen::MatrixXd xhat = params.synthesis.forward(ch.distortion_input, grad ? &ts : nullptr);
  const Eigen::MatrixXd residual = xhat - x;
  const double sse = residual.squaredNorm();

  double rate_nats = 0.0;
  Eigen::MatrixXd d_v(latent_dim, batch);
  Eigen::VectorXd d_scale = Eigen::VectorXd::Zero(latent_dim);
  for (Eigen::Index j = 0; j < batch; ++j)
    for (Eigen::Index i = 0; i < latent_dim; ++i) {
      const LogBinMass lm = log_bin_mass(ch.rate_input(i, j) - mu(i), scale(i));
      rate_nats -= lm.value;
      d_v(i, j) = -lm.d_center * inv_b;
      d_scale(i) -= lm.d_scale * inv_b;
    }

  LossValue v;
  v.loss = (rate_nats + config.lambda * sse) * inv_b;
  v.rate_bits = rate_nats * inv_b / std::numbers::ln2 / static_cast<double>(x.rows());
  v.distortion = sse * inv_b / static_cast<double>(x.rows());
  if (!grad) return v;

  const Eigen::MatrixXd d_xhat = (2.0 * config.lambda * inv_b) * residual;
  const Eigen::MatrixXd d_yd = params.synthesis.backward(ts, d_xhat, grad->synthesis);
  const Eigen::MatrixXd d_z = ch.d_rate_d_latent.cwiseProduct(d_v) + ch.d_dist_d_latent.cwiseProduct(d_yd);
  const Eigen::MatrixXd d_mu =
      -ch.d_rate_d_latent.cwiseProduct(d_v) +
      (Eigen::MatrixXd::Ones(latent_dim, batch) - ch.d_dist_d_latent).cwiseProduct(d_yd);
  grad->prior_mean += d_mu.rowwise().sum();
  for (Eigen::Index i = 0; i < latent_dim; ++i)
    grad->prior_log_scale(i) += d_scale(i) * floored_exp_derivative(params.prior_log_scale(i));
  params.analysis.backward(ta, d_z, grad->analysis);
  return v;
}

LossValue stochastic_loss(const CodecParams& params, const Eigen::MatrixXd& x, const LossConfig& config,
                          Rng* rng, ChannelRecord* record, CodecParams* grad) {
  if (config.surrogate.kind != SurrogateKind::kNone)
    throw SpecError("system_loss: the stochastic system takes no quantization surrogate");
  if (!params.posterior_log_scale) throw SpecError("system_loss: stochastic system needs a posterior head");
  const Eigen::Index batch = x.cols();
  const Eigen::Index latent_dim = params.prior_mean.size();
  const double inv_b = 1.0 / static_cast<double>(batch);
  const Eigen::VectorXd prior_s = params.prior_scale();
  const Eigen::VectorXd& prior_m = params.prior_mean;
  const AffineLayer& head = *params.posterior_log_scale;

  Transform::Trace ta, ts;
  const Eigen::MatrixXd mean = params.analysis.forward(x, grad ? &ta : nullptr);
  Eigen::MatrixXd log_sigma = head.weight * x;
  log_sigma.colwise() += head.bias;
  const Eigen::MatrixXd sigma = log_sigma.array().exp().max(kScaleFloor).matrix();

  if (!(record && record->filled)) {
    if (!rng) throw SpecError("system_loss: random generator required");
    ChannelRecord fresh;
    fresh.noise.resize(latent_dim, batch);
    for (Eigen::Index j = 0; j < batch; ++j)
      for (Eigen::Index i = 0; i < latent_dim; ++i) fresh.noise(i, j) = rng->normal();
    fresh.filled = true;
    if (record) {
      *record = std::move(fresh);
    } else {
      ChannelRecord local = std::move(fresh);
      // Re-enter with the sampled record so the remaining code has one path.
      return stochastic_loss(params, x, config, nullptr, &local, grad);
    }
  }
  const Eigen::MatrixXd& eps = record->noise;
  if (eps.rows() != latent_dim || eps.cols() != batch) throw SpecError("system_loss: record shape mismatch");

  const Eigen::MatrixXd y = mean + sigma.cwiseProduct(eps);
  const Eigen::MatrixXd xhat = params.synthesis.forward(y, grad ? &ts : nullptr);
  const Eigen::MatrixXd residual = xhat - x;
  const double sse = residual.squaredNorm();

  double kl = 0.0;
  for (Eigen::Index j = 0; j < batch; ++j)
    for (Eigen::Index i = 0; i < latent_dim; ++i) {
      const double s = sigma(i, j), sp = prior_s(i), dm = mean(i, j) - prior_m(i);
      kl += std::log(sp / s) + (s * s + dm * dm) / (2.0 * sp * sp) - 0.5;
    }

  LossValue v;
  v.loss = (kl + config.lambda * sse) * inv_b;
  v.rate_bits = kl * inv_b / std::numbers::ln2 / static_cast<double>(x.rows());
  v.distortion = sse * inv_b / static_cast<double>(x.rows());
  if (!grad) return v;

  const Eigen::MatrixXd d_xhat = (2.0 * config.lambda * inv_b) * residual;
  const Eigen::MatrixXd d_y = params.synthesis.backward(ts, d_xhat, grad->synthesis);
  Eigen::MatrixXd d_mean = d_y;
  Eigen::MatrixXd d_log_sigma(latent_dim, batch);
  Eigen::VectorXd d_prior_scale = Eigen::VectorXd::Zero(latent_dim);
  for (Eigen::Index j = 0; j < batch; ++j)
    for (Eigen::Index i = 0; i < latent_dim; ++i) {
      const double s = sigma(i, j), sp = prior_s(i), dm = mean(i, j) - prior_m(i);
      const double sp2 = sp * sp;
      d_mean(i, j) += dm / sp2 * inv_b;
      grad->prior_mean(i) -= dm / sp2 * inv_b;
      d_prior_scale(i) += (1.0 / sp - (s * s + dm * dm) / (sp2 * sp)) * inv_b;
      const double d_sigma = (-1.0 / s + s / sp2) * inv_b + d_y(i, j) * eps(i, j);
      d_log_sigma(i, j) = d_sigma * floored_exp_derivative(log_sigma(i, j));
    }
  for (Eigen::Index i = 0; i < latent_dim; ++i)
    grad->prior_log_scale(i) += d_prior_scale(i) * floored_exp_derivative(params.prior_log_scale(i));
  grad->posterior_log_scale->weight.noalias() += d_log_sigma * x.transpose();
  grad->posterior_log_scale->bias += d_log_sigma.rowwise().sum();
  params.analysis.backward(ta, d_mean, grad->analysis);
  return v;
}

}  // namespace

LossValue system_loss(const CodecParams& params, const Eigen::MatrixXd& x, const LossConfig& config, Rng* rng,
                      ChannelRecord* record, CodecParams* grad) {
  if (x.cols() < 1) throw SpecError("system_loss: empty batch");
  if (!(config.lambda > 0.0)) throw SpecError("system_loss: lambda must be positive");
  return config.system == SystemKind::kDeterministic ? deterministic_loss(params, x, config, rng, record, grad)
                                                     : stochastic_loss(params, x, config, rng, record, grad);
}

Eigen::MatrixXi encode_batch(const CodecParams& params, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd z = params.analysis.forward(x);
  Eigen::MatrixXi symbols(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double k = round_half_away(z(i, j) - params.prior_mean(i));
      if (!(k >= kSymbolMin && k <= kSymbolMax))
        throw DiagnosticError("encode: symbol overflow at latent " + std::to_string(i) + ", sample " +
                              std::to_string(j));
      symbols(i, j) = static_cast<int>(k);
    }
  return symbols;
}

Eigen::MatrixXd decode_batch(const CodecParams& params, const Eigen::MatrixXi& symbols) {
  Eigen::MatrixXd y = symbols.cast<double>();
  y.colwise() += params.prior_mean;
  return params.synthesis.forward(y);
}

}  // namespace rdgap
