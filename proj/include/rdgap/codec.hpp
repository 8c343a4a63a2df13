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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdgap/rng.hpp"

namespace rdgap {

// Lower bound applied to every posterior and prior Gaussian scale.
inline constexpr double kScaleFloor = 0.11;
// Zero-centred symbols are coded over [kSymbolMin, kSymbolMax]; the Gaussian
// tail mass beyond either end is folded into the end bins.
inline constexpr int kSymbolMin = -64;
inline constexpr int kSymbolMax = 63;
inline constexpr int kSymbolCount = kSymbolMax - kSymbolMin + 1;

// softplus(x) - log 2, so the activation maps 0 to 0.
double shifted_softplus(double x) noexcept;
double sigmoid(double x) noexcept;

struct AffineLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Stack of affine layers with a shifted softplus between consecutive layers
// (none after the last). Batches are column-major: one sample per column.
class Transform {
 public:
  struct Trace {
    std::vector<Eigen::MatrixXd> inputs;           // input of every layer
    std::vector<Eigen::MatrixXd> pre_activations;  // output of every hidden affine map
  };

  std::vector<AffineLayer> layers;

  Eigen::Index input_dim() const { return layers.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers.back().weight.rows(); }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Trace* trace = nullptr) const;
  // Returns d loss / d input; parameter gradients are added into `grad`.
  Eigen::MatrixXd backward(const Trace& trace, const Eigen::MatrixXd& grad_out, Transform& grad) const;
};

enum class SystemKind { kDeterministic, kStochasticGaussian };
std::string to_string(SystemKind kind);
SystemKind system_kind_from_string(const std::string& name);

struct Architecture {
  std::size_t source_dim = 16;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden;  // analysis widths; synthesis mirrors them
  SystemKind system = SystemKind::kDeterministic;
};

// phi = analysis, theta = synthesis, psi = (prior_mean, prior_log_scale).
// The stochastic system adds an affine posterior head: log sigma(x) = W x + b.
struct CodecParams {
  Transform analysis;
  Transform synthesis;
  Eigen::VectorXd prior_mean;
  Eigen::VectorXd prior_log_scale;
  std::optional<AffineLayer> posterior_log_scale;

  std::size_t source_dim() const { return static_cast<std::size_t>(analysis.input_dim()); }
  std::size_t latent_dim() const { return static_cast<std::size_t>(prior_mean.size()); }
  // max(kScaleFloor, exp(prior_log_scale))
  Eigen::VectorXd prior_scale() const;

  void validate() const;
  CodecParams zeros_like() const;
  // All parameter tensors in a fixed order (analysis, synthesis, prior mean,
  // prior log-scale, posterior head).
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
};

// Glorot-uniform weights, zero biases, unit prior scale, posterior scale 0.5.
CodecParams init_params(const Architecture& arch, Rng& rng);

// Forward transforms on single vectors.
Eigen::VectorXd analyze(const CodecParams& params, const Eigen::VectorXd& x);
Eigen::VectorXd synthesize(const CodecParams& params, const Eigen::VectorXd& y);
Eigen::VectorXd posterior_scale(const CodecParams& params, const Eigen::VectorXd& x);

// Round half away from zero.
inline double round_half_away(double v) noexcept { return std::round(v); }

// Zero-centred rounding: symbols k_i = round(latent_i - mean_i).
std::vector<int> quantize_symbols(std::span<const double> latent, std::span<const double> means);
// y_i = k_i + mean_i.
Eigen::VectorXd quantize(const Eigen::VectorXd& latent, const Eigen::VectorXd& means);
Eigen::VectorXd dequantize(std::span<const int> symbols, const Eigen::VectorXd& means);

// P(k) = Phi((k + offset + 1/2) / scale) - Phi((k + offset - 1/2) / scale)
// with the tails folded into k = kSymbolMin and k = kSymbolMax. `offset` is
// the dither shift (0 for plain quantisation). Throws DiagnosticError for an
// out-of-range symbol and SpecError for scale < kScaleFloor.
double discretized_gaussian_likelihood(int symbol, double scale, double offset = 0.0);
// All kSymbolCount probabilities, index 0 <-> kSymbolMin.
std::vector<double> discretized_gaussian_pmf(double scale, double offset = 0.0);

// Per-latent-dimension discretized Gaussian model; position i uses dimension
// i mod latent_dim. Satisfies SymbolModel.
class DiscretizedGaussianModel {
 public:
  explicit DiscretizedGaussianModel(Eigen::VectorXd scales);
  explicit DiscretizedGaussianModel(const CodecParams& params) : DiscretizedGaussianModel(params.prior_scale()) {}
  double probability(std::size_t position, int symbol) const;
  std::size_t dimension() const { return static_cast<std::size_t>(scales_.size()); }

 private:
  Eigen::VectorXd scales_;
  std::vector<std::vector<double>> pmf_;
};

enum class SurrogateKind { kNoise, kSte, kMixed, kSga, kNone };
std::string to_string(SurrogateKind kind);
SurrogateKind surrogate_kind_from_string(const std::string& name);

struct Surrogate {
  SurrogateKind kind = SurrogateKind::kMixed;
  double temperature = 0.5;  // SGA only
};

// Two-point stochastic Gumbel annealing on a centred value w. The rounding
// direction is drawn from a Gumbel-softmax over {floor(w), floor(w) + 1} with
// logits -atanh(distance) / temperature; the returned value is the soft
// sample and `derivative` is d value / d w through the soft probabilities.
struct SgaSample {
  double value;
  double derivative;
  double ceil_weight;
};
SgaSample sga_round(double w, double temperature, double gumbel_floor, double gumbel_ceil) noexcept;

// Random draws and rounding offsets of one surrogate pass, in the shape of
// the latent batch. Replaying a record freezes the surrogate: STE rounding
// becomes the fixed shift z + (round(z0) - z0) of the recorded point z0.
struct ChannelRecord {
  Eigen::MatrixXd noise;          // uniform dither u, or Gaussian epsilon
  Eigen::MatrixXd round_offset;   // round(z - mu) - (z - mu)
  Eigen::MatrixXd gumbel_floor;
  Eigen::MatrixXd gumbel_ceil;
  bool filled = false;
};

struct LatentChannelOutput {
  Eigen::MatrixXd rate_input;         // y_r
  Eigen::MatrixXd distortion_input;   // y_d
  Eigen::MatrixXd rate_bits;          // per latent element, filled when a prior scale is given
  Eigen::MatrixXd d_rate_d_latent;    // d (y_r - mu) / d latent
  Eigen::MatrixXd d_dist_d_latent;    // d y_d / d latent
  ChannelRecord record;
};

// Applies the surrogate to a latent batch (L x B). With a filled `replay`
// record the random draws and offsets are reused instead of sampled.
LatentChannelOutput surrogate_pass(const Eigen::MatrixXd& latent, const Surrogate& surrogate,
                                   const Eigen::VectorXd& prior_mean, Rng* rng,
                                   const ChannelRecord* replay = nullptr,
                                   const Eigen::VectorXd* prior_scale = nullptr);

struct LossConfig {
  SystemKind system = SystemKind::kDeterministic;
  Surrogate surrogate;
  double lambda = 1.0;  // nats per unit squared error
};

struct LossValue {
  double loss = 0.0;        // batch mean of rate_nats + lambda * SSE
  double rate_bits = 0.0;   // per source dimension
  double distortion = 0.0;  // per-dimension MSE
};

// Monte Carlo Lagrangian on a batch x (n x B).
//   deterministic: - log Q(y_r) with Q the unit-bin Gaussian mass, plus
//                  lambda * ||x - g_s(y_d)||^2 under the chosen surrogate;
//                  SurrogateKind::kNone evaluates the hard-rounded objective
//                  with the folded discrete likelihood.
//   stochastic:    KL(N(mu(x), sigma(x)) || N(mu_hat, sigma_hat)) plus
//                  lambda * ||x - g_s(mu + sigma * eps)||^2.
// When `grad` is given, the exact gradient of the batch mean (under the
// surrogate's gradient rules) is added into it. Requesting a gradient of the
// hard-rounded objective throws SpecError.
LossValue system_loss(const CodecParams& params, const Eigen::MatrixXd& x, const LossConfig& config,
                      Rng* rng, ChannelRecord* record = nullptr, CodecParams* grad = nullptr);

// Hard path used for evaluation: symbols of each column and reconstructions.
Eigen::MatrixXi encode_batch(const CodecParams& params, const Eigen::MatrixXd& x);
Eigen::MatrixXd decode_batch(const CodecParams& params, const Eigen::MatrixXi& symbols);

}  // namespace rdgap
