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

#include "rdgap/source_models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "rdgap/error.hpp"
#include "rdgap/hash.hpp"
#include "rdgap/rng.hpp"

namespace rdgap {
namespace {

constexpr double kSumTolerance = 1e-12;

void require(bool ok, const std::string& message) {
  if (!ok) throw SpecError("source: " + message);
}

// Index of the first cumulative bin exceeding u.
std::size_t pick(const std::vector<double>& cumulative, double u) {
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                               cumulative.size() - 1);
}

std::vector<double> cumulate(const std::vector<double>& weights) {
  std::vector<double> c(weights.size());
  std::partial_sum(weights.begin(), weights.end(), c.begin());
  return c;
}

double laplace_from_uniform(double u, double scale) {
  // u in (0, 1)
  return u < 0.5 ? scale * std::log(2.0 * u) : -scale * std::log(2.0 * (1.0 - u));
}

}  // namespace

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::kScalarGaussian: return "scalar-gaussian";
    case SourceKind::kLaplacian: return "laplacian";
    case SourceKind::kGaussMarkov: return "gauss-markov";
    case SourceKind::kGaussianMixture: return "gaussian-mixture";
    case SourceKind::kDiscretePmf: return "discrete-pmf";
  }
  return "unknown";
}

SourceKind source_kind_from_string(const std::string& name) {
  for (SourceKind k : {SourceKind::kScalarGaussian, SourceKind::kLaplacian,
                       SourceKind::kGaussMarkov, SourceKind::kGaussianMixture,
                       SourceKind::kDiscretePmf}) {
    if (to_string(k) == name) return k;
  }
  throw SpecError("source: unknown kind '" + name + "'");
}

SourceSpec SourceSpec::gaussian(std::size_t n, double variance) {
  SourceSpec s;
  s.kind = SourceKind::kScalarGaussian;
  s.dimension = n;
  s.variance = variance;
  s.validate();
  return s;
}

SourceSpec SourceSpec::laplacian(std::size_t n, double scale) {
  SourceSpec s;
  s.kind = SourceKind::kLaplacian;
  s.dimension = n;
  s.scale = scale;
  s.validate();
  return s;
}

SourceSpec SourceSpec::gauss_markov(std::size_t n, double correlation, double variance) {
  SourceSpec s;
  s.kind = SourceKind::kGaussMarkov;
  s.dimension = n;
  s.correlation = correlation;
  s.variance = variance;
  s.validate();
  return s;
}

SourceSpec SourceSpec::mixture(std::size_t n, std::vector<MixtureComponent> components) {
  SourceSpec s;
  s.kind = SourceKind::kGaussianMixture;
  s.dimension = n;
  s.components = std::move(components);
  s.validate();
  return s;
}

SourceSpec SourceSpec::discrete(std::size_t n, std::vector<double> pmf) {
  SourceSpec s;
  s.kind = SourceKind::kDiscretePmf;
  s.dimension = n;
  s.pmf = std::move(pmf);
  s.validate();
  return s;
}

void SourceSpec::validate() const {
  require(dimension >= 1, "dimension must be positive");
  switch (kind) {
    case SourceKind::kScalarGaussian:
      require(std::isfinite(variance) && variance > 0.0, "variance must be positive");
      break;
    case SourceKind::kLaplacian:
      require(std::isfinite(scale) && scale > 0.0, "laplacian scale must be positive");
      break;
    case SourceKind::kGaussMarkov:
      require(std::isfinite(variance) && variance > 0.0, "variance must be positive");
      require(correlation >= 0.0 && correlation < 1.0, "rho must lie in [0, 1)");
      break;
    case SourceKind::kGaussianMixture: {
      require(!components.empty(), "mixture needs at least one component");
      double total = 0.0;
      for (const auto& c : components) {
        require(c.weight >= 0.0 && std::isfinite(c.weight), "mixture weight must be nonnegative");
        require(std::isfinite(c.mean), "mixture mean must be finite");
        require(std::isfinite(c.variance) && c.variance > 0.0, "mixture variance must be positive");
        total += c.weight;
      }
      require(std::fabs(total - 1.0) <= kSumTolerance, "mixture weights must sum to 1");
      break;
    }
    case SourceKind::kDiscretePmf: {
      require(!pmf.empty(), "pmf must be nonempty");
      double total = 0.0;
      for (double p : pmf) {
        require(p >= 0.0 && std::isfinite(p), "pmf entries must be nonnegative");
        total += p;
      }
      require(std::fabs(total - 1.0) <= kSumTolerance, "pmf must sum to 1");
      break;
    }
  }
}

double SourceSpec::marginal_mean() const {
  switch (kind) {
    case SourceKind::kGaussianMixture: {
      double m = 0.0;
      for (const auto& c : components) m += c.weight * c.mean;
      return m;
    }
    case SourceKind::kDiscretePmf: {
      double m = 0.0;
      for (std::size_t i = 0; i < pmf.size(); ++i) m += pmf[i] * static_cast<double>(i);
      return m;
    }
    default: return 0.0;
  }
}

double SourceSpec::marginal_variance() const {
  switch (kind) {
    case SourceKind::kScalarGaussian:
    case SourceKind::kGaussMarkov: return variance;
    case SourceKind::kLaplacian: return 2.0 * scale * scale;
    case SourceKind::kGaussianMixture: {
      const double m = marginal_mean();
      double second = 0.0;
      for (const auto& c : components) second += c.weight * (c.variance + c.mean * c.mean);
      return second - m * m;
    }
    case SourceKind::kDiscretePmf: {
      const double m = marginal_mean();
      double v = 0.0;
      for (std::size_t i = 0; i < pmf.size(); ++i) {
        const double d = static_cast<double>(i) - m;
        v += pmf[i] * d * d;
      }
      return v;
    }
  }
  return 0.0;
}

nlohmann::json to_json(const SourceSpec& spec) {
  nlohmann::json params = nlohmann::json::object();
  switch (spec.kind) {
    case SourceKind::kScalarGaussian: params["variance"] = spec.variance; break;
    case SourceKind::kLaplacian: params["scale"] = spec.scale; break;
    case SourceKind::kGaussMarkov:
      params["variance"] = spec.variance;
      params["rho"] = spec.correlation;
      break;
    case SourceKind::kGaussianMixture: {
      std::vector<double> w, m, v;
      for (const auto& c : spec.components) {
        w.push_back(c.weight);
        m.push_back(c.mean);
        v.push_back(c.variance);
      }
      params["weights"] = w;
      params["means"] = m;
      params["variances"] = v;
      break;
    }
    case SourceKind::kDiscretePmf: params["pmf"] = spec.pmf; break;
  }
  return {{"kind", to_string(spec.kind)}, {"n", spec.dimension}, {"params", params}};
}

SourceSpec source_from_json(const nlohmann::json& j) {
  try {
    SourceSpec s;
    s.kind = source_kind_from_string(j.at("kind").get<std::string>());
    const auto n = j.at("n").get<long long>();
    require(n >= 1, "n must be positive");
    s.dimension = static_cast<std::size_t>(n);
    const nlohmann::json params = j.value("params", nlohmann::json::object());
    switch (s.kind) {
      case SourceKind::kScalarGaussian: s.variance = params.value("variance", 1.0); break;
      case SourceKind::kLaplacian: s.scale = params.value("scale", 1.0); break;
      case SourceKind::kGaussMarkov:
        s.variance = params.value("variance", 1.0);
        s.correlation = params.at("rho").get<double>();
        break;
      case SourceKind::kGaussianMixture: {
        const auto w = params.at("weights").get<std::vector<double>>();
        const auto m = params.at("means").get<std::vector<double>>();
        const auto v = params.at("variances").get<std::vector<double>>();
        require(w.size() == m.size() && m.size() == v.size(),
                "mixture weights/means/variances must have equal length");
        for (std::size_t i = 0; i < w.size(); ++i) s.components.push_back({w[i], m[i], v[i]});
        break;
      }
      case SourceKind::kDiscretePmf: s.pmf = params.at("pmf").get<std::vector<double>>(); break;
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("source: malformed JSON: ") + e.what());
  }
}

std::string source_id(const SourceSpec& spec) {
  const std::uint64_t h = Fnv1a().text(to_json(spec).dump()).digest();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return to_string(spec.kind) + "-" + buf;
}

SampleBatch sample(const SourceSpec& spec, std::size_t count, std::uint64_t seed) {
  spec.validate();
  if (count < 1) throw SpecError("sample: count must be at least 1");
  const std::size_t n = spec.dimension;
  SampleBatch batch;
  batch.data.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(n));
  batch.source_id = source_id(spec);
  batch.seed = seed;

  std::vector<double> cumulative;
  if (spec.kind == SourceKind::kGaussianMixture) {
    std::vector<double> w;
    for (const auto& c : spec.components) w.push_back(c.weight);
    cumulative = cumulate(w);
  } else if (spec.kind == SourceKind::kDiscretePmf) {
    cumulative = cumulate(spec.pmf);
  }
  const double sd = std::sqrt(spec.variance);
  const double innovation = sd * std::sqrt(1.0 - spec.correlation * spec.correlation);

  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_key(seed, i));
    auto row = batch.data.row(static_cast<Eigen::Index>(i));
    for (std::size_t d = 0; d < n; ++d) {
      const auto k = static_cast<Eigen::Index>(d);
      switch (spec.kind) {
        case SourceKind::kScalarGaussian: row(k) = sd * rng.normal(); break;
        case SourceKind::kLaplacian: row(k) = laplace_from_uniform(rng.open_uniform(), spec.scale); break;
        case SourceKind::kGaussMarkov:
          row(k) = d == 0 ? sd * rng.normal() : spec.correlation * row(k - 1) + innovation * rng.normal();
          break;
        case SourceKind::kGaussianMixture: {
          const auto& c = spec.components[pick(cumulative, rng.uniform())];
          row(k) = c.mean + std::sqrt(c.variance) * rng.normal();
          break;
        }
        case SourceKind::kDiscretePmf: {
          // Skip zero-probability letters that a boundary draw could land on.
          std::size_t letter = pick(cumulative, rng.uniform());
          while (spec.pmf[letter] == 0.0 && letter > 0) --letter;
          row(k) = static_cast<double>(letter);
          break;
        }
      }
    }
  }
  return batch;
}

Eigen::VectorXd gauss_markov_eigenvalues(const SourceSpec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.dimension);
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      cov(i, j) = spec.variance * std::pow(spec.correlation, static_cast<double>(std::abs(i - j)));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().cwiseMax(0.0);
}

WaterFilling reverse_water_fill(const Eigen::VectorXd& variances, double distortion) {
  if (!(distortion > 0.0)) throw SpecError("water-filling: distortion must be positive");
  const double n = static_cast<double>(variances.size());
  auto mean_distortion = [&](double level) { return variances.cwiseMin(level).sum() / n; };

  WaterFilling out;
  const double top = variances.maxCoeff();
  if (distortion >= mean_distortion(top)) {
    out.level = top;
  } else {
    double lo = 0.0, hi = top;
    while (hi - lo > 1e-12) {
      const double mid = 0.5 * (lo + hi);
      (mean_distortion(mid) < distortion ? lo : hi) = mid;
    }
    out.level = 0.5 * (lo + hi);
  }
  out.component_distortion = variances.cwiseMin(out.level);
  out.distortion = out.component_distortion.sum() / n;
  double rate = 0.0;
  for (Eigen::Index i = 0; i < variances.size(); ++i)
    if (variances(i) > out.level) rate += 0.5 * std::log2(variances(i) / out.level);
  out.rate_bits = rate / n;
  return out;
}

double binary_entropy_bits(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

std::optional<AnalyticRd> analytic_rd(const SourceSpec& spec, double distortion) {
  if (!(distortion > 0.0)) throw SpecError("analytic_rd: distortion must be positive");
  spec.validate();
  switch (spec.kind) {
    case SourceKind::kScalarGaussian: {
      AnalyticRd r;
      r.distortion = std::min(distortion, spec.variance);
      r.water_level = r.distortion;
      r.rate_bits = std::max(0.0, 0.5 * std::log2(spec.variance / distortion));
      return r;
    }
    case SourceKind::kGaussMarkov: {
      const WaterFilling wf = reverse_water_fill(gauss_markov_eigenvalues(spec), distortion);
      return AnalyticRd{wf.rate_bits, wf.distortion, wf.level};
    }
    case SourceKind::kDiscretePmf: {
      if (spec.pmf.size() != 2) return std::nullopt;
      // Hamming distortion.
      const double p = spec.pmf[1];
      const double dmax = std::min(p, 1.0 - p);
      AnalyticRd r;
      r.distortion = std::min(distortion, dmax);
      r.rate_bits = distortion >= dmax ? 0.0 : binary_entropy_bits(p) - binary_entropy_bits(distortion);
      return r;
    }
    default: return std::nullopt;
  }
}

}  // namespace rdgap
