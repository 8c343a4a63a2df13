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

#include "rdgap/rd_reference.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#if defined(__SSE2__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

#include "rdgap/error.hpp"
#include "rdgap/normal.hpp"

namespace rdgap {
namespace {

constexpr double kProbFloor = 1e-300;

// Far-tail kernel entries and marginal masses underflow into subnormals,
// which are orders of magnitude slower to multiply. Flush them to zero for
// the duration of an iteration loop.
class FlushDenormals {
 public:
#if defined(__SSE2__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

double marginal_cdf(const SourceSpec& spec, double x) {
  switch (spec.kind) {
    case SourceKind::kScalarGaussian: return normal_cdf(x / std::sqrt(spec.variance));
    case SourceKind::kLaplacian:
      return x < 0.0 ? 0.5 * std::exp(x / spec.scale) : 1.0 - 0.5 * std::exp(-x / spec.scale);
    case SourceKind::kGaussianMixture: {
      double c = 0.0;
      for (const auto& comp : spec.components)
        c += comp.weight * normal_cdf((x - comp.mean) / std::sqrt(comp.variance));
      return c;
    }
    default: throw SpecError("discretize: source must be an i.i.d. continuous source");
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace

std::string to_string(CurveLabel label) {
  switch (label) {
    case CurveLabel::kTrueRd: return "true-rd";
    case CurveLabel::kBa: return "ba";
    case CurveLabel::kEstimatedBound: return "estimated-bound";
    case CurveLabel::kEstimatedBoundPerSample: return "estimated-bound-persample";
    case CurveLabel::kEmpiricalIdeal: return "empirical-ideal";
    case CurveLabel::kEmpiricalPerSample: return "empirical-persample";
    case CurveLabel::kEmpiricalBitstream: return "empirical-bitstream";
  }
  return "unknown";
}

CurveLabel curve_label_from_string(const std::string& name) {
  for (CurveLabel l : {CurveLabel::kTrueRd, CurveLabel::kBa, CurveLabel::kEstimatedBound,
                       CurveLabel::kEstimatedBoundPerSample, CurveLabel::kEmpiricalIdeal,
                       CurveLabel::kEmpiricalPerSample, CurveLabel::kEmpiricalBitstream}) {
    if (to_string(l) == name) return l;
  }
  throw SpecError("unknown curve label '" + name + "'");
}

void RdCurve::sort_by_distortion() {
  std::stable_sort(points.begin(), points.end(), [](const RdPoint& a, const RdPoint& b) {
    return a.distortion < b.distortion || (a.distortion == b.distortion && a.rate_bits < b.rate_bits);
  });
}

void write_curves_csv(std::ostream& out, std::span<const RdCurve> curves) {
  const bool with_series =
      std::any_of(curves.begin(), curves.end(), [](const RdCurve& c) { return !c.series.empty(); });
  out << (with_series ? "series," : "") << "label,lambda,distortion,rate_bits\n";
  char buf[128];
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      if (with_series) out << c.series << ',';
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", p.lambda, p.distortion, p.rate_bits);
      out << to_string(c.label) << ',' << buf << '\n';
    }
  }
}

std::vector<RdCurve> read_curves_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SpecError("curve CSV: empty input");
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"label", "lambda", "distortion", "rate_bits"})
    if (!col.count(required)) throw SpecError(std::string("curve CSV: missing column ") + required);
  const bool with_series = col.count("series") > 0;

  std::vector<RdCurve> curves;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() < header.size())
      throw SpecError("curve CSV: short row at line " + std::to_string(line_no));
    RdPoint p;
    try {
      p.label = curve_label_from_string(cells[col["label"]]);
      p.lambda = std::stod(cells[col["lambda"]]);
      p.distortion = std::stod(cells[col["distortion"]]);
      p.rate_bits = std::stod(cells[col["rate_bits"]]);
    } catch (const std::logic_error&) {
      throw SpecError("curve CSV: bad value at line " + std::to_string(line_no));
    }
    const std::string series = with_series ? cells[col["series"]] : std::string();
    auto it = std::find_if(curves.begin(), curves.end(), [&](const RdCurve& c) {
      return c.label == p.label && c.series == series;
    });
    if (it == curves.end()) {
      curves.push_back(RdCurve{p.label, series, {}});
      it = curves.end() - 1;
    }
    it->points.push_back(p);
  }
  return curves;
}

void DiscreteRdProblem::validate() const {
  if (pmf.empty()) throw SpecError("rd problem: empty pmf");
  double total = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw SpecError("rd problem: pmf entries must be nonnegative");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-12) throw SpecError("rd problem: pmf must sum to 1");
  if (distortion.rows() != static_cast<Eigen::Index>(pmf.size()) || distortion.cols() < 1)
    throw SpecError("rd problem: distortion matrix shape does not match pmf");
  if (!distortion.allFinite() || distortion.minCoeff() < 0.0)
    throw SpecError("rd problem: distortion matrix must be finite and nonnegative");
}

DiscreteRdProblem hamming_problem(std::vector<double> pmf) {
  DiscreteRdProblem p;
  const auto m = static_cast<Eigen::Index>(pmf.size());
  p.pmf = std::move(pmf);
  p.distortion = Eigen::MatrixXd::Ones(m, m) - Eigen::MatrixXd::Identity(m, m);
  p.validate();
  return p;
}

DiscreteRdProblem squared_error_problem(std::vector<double> pmf, std::span<const double> letters,
                                        std::span<const double> reconstructions) {
  if (letters.size() != pmf.size()) throw SpecError("rd problem: letters must match pmf length");
  DiscreteRdProblem p;
  p.pmf = std::move(pmf);
  p.distortion.resize(static_cast<Eigen::Index>(letters.size()),
                      static_cast<Eigen::Index>(reconstructions.size()));
  for (std::size_t j = 0; j < letters.size(); ++j)
    for (std::size_t k = 0; k < reconstructions.size(); ++k) {
      const double e = letters[j] - reconstructions[k];
      p.distortion(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = e * e;
    }
  p.validate();
  return p;
}

BlahutArimotoResult blahut_arimoto(const DiscreteRdProblem& problem, double slope,
                                   const BlahutArimotoOptions& options) {
  problem.validate();
  if (!(slope > 0.0)) throw SpecError("blahut_arimoto: slope must be positive");
  if (!(options.tol_bits > 0.0) || options.max_iter < 1)
    throw SpecError("blahut_arimoto: tol and max_iter must be positive");

  const FlushDenormals flush;
  const Eigen::Index m = problem.distortion.rows();
  const Eigen::Index k = problem.distortion.cols();
  const Eigen::Map<const Eigen::VectorXd> p(problem.pmf.data(), m);
  const Eigen::MatrixXd a = (-slope * problem.distortion).array().exp().matrix();

  Eigen::VectorXd q = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  Eigen::VectorXd z(m), c(k);
  BlahutArimotoResult result;
  double previous = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= options.max_iter; ++it) {
    z.noalias() = a * q;
    z = z.cwiseMax(kProbFloor);
    // min over the test channel of I + slope * D for the current marginal
    const double lagrangian = -(p.array() * z.array().log()).sum();
    if (lagrangian > previous + 1e-12 * (1.0 + std::fabs(previous)))
      throw DiagnosticError("blahut_arimoto: Lagrangian increased at iteration " + std::to_string(it));
    previous = lagrangian;

    c.noalias() = a.transpose() * (p.array() / z.array()).matrix();
    const Eigen::ArrayXd log_c = c.array().max(kProbFloor).log();
    const double gap = (log_c.maxCoeff() - (q.array() * c.array() * log_c).sum()) / std::numbers::ln2;

    q = (q.array() * c.array()).matrix();
    q /= q.sum();
    result.iterations = it;
    result.gap_bits = gap;
    result.lagrangian_nats = lagrangian;
    if (gap < options.tol_bits) {
      result.converged = true;
      break;
    }
  }

  // Test channel Q(xhat | x) induced by the final marginal.
  z.noalias() = a * q;
  z = z.cwiseMax(kProbFloor);
  Eigen::VectorXd marginal = Eigen::VectorXd::Zero(k);
  double distortion = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (p(j) == 0.0) continue;
    for (Eigen::Index x = 0; x < k; ++x) {
      const double cond = q(x) * a(j, x) / z(j);
      marginal(x) += p(j) * cond;
      distortion += p(j) * cond * problem.distortion(j, x);
    }
  }
  double rate = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (p(j) == 0.0) continue;
    for (Eigen::Index x = 0; x < k; ++x) {
      const double cond = q(x) * a(j, x) / z(j);
      if (cond > kProbFloor && marginal(x) > kProbFloor)
        rate += p(j) * cond * std::log(cond / marginal(x));
    }
  }
  result.point.rate_bits = std::max(0.0, rate / std::numbers::ln2);
  result.point.distortion = distortion;
  result.point.lambda = slope;
  result.point.label = CurveLabel::kBa;
  result.reconstruction_marginal.assign(marginal.data(), marginal.data() + k);
  return result;
}

DiscreteRdProblem discretize(const SourceSpec& spec, std::size_t grid_points, double half_width_sigmas) {
  spec.validate();
  if (grid_points < 8) throw SpecError("discretize: grid_points must be at least 8");
  if (!(half_width_sigmas > 0.0)) throw SpecError("discretize: half width must be positive");
  if (spec.kind == SourceKind::kGaussMarkov || spec.kind == SourceKind::kDiscretePmf)
    throw SpecError("discretize: source must be an i.i.d. continuous source");

  const double sigma = std::sqrt(spec.marginal_variance());
  const double mean = spec.marginal_mean();
  Grid grid;
  grid.count = grid_points;
  grid.lo = mean - half_width_sigmas * sigma;
  grid.step = 2.0 * half_width_sigmas * sigma / static_cast<double>(grid_points);

  std::vector<double> pmf(grid_points);
  std::vector<double> centers(grid_points);
  double total = 0.0;
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double left = grid.lo + static_cast<double>(i) * grid.step;
    pmf[i] = marginal_cdf(spec, left + grid.step) - marginal_cdf(spec, left);
    centers[i] = grid.center(i);
    total += pmf[i];
  }
  for (double& v : pmf) v /= total;
  // Renormalisation leaves a rounding residue; fold it into the largest cell.
  double resum = 0.0;
  for (double v : pmf) resum += v;
  *std::max_element(pmf.begin(), pmf.end()) += 1.0 - resum;

  DiscreteRdProblem problem = squared_error_problem(std::move(pmf), centers, centers);
  problem.grid = grid;
  return problem;
}

RdCurve sweep_curve(const DiscreteRdProblem& problem, std::span<const double> slopes,
                    const BlahutArimotoOptions& options) {
  if (slopes.empty()) throw SpecError("sweep_curve: no slopes");
  for (std::size_t i = 0; i < slopes.size(); ++i) {
    if (!(slopes[i] > 0.0)) throw SpecError("sweep_curve: slopes must be positive");
    if (i > 0 && slopes[i] < slopes[i - 1]) throw SpecError("sweep_curve: slopes must be sorted");
  }
  RdCurve curve;
  curve.label = CurveLabel::kBa;
  for (double s : slopes) {
    const BlahutArimotoResult r = blahut_arimoto(problem, s, options);
    if (!r.converged) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "sweep_curve: BA did not converge at slope %.6g (gap %.3e bits after %d iterations)",
                    s, r.gap_bits, r.iterations);
      throw DiagnosticError(buf);
    }
    curve.points.push_back(r.point);
  }
  curve.sort_by_distortion();
  return curve;
}

RdCurve lower_convex_hull(std::span<const RdPoint> points) {
  if (points.empty()) throw SpecError("lower_convex_hull: no points");
  std::vector<RdPoint> sorted(points.begin(), points.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const RdPoint& a, const RdPoint& b) {
    return a.distortion < b.distortion || (a.distortion == b.distortion && a.rate_bits < b.rate_bits);
  });
  // One point per distortion value: the cheapest.
  std::vector<RdPoint> unique;
  for (const auto& p : sorted)
    if (unique.empty() || p.distortion != unique.back().distortion) unique.push_back(p);

  auto cross = [](const RdPoint& o, const RdPoint& a, const RdPoint& b) {
    return (a.distortion - o.distortion) * (b.rate_bits - o.rate_bits) -
           (a.rate_bits - o.rate_bits) * (b.distortion - o.distortion);
  };
  std::vector<RdPoint> hull;
  for (const auto& p : unique) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), p) <= 0.0) hull.pop_back();
    hull.push_back(p);
  }
  // Keep the non-increasing branch up to the first minimum-rate vertex.
  std::size_t best = 0;
  for (std::size_t i = 1; i < hull.size(); ++i)
    if (hull[i].rate_bits < hull[best].rate_bits) best = i;
  hull.resize(best + 1);

  RdCurve curve;
  curve.label = points.front().label;
  curve.points = std::move(hull);
  return curve;
}

}  // namespace rdgap
