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

#include "rdgap/gap_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

#include "rdgap/entropy_coding.hpp"
#include "rdgap/error.hpp"
#include "rdgap/metrics.hpp"
#include "rdgap/normal.hpp"
#include "rdgap/parallel.hpp"

namespace rdgap {

void ExperimentConfig::validate() const {
  source.validate();
  if (source.kind == SourceKind::kDiscretePmf) throw SpecError("experiment: discrete sources cannot drive the codec");
  if (lambdas.size() < 4) throw SpecError("experiment: the lambda grid needs at least four values");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0.0) || !std::isfinite(lambdas[i])) throw SpecError("experiment: lambda values must be positive");
    if (i > 0 && !(lambdas[i] > lambdas[i - 1])) throw SpecError("experiment: the lambda grid must be sorted");
  }
  if (sizes.empty()) throw SpecError("experiment: need at least one model size");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i].name.empty() || sizes[i].latent_dim == 0)
      throw SpecError("experiment: every model size needs a name and a positive latent dim");
    for (std::size_t j = 0; j < i; ++j)
      if (sizes[j].name == sizes[i].name) throw SpecError("experiment: duplicate model size '" + sizes[i].name + "'");
  }
  if (seeds.empty()) throw SpecError("experiment: need at least one seed");
  if (surrogate.kind == SurrogateKind::kNone) throw SpecError("experiment: deterministic runs need a surrogate");
  if (surrogate.kind == SurrogateKind::kSga && !(surrogate.temperature > 0.0))
    throw SpecError("experiment: SGA temperature must be positive");
  if (test_samples == 0 || batch_size == 0) throw SpecError("experiment: sample counts must be positive");
  if (ba_slopes < 2 || ba_grid_points < 8 || !(ba_half_width > 0.0) || ba_max_iter < 1) throw SpecError("experiment: BA grid too small");
  if (threads == 0) throw SpecError("experiment: threads must be positive");
  per_sample.validate();
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& s : c.sizes) sizes.push_back({{"name", s.name}, {"hidden", s.hidden}, {"latent_dim", s.latent_dim}});
  nlohmann::json j = {
      {"source", to_json(c.source)},
      {"lambdas", c.lambdas},
      {"sizes", sizes},
      {"surrogate", to_string(c.surrogate.kind)},
      {"seeds", c.seeds},
      {"train_steps", c.train_steps},
      {"batch_size", c.batch_size},
      {"lr", {{"initial", c.schedule.initial}, {"milestones", c.schedule.milestones}, {"factors", c.schedule.factors}}},
      {"test_samples", c.test_samples},
      {"samples_per_stream", c.samples_per_stream},
      {"per_sample", to_json(c.per_sample)},
      {"ba", {{"grid_points", c.ba_grid_points}, {"half_width_sigmas", c.ba_half_width}, {"slopes", c.ba_slopes}, {"max_iter", c.ba_max_iter}}},
  };
  if (c.surrogate.kind == SurrogateKind::kSga) j["temperature"] = c.surrogate.temperature;
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SpecError("experiment config: expected a JSON object");
  try {
    ExperimentConfig c;
    if (j.contains("source")) c.source = source_from_json(j.at("source"));
    c.lambdas = j.value("lambdas", c.lambdas);
    if (j.contains("sizes")) {
      c.sizes.clear();
      for (const auto& s : j.at("sizes"))
        c.sizes.push_back({s.at("name").get<std::string>(), s.value("hidden", std::vector<std::size_t>{}),
                           s.value("latent_dim", std::size_t{16})});
    }
    if (j.contains("surrogate")) c.surrogate.kind = surrogate_kind_from_string(j.at("surrogate").get<std::string>());
    c.surrogate.temperature = j.value("temperature", c.surrogate.temperature);
    c.seeds = j.value("seeds", c.seeds);
    c.train_steps = j.value("train_steps", c.train_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("lr")) {
      const auto& lr = j.at("lr");
      c.schedule.initial = lr.value("initial", c.schedule.initial);
      c.schedule.milestones = lr.value("milestones", c.schedule.milestones);
      c.schedule.factors = lr.value("factors", c.schedule.factors);
    }
    c.test_samples = j.value("test_samples", c.test_samples);
    c.samples_per_stream = j.value("samples_per_stream", c.samples_per_stream);
    if (j.contains("per_sample")) c.per_sample = per_sample_config_from_json(j.at("per_sample"));
    if (j.contains("ba")) {
      const auto& ba = j.at("ba");
      c.ba_grid_points = ba.value("grid_points", c.ba_grid_points);
      c.ba_half_width = ba.value("half_width_sigmas", c.ba_half_width);
      c.ba_slopes = ba.value("slopes", c.ba_slopes);
      c.ba_max_iter = ba.value("max_iter", c.ba_max_iter);
    }
    c.threads = j.value("threads", c.threads);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("experiment config: ") + e.what());
  }
}

bool EffectReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const InvariantCheck& c) { return c.passed || c.soft; });
}

RdCurve true_rd_curve(const SourceSpec& source, std::span<const double> slopes, std::size_t grid_points,
                      double half_width_sigmas, const BlahutArimotoOptions& options, double* max_gap_bits) {
  source.validate();
  RdCurve curve;
  if (max_gap_bits) *max_gap_bits = 0.0;
  if (source.kind == SourceKind::kGaussMarkov) {
    const Eigen::VectorXd eig = gauss_markov_eigenvalues(source);
    for (double lambda : slopes) {
      // Slope lambda (nats per unit SSE) puts the water level at 1 / (2 lambda).
      const double d = eig.array().min(1.0 / (2.0 * lambda)).mean();
      const WaterFilling wf = reverse_water_fill(eig, d);
      curve.points.push_back({wf.rate_bits, wf.distortion, lambda, CurveLabel::kTrueRd});
    }
  } else {
    const DiscreteRdProblem problem = source.kind == SourceKind::kDiscretePmf
                                          ? hamming_problem(source.pmf)
                                          : discretize(source, grid_points, half_width_sigmas);
    for (double slope : slopes) {
      const BlahutArimotoResult r = blahut_arimoto(problem, slope, options);
      curve.points.push_back(r.point);
      if (max_gap_bits) *max_gap_bits = std::max(*max_gap_bits, r.gap_bits);
    }
  }
  curve.label = CurveLabel::kTrueRd;
  for (auto& p : curve.points) p.label = CurveLabel::kTrueRd;
  curve.sort_by_distortion();
  return curve;
}

double try_bd_rate(const RdCurve& reference, const RdCurve& test, std::string* why) {
  try {
    return bd_rate(reference, test);
  } catch (const std::exception& e) {
    if (why) *why = e.what();
    return kNoValue;
  }
}

namespace {

constexpr std::size_t kStreamLengthSamples = 2048;
constexpr std::size_t kStreamLengths[] = {64, 512, 4096};

struct JobKey {
  std::size_t size = 0, seed = 0, lambda = 0;
  SystemKind system = SystemKind::kDeterministic;
};

struct JobResult {
  bool done = false;
  RdPoint amortized, persample, bitstream;
  AsymptoticGap asymptotic;
  double oneshot_bits_per_dim = 0.0;
  bool bitstream_roundtrip = true;
  bool dither_roundtrip = true;
  double dither_payload_bits = 0.0, dither_model_bits = 0.0;
  std::size_t dither_symbols = 0;
  TraceCheck trace;
  std::size_t persample_worse = 0;
  CodecParams params;
};

std::size_t job_index(const ExperimentConfig& c, std::size_t size, std::size_t seed, std::size_t lambda,
                      SystemKind system) {
  const std::size_t y = system == SystemKind::kDeterministic ? 0 : 1;
  return ((size * c.seeds.size() + seed) * c.lambdas.size() + lambda) * 2 + y;
}

std::string describe(const ExperimentConfig& c, const JobKey& k) {
  std::ostringstream s;
  s << to_string(k.system) << " size=" << c.sizes[k.size].name << " seed=" << c.seeds[k.seed]
    << " lambda=" << c.lambdas[k.lambda];
  return s.str();
}

TrainConfig job_train_config(const ExperimentConfig& cfg, const JobKey& k) {
  const bool det = k.system == SystemKind::kDeterministic;
  TrainConfig tc;
  tc.lambda = cfg.lambdas[k.lambda];
  tc.system = k.system;
  tc.surrogate = det ? cfg.surrogate : Surrogate{SurrogateKind::kNone, cfg.surrogate.temperature};
  tc.steps = cfg.train_steps;
  tc.batch_size = cfg.batch_size;
  tc.seed = derive_key(derive_key(cfg.seeds[k.seed], k.size), 2 * k.lambda + (det ? 0 : 1));
  tc.schedule = cfg.schedule;
  tc.source = cfg.source;
  tc.latent_dim = cfg.sizes[k.size].latent_dim;
  tc.hidden = cfg.sizes[k.size].hidden;
  return tc;
}

JobResult run_job(const ExperimentConfig& cfg, const JobKey& k) {
  const std::uint64_t seed = cfg.seeds[k.seed];
  const bool det = k.system == SystemKind::kDeterministic;
  const TrainConfig tc = job_train_config(cfg, k);
  std::string stage = "train";
  try {
    JobResult r;
    const TrainedModel model = train(tc);
    if (!det) r.trace = check_trace_nonincreasing(model.trace);

    stage = "evaluate";
    const SampleBatch test = sample(cfg.source, cfg.test_samples, derive_key(seed, 0x7E57));
    const Eigen::MatrixXd x = columns(test);
    const std::uint64_t eval_seed = derive_key(seed, 7);
    r.amortized = eval_rd(model, test, eval_seed);

    stage = "per-sample";
    PerSampleConfig pc = cfg.per_sample;
    pc.seed = derive_key(tc.seed, 0x9E5A);
    const PerSampleBatch refined = refine_batch(x, model.params, k.system, tc.lambda, pc, 1, eval_seed);
    r.persample = refined.point;
    for (const auto& row : refined.rows) r.persample_worse += row.final_objective > row.initial_objective;

    if (det) {
      stage = "entropy coding";
      const std::size_t per_stream = cfg.samples_per_stream == 0 ? cfg.test_samples : cfg.samples_per_stream;
      r.asymptotic = measure_asymptotic_gap(model.params, x, per_stream);
      double payload = 0.0;
      for (const auto& s : r.asymptotic.streams) payload += static_cast<double>(s.actual_bits);
      const double dims = static_cast<double>(x.cols()) * static_cast<double>(x.rows());
      r.bitstream = r.amortized;
      r.bitstream.label = CurveLabel::kEmpiricalBitstream;
      r.bitstream.rate_bits =
          (payload + 8.0 * Bitstream::kHeaderBytes * static_cast<double>(r.asymptotic.streams.size())) / dims;

      const AsymptoticGap oneshot = measure_asymptotic_gap(model.params, x, 1);
      r.oneshot_bits_per_dim = oneshot.overhead_bits_per_dim + oneshot.header_bits_per_dim;

      const Bitstream whole = Bitstream::parse(encode_samples(model.params, x).serialize());
      r.bitstream_roundtrip =
          decode_samples(whole, model.params) == decode_batch(model.params, encode_batch(model.params, x));

      stage = "dithered coding";
      const DitherKey key{seed, 1000 * k.size + k.lambda};
      const DitheredCode dc = dithered_code(model.params, x, key);
      r.dither_roundtrip =
          dithered_decode(Bitstream::parse(dc.stream.serialize()), model.params, key) == dc.reconstruction;
      r.dither_payload_bits = static_cast<double>(dc.stream.payload_bits);
      r.dither_symbols = static_cast<std::size_t>(dc.symbols.size());
      const Eigen::VectorXd scale = model.params.prior_scale();
      for (Eigen::Index j = 0; j < dc.latent.cols(); ++j)
        for (Eigen::Index i = 0; i < dc.latent.rows(); ++i)
          r.dither_model_bits -=
              log_bin_mass(dc.latent(i, j) - model.params.prior_mean(i), scale(i)).value / std::numbers::ln2;
    }
    r.params = model.params;
    r.done = true;
    return r;
  } catch (const std::exception& e) {
    throw DiagnosticError("stage '" + stage + "' failed for " + describe(cfg, k) + ": " + e.what());
  }
}

constexpr CurveLabel kCodecLabels[] = {CurveLabel::kEstimatedBound, CurveLabel::kEstimatedBoundPerSample,
                                       CurveLabel::kEmpiricalIdeal, CurveLabel::kEmpiricalPerSample,
                                       CurveLabel::kEmpiricalBitstream};

SystemKind system_of(CurveLabel label) {
  return label == CurveLabel::kEstimatedBound || label == CurveLabel::kEstimatedBoundPerSample
             ? SystemKind::kStochasticGaussian
             : SystemKind::kDeterministic;
}

std::optional<RdPoint> job_point(const JobResult& r, CurveLabel label) {
  if (!r.done) return std::nullopt;
  switch (label) {
    case CurveLabel::kEstimatedBound:
    case CurveLabel::kEmpiricalIdeal:
      return r.amortized;
    case CurveLabel::kEstimatedBoundPerSample:
    case CurveLabel::kEmpiricalPerSample:
      return r.persample;
    case CurveLabel::kEmpiricalBitstream:
      return r.bitstream;
    default:
      return std::nullopt;
  }
}

std::vector<RdCurve> raw_seed_curves(const ExperimentConfig& c, const std::vector<JobResult>& jobs, std::size_t size,
                                     std::size_t seed) {
  std::vector<RdCurve> curves;
  for (CurveLabel label : kCodecLabels) {
    RdCurve curve;
    curve.label = label;
    curve.series = c.sizes[size].name;
    for (std::size_t l = 0; l < c.lambdas.size(); ++l)
      if (auto p = job_point(jobs[job_index(c, size, seed, l, system_of(label))], label)) {
        p->label = label;
        curve.points.push_back(*p);
      }
    curves.push_back(std::move(curve));
  }
  return curves;
}

RdCurve hulled(const RdCurve& curve) {
  if (curve.points.empty()) return curve;
  RdCurve h = lower_convex_hull(curve.points);
  h.label = curve.label;
  h.series = curve.series;
  for (auto& p : h.points) p.label = curve.label;
  return h;
}

const RdCurve& find(const std::vector<RdCurve>& curves, CurveLabel label, const std::string& series) {
  for (const auto& c : curves)
    if (c.label == label && c.series == series) return c;
  throw DiagnosticError("missing curve " + to_string(label) + " for series '" + series + "'");
}

// BD-rate entries that compare curves of one series.
void fill_bd_gaps(GapTable& g, const std::vector<RdCurve>& curves, const std::string& series, bool amortization_only,
                  std::vector<std::string>* notes) {
  auto gap = [&](CurveLabel ref, CurveLabel test, const char* name) {
    std::string why;
    const double v = try_bd_rate(find(curves, ref, series), find(curves, test, series), &why);
    if (std::isnan(v) && notes) notes->push_back(series + " " + name + ": " + why);
    return v;
  };
  g.amortization_stochastic =
      gap(CurveLabel::kEstimatedBound, CurveLabel::kEstimatedBoundPerSample, "amortization_stochastic");
  g.amortization_deterministic =
      gap(CurveLabel::kEmpiricalIdeal, CurveLabel::kEmpiricalPerSample, "amortization_deterministic");
  if (amortization_only) return;
  g.digitization = gap(CurveLabel::kEmpiricalPerSample, CurveLabel::kEstimatedBoundPerSample, "digitization");
  g.bound_vs_empirical = gap(CurveLabel::kEmpiricalIdeal, CurveLabel::kEstimatedBound, "bound_vs_empirical");
  g.asymptotic = gap(CurveLabel::kEmpiricalIdeal, CurveLabel::kEmpiricalBitstream, "asymptotic");
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNoValue;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_seed_csvs(const std::vector<SeedCurves>& per_seed, const std::filesystem::path& dir) {
  const std::filesystem::path seeds = dir / "seeds";
  std::filesystem::create_directories(seeds);
  for (const auto& s : per_seed) {
    std::ofstream out(seeds / (s.size + "-seed" + std::to_string(s.seed) + ".csv"), std::ios::binary);
    write_curves_csv(out, s.curves);
    if (!out) throw DiagnosticError("report: cannot write per-seed curves under " + seeds.string());
  }
}

std::vector<double> slope_grid(const ExperimentConfig& c) {
  std::vector<double> slopes;
  const double lo = c.lambdas.front(), hi = c.lambdas.back() * 2.0;
  for (std::size_t i = 0; i < c.ba_slopes; ++i)
    slopes.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(c.ba_slopes - 1)));
  return slopes;
}

}  // namespace

EffectReport run(const ExperimentConfig& config) {
  config.validate();
  EffectReport rep;
  rep.source_id = source_id(config.source);

  RdCurve true_rd;
  double ba_gap = 0.0;
  const BlahutArimotoOptions ba_options{1e-7, config.ba_max_iter};
  try {
    const std::vector<double> slopes = slope_grid(config);
    true_rd = true_rd_curve(config.source, slopes, config.ba_grid_points, config.ba_half_width, ba_options, &ba_gap);
  } catch (const std::exception& e) {
    throw DiagnosticError(std::string("stage 'true-rd' failed: ") + e.what());
  }
  rep.curves.push_back(true_rd);
  // Capped iterations still give achievable points on the discretized problem.
  rep.checks.push_back({"true-rd BA duality gap within tolerance", ba_gap < ba_options.tol_bits, true,
                        "max final gap " + fmt(ba_gap) + " bits"});
  {
    double worst = 0.0;
    bool any = false;
    for (const auto& p : true_rd.points)
      if (const auto a = analytic_rd(config.source, p.distortion)) {
        any = true;
        worst = std::max(worst, std::fabs(a->rate_bits - p.rate_bits));
      }
    if (any)
      rep.checks.push_back({"true-rd within 0.02 bits/dim of analytic R(D)", worst <= 0.02, false,
                            "max deviation " + fmt(worst) + " bits/dim"});
  }

  const std::size_t job_count = config.sizes.size() * config.seeds.size() * config.lambdas.size() * 2;
  std::vector<JobKey> keys(job_count);
  for (std::size_t s = 0; s < config.sizes.size(); ++s)
    for (std::size_t k = 0; k < config.seeds.size(); ++k)
      for (std::size_t l = 0; l < config.lambdas.size(); ++l)
        for (SystemKind y : {SystemKind::kDeterministic, SystemKind::kStochasticGaussian})
          keys[job_index(config, s, k, l, y)] = {s, k, l, y};

  std::vector<JobResult> jobs(job_count);
  auto collect_per_seed = [&] {
    std::vector<SeedCurves> out;
    for (std::size_t s = 0; s < config.sizes.size(); ++s)
      for (std::size_t k = 0; k < config.seeds.size(); ++k)
        out.push_back({config.sizes[s].name, config.seeds[k], raw_seed_curves(config, jobs, s, k)});
    return out;
  };
  try {
    parallel_for(job_count, config.threads, [&](std::size_t i) { jobs[i] = run_job(config, keys[i]); });
  } catch (...) {
    if (!config.out_dir.empty()) {
      try {
        write_seed_csvs(collect_per_seed(), config.out_dir);
      } catch (...) {
      }
    }
    throw;
  }
  rep.per_seed = collect_per_seed();
  if (!config.out_dir.empty()) write_seed_csvs(rep.per_seed, config.out_dir);

  // Seed-averaged, hull-cleaned curves per size.
  std::vector<std::string> notes;
  for (std::size_t s = 0; s < config.sizes.size(); ++s) {
    const std::string& name = config.sizes[s].name;
    for (CurveLabel label : kCodecLabels) {
      RdCurve avg;
      avg.label = label;
      avg.series = name;
      for (std::size_t l = 0; l < config.lambdas.size(); ++l) {
        RdPoint p;
        p.label = label;
        p.lambda = config.lambdas[l];
        for (std::size_t k = 0; k < config.seeds.size(); ++k) {
          const RdPoint q = *job_point(jobs[job_index(config, s, k, l, system_of(label))], label);
          p.rate_bits += q.rate_bits;
          p.distortion += q.distortion;
        }
        p.rate_bits /= static_cast<double>(config.seeds.size());
        p.distortion /= static_cast<double>(config.seeds.size());
        avg.points.push_back(p);
      }
      rep.curves.push_back(hulled(avg));
    }

    SizeReport sr;
    sr.size = name;
    fill_bd_gaps(sr.gaps, rep.curves, name, false, &notes);
    std::vector<double> payload, header, oneshot;
    for (std::size_t k = 0; k < config.seeds.size(); ++k)
      for (std::size_t l = 0; l < config.lambdas.size(); ++l) {
        const JobResult& r = jobs[job_index(config, s, k, l, SystemKind::kDeterministic)];
        payload.push_back(r.asymptotic.overhead_bits_per_dim);
        header.push_back(r.asymptotic.header_bits_per_dim);
        oneshot.push_back(r.oneshot_bits_per_dim);
      }
    sr.gaps.asymptotic_bits_per_dim = mean_of(payload);
    sr.gaps.header_bits_per_dim = mean_of(header);
    sr.gaps.oneshot_bits_per_dim = mean_of(oneshot);

    for (std::size_t k = 0; k < config.seeds.size(); ++k) {
      std::vector<RdCurve> seed_hulls;
      for (const auto& c : rep.per_seed[s * config.seeds.size() + k].curves) seed_hulls.push_back(hulled(c));
      GapTable g;
      std::vector<std::string> seed_notes;
      fill_bd_gaps(g, seed_hulls, name, true, &seed_notes);
      for (auto& n : seed_notes) notes.push_back("seed " + std::to_string(config.seeds[k]) + " " + n);
      sr.per_seed.push_back(g);
    }
    rep.sizes.push_back(std::move(sr));
  }

  // Mean over sizes; NaN if any size lacks the entry.
  const std::vector<double GapTable::*> fields = {
      &GapTable::amortization_stochastic, &GapTable::amortization_deterministic, &GapTable::digitization,
      &GapTable::bound_vs_empirical,      &GapTable::asymptotic,                 &GapTable::asymptotic_bits_per_dim,
      &GapTable::header_bits_per_dim,     &GapTable::oneshot_bits_per_dim};
  for (auto f : fields) {
    std::vector<double> v;
    for (const auto& sr : rep.sizes) v.push_back(sr.gaps.*f);
    rep.gaps.*f = mean_of(v);
  }

  // Overhead by stream length on the mid-grid deterministic model of the first size and seed.
  {
    const JobResult& mid = jobs[job_index(config, 0, 0, config.lambdas.size() / 2, SystemKind::kDeterministic)];
    const Eigen::MatrixXd x =
        columns(sample(config.source, kStreamLengthSamples, derive_key(config.seeds.front(), 0x5743)));
    const std::size_t latent = mid.params.latent_dim();
    for (std::size_t symbols : kStreamLengths) {
      if (symbols % latent != 0) continue;
      const AsymptoticGap g = measure_asymptotic_gap(mid.params, x, symbols / latent);
      rep.stream_lengths.push_back({symbols, g.streams.size(), g.mean_overhead_bits, g.min_overhead_bits,
                                    g.max_overhead_bits, g.mean_relative_overhead});
    }
  }

  // Invariant checks.
  auto add = [&rep](std::string name, bool ok, std::string detail, bool soft = false) {
    rep.checks.push_back({std::move(name), ok, soft, std::move(detail)});
  };
  for (const auto& sr : rep.sizes)
    for (std::size_t k = 0; k < sr.per_seed.size(); ++k) {
      const std::string tag = sr.size + " seed " + std::to_string(config.seeds[k]);
      const auto& g = sr.per_seed[k];
      add("amortization gap <= 0 (stochastic, " + tag + ")", g.amortization_stochastic <= 0.0,
          fmt(g.amortization_stochastic) + " %");
      add("amortization gap <= 0 (deterministic, " + tag + ")", g.amortization_deterministic <= 0.0,
          fmt(g.amortization_deterministic) + " %");
    }
  for (const auto& sr : rep.sizes) {
    add("digitization gap < 0 (" + sr.size + ")", sr.gaps.digitization < 0.0, fmt(sr.gaps.digitization) + " %");
    add("estimated bound below empirical-ideal (" + sr.size + ")", sr.gaps.bound_vs_empirical < 0.0,
        fmt(sr.gaps.bound_vs_empirical) + " %");
  }
  {
    double min_overhead = 0.0;
    bool first = true;
    std::size_t roundtrip_bad = 0, dither_bad = 0, trace_bad = 0, worse = 0;
    double dither_worst = 0.0;
    std::string trace_detail;
    for (std::size_t i = 0; i < job_count; ++i) {
      const JobResult& r = jobs[i];
      worse += r.persample_worse;
      if (keys[i].system == SystemKind::kStochasticGaussian) {
        if (!r.trace.ok()) {
          ++trace_bad;
          trace_detail += " [" + describe(config, keys[i]) + "]";
        }
        continue;
      }
      for (const auto& s : r.asymptotic.streams) {
        min_overhead = first ? s.overhead_bits() : std::min(min_overhead, s.overhead_bits());
        first = false;
      }
      roundtrip_bad += !r.bitstream_roundtrip;
      // The dithered payload tracks the real-valued model up to the coder
      // overhead and the 16-bit table penalty.
      const double slack = 64.0 + 0.01 * static_cast<double>(r.dither_symbols);
      const double excess = std::fabs(r.dither_payload_bits - r.dither_model_bits);
      dither_worst = std::max(dither_worst, excess);
      dither_bad += !r.dither_roundtrip || excess > slack;
    }
    for (const auto& sl : rep.stream_lengths)
      for (double o : {sl.min_overhead_bits}) min_overhead = first ? o : std::min(min_overhead, o);
    add("coding overhead >= 0 on every stream", !first && min_overhead >= 0.0, "min " + fmt(min_overhead) + " bits");
    add("stochastic training trace non-increasing", trace_bad == 0,
        std::to_string(trace_bad) + " failing runs" + trace_detail);
    add("bitstream round trips", roundtrip_bad == 0, std::to_string(roundtrip_bad) + " failures");
    add("dithered code round trips and tracks the model", dither_bad == 0,
        std::to_string(dither_bad) + " failures, max |payload - model| " + fmt(dither_worst) + " bits");
    add("per-sample refinement never worsens the objective", worse == 0, std::to_string(worse) + " samples worse");
  }
  for (const auto& sl : rep.stream_lengths)
    if (sl.symbols >= 4096)
      add("relative overhead <= 1% at " + std::to_string(sl.symbols) + " symbols", sl.mean_relative_overhead <= 0.01,
          fmt(100.0 * sl.mean_relative_overhead) + " %");
  add("every gap has a BD-rate", notes.empty(), notes.empty() ? "" : notes.front());
  if (rep.sizes.size() >= 2) {
    const double small = std::fabs(rep.sizes.front().gaps.amortization_deterministic);
    const double large = std::fabs(rep.sizes.back().gaps.amortization_deterministic);
    add("per-sample gain shrinks with model size (deterministic)", large <= small,
        rep.sizes.back().size + " " + fmt(large) + " % vs " + rep.sizes.front().size + " " + fmt(small) + " %", true);
  }
  return rep;
}

namespace {

nlohmann::json gap_json(const GapTable& g) {
  return {{"amortization_stochastic", g.amortization_stochastic},
          {"amortization_deterministic", g.amortization_deterministic},
          {"digitization", g.digitization},
          {"bound_vs_empirical", g.bound_vs_empirical},
          {"asymptotic", g.asymptotic},
          {"asymptotic_bits_per_dim", g.asymptotic_bits_per_dim},
          {"header_bits_per_dim", g.header_bits_per_dim},
          {"oneshot_bits_per_dim", g.oneshot_bits_per_dim}};
}

nlohmann::json curve_json(const RdCurve& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points)
    pts.push_back({{"rate_bits", p.rate_bits}, {"distortion", p.distortion}, {"lambda", p.lambda}});
  return {{"label", to_string(c.label)}, {"series", c.series}, {"points", pts}};
}

}  // namespace

nlohmann::json to_json(const EffectReport& r) {
  nlohmann::json j;
  j["source"] = r.source_id;
  j["gaps"] = gap_json(r.gaps);
  j["sizes"] = nlohmann::json::array();
  for (const auto& s : r.sizes) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& g : s.per_seed)
      per_seed.push_back({{"amortization_stochastic", g.amortization_stochastic},
                          {"amortization_deterministic", g.amortization_deterministic}});
    j["sizes"].push_back({{"size", s.size}, {"gaps", gap_json(s.gaps)}, {"per_seed", per_seed}});
  }
  j["curves"] = nlohmann::json::array();
  for (const auto& c : r.curves) j["curves"].push_back(curve_json(c));
  j["stream_lengths"] = nlohmann::json::array();
  for (const auto& s : r.stream_lengths)
    j["stream_lengths"].push_back({{"symbols", s.symbols},
                                   {"streams", s.streams},
                                   {"mean_overhead_bits", s.mean_overhead_bits},
                                   {"min_overhead_bits", s.min_overhead_bits},
                                   {"max_overhead_bits", s.max_overhead_bits},
                                   {"mean_relative_overhead", s.mean_relative_overhead}});
  j["per_seed"] = nlohmann::json::array();
  for (const auto& s : r.per_seed) {
    nlohmann::json curves = nlohmann::json::array();
    for (const auto& c : s.curves) curves.push_back(curve_json(c));
    j["per_seed"].push_back({{"size", s.size}, {"seed", s.seed}, {"curves", curves}});
  }
  j["checks"] = nlohmann::json::array();
  for (const auto& c : r.checks)
    j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"soft", c.soft}, {"detail", c.detail}});
  j["all_passed"] = r.all_passed();
  return j;
}

namespace {

// NaN gap entries are stored as JSON null.
double number(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() || it->is_null() ? kNoValue : it->get<double>();
}

GapTable gap_from_json(const nlohmann::json& j) {
  GapTable g;
  g.amortization_stochastic = number(j, "amortization_stochastic");
  g.amortization_deterministic = number(j, "amortization_deterministic");
  g.digitization = number(j, "digitization");
  g.bound_vs_empirical = number(j, "bound_vs_empirical");
  g.asymptotic = number(j, "asymptotic");
  g.asymptotic_bits_per_dim = number(j, "asymptotic_bits_per_dim");
  g.header_bits_per_dim = number(j, "header_bits_per_dim");
  g.oneshot_bits_per_dim = number(j, "oneshot_bits_per_dim");
  return g;
}

RdCurve curve_from_json(const nlohmann::json& j) {
  RdCurve c;
  c.label = curve_label_from_string(j.at("label").get<std::string>());
  c.series = j.value("series", std::string());
  for (const auto& p : j.at("points"))
    c.points.push_back({number(p, "rate_bits"), number(p, "distortion"), number(p, "lambda"), c.label});
  return c;
}

}  // namespace

EffectReport effect_report_from_json(const nlohmann::json& j) {
  try {
    EffectReport r;
    r.source_id = j.at("source").get<std::string>();
    r.gaps = gap_from_json(j.at("gaps"));
    for (const auto& s : j.at("sizes")) {
      SizeReport sr;
      sr.size = s.at("size").get<std::string>();
      sr.gaps = gap_from_json(s.at("gaps"));
      for (const auto& g : s.at("per_seed")) sr.per_seed.push_back(gap_from_json(g));
      r.sizes.push_back(std::move(sr));
    }
    for (const auto& c : j.at("curves")) r.curves.push_back(curve_from_json(c));
    for (const auto& s : j.at("stream_lengths"))
      r.stream_lengths.push_back({s.at("symbols").get<std::size_t>(), s.at("streams").get<std::size_t>(),
                                  number(s, "mean_overhead_bits"), number(s, "min_overhead_bits"),
                                  number(s, "max_overhead_bits"), number(s, "mean_relative_overhead")});
    for (const auto& s : j.value("per_seed", nlohmann::json::array())) {
      SeedCurves sc;
      sc.size = s.at("size").get<std::string>();
      sc.seed = s.at("seed").get<std::uint64_t>();
      for (const auto& c : s.at("curves")) sc.curves.push_back(curve_from_json(c));
      r.per_seed.push_back(std::move(sc));
    }
    for (const auto& c : j.at("checks"))
      r.checks.push_back({c.at("name").get<std::string>(), c.at("passed").get<bool>(), c.value("soft", false),
                          c.value("detail", std::string())});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DiagnosticError(std::string("effect report: ") + e.what());
  }
}

void report(const EffectReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DiagnosticError("report: cannot create directory '" + dir + "'");
  auto open = [&](const char* name) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw DiagnosticError("report: cannot write " + (fs::path(dir) / name).string());
    return out;
  };
  auto finish = [&](std::ofstream& out, const char* name) {
    out.flush();
    if (!out) throw DiagnosticError("report: write failed for " + (fs::path(dir) / name).string());
  };

  {
    auto out = open("report.json");
    out << to_json(r).dump(2) << '\n';
    finish(out, "report.json");
  }
  {
    auto out = open("curves.csv");
    write_curves_csv(out, r.curves);
    finish(out, "curves.csv");
  }
  {
    auto out = open("gaps.csv");
    out << "series,gap,value,unit\n";
    auto rows = [&out](const std::string& series, const GapTable& g) {
      const std::pair<const char*, double> pct[] = {{"amortization_stochastic", g.amortization_stochastic},
                                                    {"amortization_deterministic", g.amortization_deterministic},
                                                    {"digitization", g.digitization},
                                                    {"bound_vs_empirical", g.bound_vs_empirical},
                                                    {"asymptotic", g.asymptotic}};
      for (const auto& [name, v] : pct) out << series << ',' << name << ',' << fmt17(v) << ",bd_rate_percent\n";
      out << series << ",asymptotic," << fmt17(g.asymptotic_bits_per_dim) << ",bits_per_dim\n";
      out << series << ",header," << fmt17(g.header_bits_per_dim) << ",bits_per_dim\n";
      out << series << ",oneshot," << fmt17(g.oneshot_bits_per_dim) << ",bits_per_dim\n";
    };
    for (const auto& s : r.sizes) rows(s.size, s.gaps);
    rows("mean", r.gaps);
    finish(out, "gaps.csv");
  }
  {
    // Plot data grouped by the effect each panel shows.
    auto pick = [&r](std::initializer_list<CurveLabel> labels) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& c : r.curves)
        if (std::find(labels.begin(), labels.end(), c.label) != labels.end()) a.push_back(curve_json(c));
      return a;
    };
    nlohmann::json fig;
    fig["rd_curves"] = pick({CurveLabel::kTrueRd, CurveLabel::kEstimatedBound, CurveLabel::kEmpiricalIdeal});
    fig["amortization"] = pick({CurveLabel::kEstimatedBound, CurveLabel::kEstimatedBoundPerSample,
                                CurveLabel::kEmpiricalIdeal, CurveLabel::kEmpiricalPerSample});
    fig["digitization"] =
        pick({CurveLabel::kTrueRd, CurveLabel::kEstimatedBoundPerSample, CurveLabel::kEmpiricalPerSample});
    nlohmann::json lengths = nlohmann::json::array();
    for (const auto& s : r.stream_lengths)
      lengths.push_back({{"symbols", s.symbols}, {"mean_relative_overhead", s.mean_relative_overhead},
                         {"mean_overhead_bits", s.mean_overhead_bits}});
    fig["asymptotic"] = {{"curves", pick({CurveLabel::kEmpiricalIdeal, CurveLabel::kEmpiricalBitstream})},
                         {"stream_lengths", lengths}};
    auto out = open("figures.json");
    out << fig.dump(2) << '\n';
    finish(out, "figures.json");
  }
  write_seed_csvs(r.per_seed, dir);
}

}  // namespace rdgap
