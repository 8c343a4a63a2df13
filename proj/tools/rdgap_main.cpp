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

// rdgap command-line tool. Exit codes: 0 success with every invariant check
// passing, 1 an invariant check failed, 2 invalid input, 3 a run-time
// diagnostic.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rdgap/codec_io.hpp"
#include "rdgap/entropy_coding.hpp"
#include "rdgap/error.hpp"
#include "rdgap/gap_harness.hpp"
#include "rdgap/metrics.hpp"
#include "rdgap/per_sample_opt.hpp"
#include "rdgap/rd_reference.hpp"
#include "rdgap/source_models.hpp"
#include "rdgap/trainer.hpp"

namespace {

using namespace rdgap;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SpecError("'" + path + "': " + e.what());
  }
}

// A source is given either inline as JSON or as a path to a JSON file.
SourceSpec read_source(const std::string& arg) {
  const auto first = arg.find_first_not_of(" \t");
  if (first != std::string::npos && arg[first] == '{') {
    try {
      return source_from_json(nlohmann::json::parse(arg));
    } catch (const nlohmann::json::exception& e) {
      throw SpecError(std::string("--source: ") + e.what());
    }
  }
  return source_from_json(read_json(arg));
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw DiagnosticError("cannot write '" + path + "'");
  return out;
}

// Samples CSV: header x0..x{n-1}, one sample per row.
void write_samples_csv(const std::string& path, const Eigen::MatrixXd& columns) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < columns.rows(); ++i) out << (i ? ",x" : "x") << i;
  out << '\n';
  char buf[40];
  for (Eigen::Index j = 0; j < columns.cols(); ++j) {
    for (Eigen::Index i = 0; i < columns.rows(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", columns(i, j));
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open '" + path + "'");
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == 'x') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw SpecError(path + ":" + std::to_string(line_no) + ": not a number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw SpecError(path + ":" + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw SpecError("'" + path + "' holds no samples");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < rows[j].size(); ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
  return x;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  auto out = open_out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DiagnosticError("write failed for '" + path + "'");
}

void write_curves(const std::string& path, std::span<const RdCurve> curves) {
  auto out = open_out(path);
  write_curves_csv(out, curves);
}

int verdict(bool ok, const std::string& what) {
  std::printf("%s %s\n", ok ? "PASS" : "FAIL", what.c_str());
  return ok ? 0 : 1;
}

nlohmann::json model_metadata(const TrainedModel& m) {
  return {{"train_config", to_json(m.config)},
          {"provenance", {{"seed", m.provenance.seed}, {"config_hash", m.provenance.config_hash}}}};
}

TrainConfig model_train_config(const LoadedModel& m, const std::string& path) {
  if (!m.sidecar.contains("train_config")) throw SpecError("model '" + path + "' has no training config in its sidecar");
  return train_config_from_json(m.sidecar.at("train_config"));
}

// ---------------------------------------------------------------------------

struct BaArgs {
  std::string source = R"({"kind":"scalar-gaussian","n":1})";
  std::vector<double> slopes;
  std::vector<double> distortions;
  std::size_t grid = 1000;
  double half_width = 6.0;
  double tol = 1e-7;
  int max_iter = 100000;
  std::string out;
};

int cmd_ba(const BaArgs& a) {
  const SourceSpec source = read_source(a.source);
  std::vector<double> slopes = a.slopes;
  // A target distortion D maps to the Gaussian-matched slope 1 / (2 D).
  for (double d : a.distortions) {
    if (!(d > 0.0)) throw SpecError("--distortion values must be positive");
    slopes.push_back(source.kind == SourceKind::kDiscretePmf ? std::log((1.0 - d) / d) : 1.0 / (2.0 * d));
  }
  if (slopes.empty()) throw SpecError("ba: give --slope or --distortion");
  double gap = 0.0;
  RdCurve curve = true_rd_curve(source, slopes, a.grid, a.half_width, {a.tol, a.max_iter}, &gap);
  curve.label = CurveLabel::kBa;
  for (auto& p : curve.points) p.label = CurveLabel::kBa;
  std::printf("slope,distortion,rate_bits,analytic_rate_bits\n");
  for (const auto& p : curve.points) {
    const auto an = analytic_rd(source, p.distortion);
    std::printf("%.10g,%.10g,%.10g,%s\n", p.lambda, p.distortion, p.rate_bits,
                an ? std::to_string(an->rate_bits).c_str() : "");
  }
  if (!a.out.empty()) write_curves(a.out, std::span<const RdCurve>(&curve, 1));
  return verdict(gap < a.tol, "BA duality gap " + std::to_string(gap) + " bits");
}

struct TrainArgs {
  std::string config, out, trace;
};

int cmd_train(const TrainArgs& a, const Globals& g) {
  TrainConfig tc = train_config_from_json(read_json(a.config));
  if (g.seed) tc.seed = *g.seed;
  const TrainedModel m = train(tc);
  save_model(a.out, m.params, model_metadata(m));
  {
    auto out = open_out(a.trace.empty() ? a.out + ".trace.csv" : a.trace);
    write_trace_csv(out, m.trace);
  }
  const TracePoint& last = m.trace.empty() ? TracePoint{} : m.trace.back();
  std::printf("trained %s lambda=%g steps=%zu final rate=%.6g bits/dim distortion=%.6g\n", to_string(tc.system).c_str(),
              tc.lambda, tc.steps, last.rate_bits, last.distortion);
  if (tc.system == SystemKind::kStochasticGaussian) {
    const TraceCheck c = check_trace_nonincreasing(m.trace);
    return verdict(c.ok(), "training objective non-increasing (" + std::to_string(c.increases) + " window increases)");
  }
  return 0;
}

struct SweepArgs {
  std::string config, out_dir;
};

int cmd_sweep(const SweepArgs& a, const Globals& g) {
  const nlohmann::json j = read_json(a.config);
  if (!j.contains("lambdas")) throw SpecError("sweep config needs a 'lambdas' array");
  const std::vector<double> lambdas = j.at("lambdas").get<std::vector<double>>();
  nlohmann::json base_json = j;
  base_json.erase("lambdas");
  base_json.erase("test_samples");
  base_json.erase("test_seed");
  if (!base_json.contains("lambda")) base_json["lambda"] = lambdas.empty() ? 1.0 : lambdas.front();
  TrainConfig base = train_config_from_json(base_json);
  if (g.seed) base.seed = *g.seed;
  const SampleBatch test =
      sample(base.source, j.value("test_samples", std::size_t{1024}), j.value("test_seed", derive_key(base.seed, 0x7E57)));
  const SweepResult r = sweep(base, lambdas, test, g.threads.value_or(1));
  const std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);
  int status = 0;
  for (std::size_t i = 0; i < r.models.size(); ++i) {
    const std::string stem = "lambda-" + std::to_string(i);
    save_model((dir / (stem + ".model")).string(), r.models[i].params, model_metadata(r.models[i]));
    auto out = open_out((dir / (stem + ".trace.csv")).string());
    write_trace_csv(out, r.models[i].trace);
    if (base.system == SystemKind::kStochasticGaussian)
      status |= verdict(check_trace_nonincreasing(r.models[i].trace).ok(),
                        "training objective non-increasing at lambda=" + std::to_string(lambdas[i]));
  }
  RdCurve raw;
  raw.label = r.curve.label;
  raw.points = r.points;
  raw.series = "raw";
  const RdCurve curves[] = {r.curve, raw};
  write_curves((dir / "curve.csv").string(), std::span<const RdCurve>(curves, 1));
  write_curves((dir / "points.csv").string(), std::span<const RdCurve>(curves + 1, 1));
  for (const auto& p : r.points)
    std::printf("lambda=%g rate=%.6g bits/dim distortion=%.6g\n", p.lambda, p.rate_bits, p.distortion);
  return status;
}

struct PersampleArgs {
  std::string model, config, input, out;
  std::size_t samples = 64;
  std::optional<double> lambda;
};

int cmd_persample(const PersampleArgs& a, const Globals& g) {
  const LoadedModel m = load_model(a.model);
  const TrainConfig tc = model_train_config(m, a.model);
  PerSampleConfig pc = a.config.empty() ? PerSampleConfig{} : per_sample_config_from_json(read_json(a.config));
  const std::uint64_t seed = g.seed.value_or(pc.seed);
  pc.seed = seed;
  const Eigen::MatrixXd x =
      a.input.empty() ? columns(sample(tc.source, a.samples, derive_key(seed, 0x7E57))) : read_samples_csv(a.input);
  const PerSampleBatch b =
      refine_batch(x, m.params, tc.system, a.lambda.value_or(tc.lambda), pc, g.threads.value_or(1), derive_key(seed, 7));
  {
    auto out = open_out(a.out);
    write_persample_csv(out, b.rows);
  }
  std::size_t worse = 0;
  for (const auto& r : b.rows) worse += r.final_objective > r.initial_objective;
  std::printf("%s: rate=%.6g bits/dim distortion=%.6g over %zu samples\n", to_string(b.point.label).c_str(),
              b.point.rate_bits, b.point.distortion, b.rows.size());
  return verdict(worse == 0, "refined objective <= initial objective on every sample (" + std::to_string(worse) +
                                 " worse)");
}

struct CodeArgs {
  std::string model, input, out;
  std::optional<std::uint64_t> dither_seed;
  std::uint64_t stream = 0;
};

int cmd_code(const CodeArgs& a) {
  const LoadedModel m = load_model(a.model);
  const Eigen::MatrixXd x = read_samples_csv(a.input);
  const double dims = static_cast<double>(x.size());
  if (a.dither_seed) {
    const DitherKey key{*a.dither_seed, a.stream};
    const DitheredCode c = dithered_code(m.params, x, key);
    const auto bytes = c.stream.serialize();
    write_bytes(a.out, bytes);
    const Eigen::MatrixXd back = dithered_decode(Bitstream::parse(bytes), m.params, key);
    std::printf("dithered: %llu bits total, %.6g bits/dim, distortion %.6g\n",
                static_cast<unsigned long long>(c.stream.total_bits()), c.rate_bits / dims,
                (x - c.reconstruction).squaredNorm() / dims);
    return verdict(back == c.reconstruction, "dithered decode reproduces the encoder reconstruction");
  }
  const Bitstream s = encode_samples(m.params, x);
  const auto bytes = s.serialize();
  write_bytes(a.out, bytes);
  const Eigen::MatrixXd back = decode_samples(Bitstream::parse(bytes), m.params);
  const Eigen::MatrixXd expected = decode_batch(m.params, encode_batch(m.params, x));
  std::printf("coded %zu samples: %llu bits total, %.6g bits/dim, distortion %.6g\n", static_cast<std::size_t>(x.cols()),
              static_cast<unsigned long long>(s.total_bits()), static_cast<double>(s.total_bits()) / dims,
              (x - expected).squaredNorm() / dims);
  return verdict(back == expected, "decode reproduces the hard-quantized reconstruction");
}

int cmd_decode(const CodeArgs& a) {
  const LoadedModel m = load_model(a.model);
  const Bitstream s = Bitstream::parse(read_bytes(a.input));
  const Eigen::MatrixXd x = a.dither_seed ? dithered_decode(s, m.params, DitherKey{*a.dither_seed, a.stream})
                                          : decode_samples(s, m.params);
  write_samples_csv(a.out, x);
  std::printf("decoded %zu samples\n", static_cast<std::size_t>(x.cols()));
  return 0;
}

struct BdArgs {
  std::string reference, test;
  std::string reference_label, reference_series, test_label, test_series;
  bool hull = false;
};

RdCurve select_curve(const std::string& path, const std::string& label, const std::string& series, bool hull) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open '" + path + "'");
  std::vector<RdCurve> found;
  for (auto& c : read_curves_csv(in)) {
    if (!label.empty() && to_string(c.label) != label) continue;
    if (!series.empty() && c.series != series) continue;
    found.push_back(std::move(c));
  }
  if (found.size() != 1)
    throw SpecError("'" + path + "': " + std::to_string(found.size()) +
                    " curves match; narrow the choice with --*-label / --*-series");
  if (!hull) return found.front();
  RdCurve h = lower_convex_hull(found.front().points);
  h.label = found.front().label;
  h.series = found.front().series;
  return h;
}

int cmd_bdrate(const BdArgs& a) {
  const RdCurve ref = select_curve(a.reference, a.reference_label, a.reference_series, a.hull);
  const RdCurve test = select_curve(a.test.empty() ? a.reference : a.test, a.test_label, a.test_series, a.hull);
  std::printf("%.17g\n", bd_rate(ref, test));
  return 0;
}

int print_checks(const EffectReport& r) {
  for (const auto& c : r.checks)
    std::printf("%s %s%s%s\n", c.passed ? "PASS" : (c.soft ? "WARN" : "FAIL"), c.name.c_str(),
                c.detail.empty() ? "" : ": ", c.detail.c_str());
  std::printf("gaps (BD-rate %%): amortization stochastic %.4g, deterministic %.4g; digitization %.4g; "
              "bound vs empirical %.4g; asymptotic %.4g (%.4g bits/dim payload, %.4g header)\n",
              r.gaps.amortization_stochastic, r.gaps.amortization_deterministic, r.gaps.digitization,
              r.gaps.bound_vs_empirical, r.gaps.asymptotic, r.gaps.asymptotic_bits_per_dim, r.gaps.header_bits_per_dim);
  return r.all_passed() ? 0 : 1;
}

struct RunArgs {
  std::string config, out;
};

int cmd_run(const RunArgs& a, const Globals& g) {
  ExperimentConfig c = a.config.empty() ? ExperimentConfig{} : experiment_config_from_json(read_json(a.config));
  if (g.seed)
    for (std::size_t i = 0; i < c.seeds.size(); ++i) c.seeds[i] = *g.seed + i;
  if (g.threads) c.threads = *g.threads;
  c.out_dir = a.out;
  const EffectReport r = run(c);
  report(r, a.out);
  {
    auto out = open_out((std::filesystem::path(a.out) / "config.json").string());
    out << to_json(c).dump(2) << '\n';
  }
  return print_checks(r);
}

struct ReportArgs {
  std::string input, out;
};

int cmd_report(const ReportArgs& a) {
  const EffectReport r = effect_report_from_json(read_json(a.input));
  report(r, a.out);
  return print_checks(r);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rate-distortion gap measurement toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run the full gap experiment and write its report");
  run->add_option("--config", run_args.config, "Experiment config JSON (defaults when omitted)");
  run->add_option("--out", run_args.out, "Output directory")->required();

  BaArgs ba_args;
  auto* ba = app.add_subcommand("ba", "Blahut-Arimoto / water-filling reference R(D)");
  ba->add_option("--source", ba_args.source, "Source JSON (inline or file path)");
  ba->add_option("--slope", ba_args.slopes, "Lagrangian slopes (nats per unit distortion)");
  ba->add_option("--distortion", ba_args.distortions, "Target distortions (converted to slopes)");
  ba->add_option("--grid", ba_args.grid, "Discretization points");
  ba->add_option("--half-width", ba_args.half_width, "Grid half width in standard deviations");
  ba->add_option("--tol", ba_args.tol, "Duality-gap tolerance in bits");
  ba->add_option("--max-iter", ba_args.max_iter, "Iteration cap per slope");
  ba->add_option("--out", ba_args.out, "Curve CSV");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train one codec");
  train_cmd->add_option("--config", train_args.config, "Training config JSON")->required();
  train_cmd->add_option("--out", train_args.out, "Model file")->required();
  train_cmd->add_option("--trace", train_args.trace, "Trace CSV (default <out>.trace.csv)");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train one codec per lambda and evaluate the RD curve");
  sweep_cmd->add_option("--config", sweep_args.config, "Training config JSON with a 'lambdas' array")->required();
  sweep_cmd->add_option("--out-dir", sweep_args.out_dir, "Output directory")->required();

  PersampleArgs ps_args;
  auto* ps = app.add_subcommand("persample", "Per-sample latent refinement on a trained model");
  ps->add_option("--model", ps_args.model, "Model file")->required();
  ps->add_option("--config", ps_args.config, "Refinement config JSON");
  ps->add_option("--samples", ps_args.samples, "Samples drawn from the model's source");
  ps->add_option("--input", ps_args.input, "Samples CSV instead of drawing");
  ps->add_option("--lambda", ps_args.lambda, "Override the training lambda");
  ps->add_option("--out", ps_args.out, "Per-sample CSV")->required();

  CodeArgs code_args;
  auto* code = app.add_subcommand("code", "Entropy-code samples into a bitstream");
  code->add_option("--model", code_args.model, "Model file")->required();
  code->add_option("--input", code_args.input, "Samples CSV")->required();
  code->add_option("--out", code_args.out, "Bitstream file")->required();
  code->add_option("--dither-seed", code_args.dither_seed, "Shared dither seed (universal quantization)");
  code->add_option("--stream", code_args.stream, "Dither stream index");

  CodeArgs decode_args;
  auto* decode_cmd = app.add_subcommand("decode", "Decode a bitstream into reconstructions");
  decode_cmd->add_option("--model", decode_args.model, "Model file")->required();
  decode_cmd->add_option("--input", decode_args.input, "Bitstream file")->required();
  decode_cmd->add_option("--out", decode_args.out, "Reconstruction CSV")->required();
  decode_cmd->add_option("--dither-seed", decode_args.dither_seed, "Shared dither seed used when coding");
  decode_cmd->add_option("--stream", decode_args.stream, "Dither stream index");

  BdArgs bd_args;
  auto* bd = app.add_subcommand("bdrate", "BD-rate (percent) of a test curve against a reference curve");
  bd->add_option("--reference", bd_args.reference, "Reference curves CSV")->required();
  bd->add_option("--test", bd_args.test, "Test curves CSV (default: the reference file)");
  bd->add_option("--reference-label", bd_args.reference_label, "Curve label filter");
  bd->add_option("--reference-series", bd_args.reference_series, "Curve series filter");
  bd->add_option("--test-label", bd_args.test_label, "Curve label filter");
  bd->add_option("--test-series", bd_args.test_series, "Curve series filter");
  bd->add_flag("--hull", bd_args.hull, "Hull-clean both curves first");

  ReportArgs report_args;
  auto* rep = app.add_subcommand("report", "Re-render report files from a saved report.json");
  rep->add_option("--input", report_args.input, "report.json")->required();
  rep->add_option("--out", report_args.out, "Output directory")->required();

  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a source into a CSV");
  std::string sample_source, sample_out;
  std::size_t sample_count = 16;
  sample_cmd->add_option("--source", sample_source, "Source JSON (inline or file path)")->required();
  sample_cmd->add_option("--count", sample_count, "Number of samples");
  sample_cmd->add_option("--out", sample_out, "Samples CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_args, g);
    if (*ba) return cmd_ba(ba_args);
    if (*train_cmd) return cmd_train(train_args, g);
    if (*sweep_cmd) return cmd_sweep(sweep_args, g);
    if (*ps) return cmd_persample(ps_args, g);
    if (*code) return cmd_code(code_args);
    if (*decode_cmd) return cmd_decode(decode_args);
    if (*bd) return cmd_bdrate(bd_args);
    if (*rep) return cmd_report(report_args);
    if (*sample_cmd) {
      const SourceSpec s = read_source(sample_source);
      write_samples_csv(sample_out, columns(sample(s, sample_count, g.seed.value_or(0))));
      return 0;
    }
  } catch (const SpecError& e) {
    std::fprintf(stderr, "rdgap: invalid input: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rdgap: %s\n", e.what());
    return 3;
  }
  return 2;
}
