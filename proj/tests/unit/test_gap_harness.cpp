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

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "rdgap/error.hpp"
#include "rdgap/gap_harness.hpp"

using namespace rdgap;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.sizes = {{"small", {8}, 16}};
  c.seeds = {5};
  c.train_steps = 300;
  c.batch_size = 128;
  c.schedule.initial = 5e-3;
  c.test_samples = 64;
  c.per_sample.steps = 100;
  c.ba_grid_points = 200;
  c.ba_slopes = 8;
  c.ba_max_iter = 300;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("rdgap-harness-" + name);
  fs::remove_all(d);
  return d;
}

std::string run_cli(const std::string& args, int* status) {
  const std::string cmd = std::string(RDGAP_CLI) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 256> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  *status = pclose(pipe);
  return out;
}

const EffectReport& shared_report() {
  static const EffectReport r = run(small_config());
  return r;
}

}  // namespace

TEST_CASE("config validation and JSON") {
  ExperimentConfig c = small_config();
  CHECK(to_json(experiment_config_from_json(to_json(c))) == to_json(c));
  c.lambdas = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(c.validate(), SpecError);
  c = small_config();
  c.lambdas = {1.0, 3.0, 2.0, 4.0};
  CHECK_THROWS_AS(c.validate(), SpecError);
  c = small_config();
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), SpecError);
  c = small_config();
  c.surrogate.kind = SurrogateKind::kNone;
  CHECK_THROWS_AS(c.validate(), SpecError);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"lambdas": [1, 2]})")), SpecError);
}

TEST_CASE("i.i.d. Gaussian reference curve matches the closed form") {
  const SourceSpec g = SourceSpec::gaussian(16);
  const std::vector<double> slopes = {0.6, 1.2, 2.4, 4.8, 9.6, 19.2};
  double gap = 0.0;
  const RdCurve c = true_rd_curve(g, slopes, 400, 6.0, {1e-7, 3000}, &gap);
  REQUIRE(c.points.size() == slopes.size());
  for (const auto& p : c.points) {
    CHECK(p.label == CurveLabel::kTrueRd);
    CHECK(std::fabs(p.rate_bits - analytic_rd(g, p.distortion)->rate_bits) < 0.02);
  }
  // Gauss-Markov goes through water-filling and is exact.
  const SourceSpec gm = SourceSpec::gauss_markov(8, 0.8);
  const RdCurve w = true_rd_curve(gm, slopes, 400, 6.0, {}, &gap);
  CHECK(gap == 0.0);
  for (const auto& p : w.points) CHECK(p.rate_bits == doctest::Approx(analytic_rd(gm, p.distortion)->rate_bits).epsilon(1e-9));
}

TEST_CASE("degenerate run without training is well formed") {
  ExperimentConfig c = small_config();
  c.lambdas = {0.5, 1.0, 2.0, 4.0};
  c.train_steps = 0;
  c.per_sample.steps = 0;
  c.test_samples = 16;
  const EffectReport r = run(c);
  CHECK(!r.checks.empty());
  REQUIRE(r.sizes.size() == 1);
  REQUIRE(r.per_seed.size() == 1);
  // Untrained models: amortized and refined points coincide.
  const auto& seed = r.per_seed[0];
  std::map<CurveLabel, const RdCurve*> by_label;
  for (const auto& curve : seed.curves) by_label[curve.label] = &curve;
  for (auto [a, b] : {std::pair{CurveLabel::kEmpiricalIdeal, CurveLabel::kEmpiricalPerSample},
                      std::pair{CurveLabel::kEstimatedBound, CurveLabel::kEstimatedBoundPerSample}}) {
    REQUIRE(by_label.count(a));
    REQUIRE(by_label.count(b));
    REQUIRE(by_label[a]->points.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(by_label[a]->points[i].rate_bits == doctest::Approx(by_label[b]->points[i].rate_bits));
      CHECK(by_label[a]->points[i].distortion == doctest::Approx(by_label[b]->points[i].distortion));
    }
  }
  const fs::path d = fresh_dir("degenerate");
  report(r, d.string());
  for (const char* f : {"report.json", "curves.csv", "gaps.csv", "figures.json"}) CHECK(fs::exists(d / f));
  const auto j = nlohmann::json::parse(slurp(d / "report.json"));
  for (const char* k : {"source", "gaps", "sizes", "curves", "checks", "all_passed", "stream_lengths"})
    CHECK(j.contains(k));
  const auto figures = nlohmann::json::parse(slurp(d / "figures.json"));
  for (const char* k : {"rd_curves", "amortization", "digitization", "asymptotic"}) CHECK(figures.contains(k));
}

TEST_CASE("small run: invariants, idempotent report and self-consistent gaps") {
  const EffectReport& r = shared_report();
  for (const auto& check : r.checks) {
    INFO(check.name, ": ", check.detail);
    if (check.name.find("BA duality gap") == std::string::npos) CHECK(check.passed);
  }
  REQUIRE(r.stream_lengths.size() == 3);
  CHECK(r.stream_lengths[0].symbols == 64);
  CHECK(r.stream_lengths[2].symbols == 4096);

  const fs::path a = fresh_dir("a"), b = fresh_dir("b"), c = fresh_dir("c");
  report(r, a.string());
  report(r, b.string());
  report(effect_report_from_json(nlohmann::json::parse(slurp(a / "report.json"))), c.string());
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    INFO(rel.string());
    CHECK(slurp(entry.path()) == slurp(b / rel));
    CHECK(slurp(entry.path()) == slurp(c / rel));
  }
  CHECK(fs::exists(a / "seeds" / "small-seed5.csv"));

  // Every BD-rate in gaps.csv is reproduced by the CLI from curves.csv.
  const std::map<std::string, std::pair<std::string, std::string>> pairs = {
      {"amortization_stochastic", {"estimated-bound", "estimated-bound-persample"}},
      {"amortization_deterministic", {"empirical-ideal", "empirical-persample"}},
      {"digitization", {"empirical-persample", "estimated-bound-persample"}},
      {"bound_vs_empirical", {"empirical-ideal", "estimated-bound"}},
      {"asymptotic", {"empirical-ideal", "empirical-bitstream"}}};
  std::istringstream gaps(slurp(a / "gaps.csv"));
  std::string line;
  std::getline(gaps, line);
  int compared = 0;
  while (std::getline(gaps, line)) {
    std::stringstream row(line);
    std::string series, gap, value, unit;
    std::getline(row, series, ',');
    std::getline(row, gap, ',');
    std::getline(row, value, ',');
    std::getline(row, unit, ',');
    if (series == "mean" || unit != "bd_rate_percent") continue;
    const auto& [ref, test] = pairs.at(gap);
    int status = 0;
    const std::string out = run_cli("bdrate --reference " + (a / "curves.csv").string() + " --reference-label " + ref +
                                        " --reference-series " + series + " --test-label " + test +
                                        " --test-series " + series,
                                    &status);
    INFO(gap, " ", value, " cli: ", out);
    REQUIRE(status == 0);
    CHECK(std::stod(out) == doctest::Approx(std::stod(value)).epsilon(1e-12));
    ++compared;
  }
  CHECK(compared == 5);
}

TEST_CASE("unwritable report directory is an error") {
  CHECK_THROWS(report(shared_report(), "/proc/rdgap-cannot-write"));
}
