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

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rdgap/codec_io.hpp"
#include "rdgap/error.hpp"

using namespace rdgap;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rdgap-test-" + name)).string();
}

}  // namespace

TEST_CASE("parameters round-trip through the binary format") {
  Rng rng(4);
  for (auto system : {SystemKind::kDeterministic, SystemKind::kStochasticGaussian}) {
    const CodecParams p = init_params(Architecture{5, 3, {7, 4}, system}, rng);
    const auto bytes = serialize_params(p);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RDGL");
    const CodecParams q = deserialize_params(bytes, p.analysis.layers.size(), p.synthesis.layers.size());
    CHECK(q.flatten() == p.flatten());
    CHECK(q.posterior_log_scale.has_value() == p.posterior_log_scale.has_value());
    CHECK(serialize_params(q) == bytes);

    const std::string path = temp_path(to_string(system) + ".model");
    save_model(path, p, {{"note", "x"}});
    const LoadedModel m = load_model(path);
    CHECK(m.params.flatten() == p.flatten());
    CHECK(m.sidecar.at("note") == "x");
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".json");
  }
}

TEST_CASE("damaged model files are rejected") {
  Rng rng(5);
  const CodecParams p = init_params(Architecture{3, 2, {}, SystemKind::kDeterministic}, rng);
  auto bytes = serialize_params(p);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_params(bad, 1, 1), DiagnosticError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(deserialize_params(bad, 1, 1), DiagnosticError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(deserialize_params(bad, 1, 1), DiagnosticError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(deserialize_params(bad, 1, 1), DiagnosticError);
  CHECK_THROWS_AS(deserialize_params(bytes, 2, 1), DiagnosticError);

  CHECK_THROWS_AS(load_model(temp_path("missing.model")), DiagnosticError);
  const std::string path = temp_path("nosidecar.model");
  save_model(path, p);
  std::filesystem::remove(path + ".json");
  CHECK_THROWS_AS(load_model(path), DiagnosticError);
  std::ofstream(path + ".json") << "{not json";
  CHECK_THROWS_AS(load_model(path), DiagnosticError);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}
