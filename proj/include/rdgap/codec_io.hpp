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

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdgap/codec.hpp"

namespace rdgap {

// Binary layout (little-endian): "RDGL", u16 version, u32 layer count, then
// per layer u32 rows, u32 cols, rows*cols f64 weights (row-major) and rows f64
// biases. Layers are stored as analysis..., synthesis..., the prior as one
// pseudo-layer (rows = latent dim, cols = 1, weight = mean, bias = log-scale),
// and the posterior head when present.
inline constexpr std::uint16_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_params(const CodecParams& params);
// `analysis_layers`/`synthesis_layers` give the split of the layer list.
CodecParams deserialize_params(const std::vector<std::uint8_t>& bytes, std::size_t analysis_layers,
                               std::size_t synthesis_layers);

// Architecture metadata stored in the "<file>.json" sidecar.
nlohmann::json architecture_json(const CodecParams& params);

// Writes <path> and <path>.json. `metadata` is merged into the sidecar.
void save_model(const std::string& path, const CodecParams& params, const nlohmann::json& metadata = {});

struct LoadedModel {
  CodecParams params;
  nlohmann::json sidecar;
};
// Throws DiagnosticError on a missing file, bad magic/version or a sidecar
// that does not match the binary.
LoadedModel load_model(const std::string& path);

}  // namespace rdgap
