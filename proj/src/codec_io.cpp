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

#include "rdgap/codec_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rdgap/error.hpp"

namespace rdgap {

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::vector<std::uint8_t> out_;

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  bool done() const { return at_ == in_.size(); }

 private:
  std::uint64_t get(int n) {
    if (at_ + static_cast<std::size_t>(n) > in_.size()) throw DiagnosticError("model file: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[at_++]) << (8 * i);
    return v;
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t at_ = 0;
};

void write_layer(Writer& w, const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias) {
  w.u32(static_cast<std::uint32_t>(weight.rows()));
  w.u32(static_cast<std::uint32_t>(weight.cols()));
  for (Eigen::Index i = 0; i < weight.rows(); ++i)
    for (Eigen::Index j = 0; j < weight.cols(); ++j) w.f64(weight(i, j));
  for (Eigen::Index i = 0; i < bias.size(); ++i) w.f64(bias(i));
}

AffineLayer read_layer(Reader& r) {
  const std::uint32_t rows = r.u32(), cols = r.u32();
  if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1ULL << 26))
    throw DiagnosticError("model file: implausible layer shape");
  AffineLayer layer;
  layer.weight.resize(rows, cols);
  layer.bias.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) layer.weight(i, j) = r.f64();
  for (Eigen::Index i = 0; i < rows; ++i) layer.bias(i) = r.f64();
  return layer;
}

std::vector<std::size_t> widths(const Transform& t) {
  std::vector<std::size_t> w;
  for (std::size_t l = 0; l + 1 < t.layers.size(); ++l) w.push_back(static_cast<std::size_t>(t.layers[l].weight.rows()));
  return w;
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const CodecParams& params) {
  params.validate();
  Writer w;
  for (char c : {'R', 'D', 'G', 'L'}) w.out_.push_back(static_cast<std::uint8_t>(c));
  w.u16(kModelFormatVersion);
  const std::size_t count =
      params.analysis.layers.size() + params.synthesis.layers.size() + 1 + (params.posterior_log_scale ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& l : params.analysis.layers) write_layer(w, l.weight, l.bias);
  for (const auto& l : params.synthesis.layers) write_layer(w, l.weight, l.bias);
  write_layer(w, params.prior_mean, params.prior_log_scale);
  if (params.posterior_log_scale) write_layer(w, params.posterior_log_scale->weight, params.posterior_log_scale->bias);
  return w.take();
}

CodecParams deserialize_params(const std::vector<std::uint8_t>& bytes, std::size_t analysis_layers,
                               std::size_t synthesis_layers) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "RDGL", 4) != 0) throw DiagnosticError("model file: bad magic");
  std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  Reader r(body);
  if (r.u16() != kModelFormatVersion) throw DiagnosticError("model file: unsupported version");
  const std::uint32_t count = r.u32();
  const std::size_t base = analysis_layers + synthesis_layers + 1;
  if (analysis_layers == 0 || synthesis_layers == 0 || (count != base && count != base + 1))
    throw DiagnosticError("model file: layer count does not match the sidecar split");
  CodecParams p;
  for (std::size_t l = 0; l < analysis_layers; ++l) p.analysis.layers.push_back(read_layer(r));
  for (std::size_t l = 0; l < synthesis_layers; ++l) p.synthesis.layers.push_back(read_layer(r));
  const AffineLayer prior = read_layer(r);
  if (prior.weight.cols() != 1) throw DiagnosticError("model file: malformed prior layer");
  p.prior_mean = prior.weight.col(0);
  p.prior_log_scale = prior.bias;
  if (count == base + 1) p.posterior_log_scale = read_layer(r);
  if (!r.done()) throw DiagnosticError("model file: trailing bytes");
  try {
    p.validate();
  } catch (const SpecError& e) {
    throw DiagnosticError(std::string("model file: ") + e.what());
  }
  return p;
}

nlohmann::json architecture_json(const CodecParams& params) {
  return {
      {"format", "RDGL"},
      {"version", kModelFormatVersion},
      {"system", to_string(params.posterior_log_scale ? SystemKind::kStochasticGaussian : SystemKind::kDeterministic)},
      {"source_dim", params.source_dim()},
      {"latent_dim", params.latent_dim()},
      {"hidden", widths(params.analysis)},
      {"analysis_layers", params.analysis.layers.size()},
      {"synthesis_layers", params.synthesis.layers.size()},
      {"posterior_head", params.posterior_log_scale.has_value()},
      {"activation", "softplus-minus-log2"},
      {"scale_floor", kScaleFloor},
  };
}

void save_model(const std::string& path, const CodecParams& params, const nlohmann::json& metadata) {
  const auto bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DiagnosticError("cannot write model file '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  nlohmann::json side = architecture_json(params);
  if (metadata.is_object())
    for (auto it = metadata.begin(); it != metadata.end(); ++it) side[it.key()] = it.value();
  std::ofstream js(path + ".json");
  if (!js) throw DiagnosticError("cannot write model sidecar '" + path + ".json'");
  js << side.dump(2) << "\n";
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DiagnosticError("cannot read model file '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ifstream js(path + ".json");
  if (!js) throw DiagnosticError("missing model sidecar '" + path + ".json'");
  LoadedModel m;
  try {
    m.sidecar = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw DiagnosticError("model sidecar: " + std::string(e.what()));
  }
  m.params = deserialize_params(bytes, m.sidecar.value("analysis_layers", std::size_t{0}),
                                m.sidecar.value("synthesis_layers", std::size_t{0}));
  if (m.sidecar.value("posterior_head", false) != m.params.posterior_log_scale.has_value() ||
      m.sidecar.value("latent_dim", std::size_t{0}) != m.params.latent_dim())
    throw DiagnosticError("model sidecar does not match the binary");
  return m;
}

}  // namespace rdgap
