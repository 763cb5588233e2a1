/* Copyright 2026 The ModulePort Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "moduleport/peft.hpp"

#include <cmath>

#include "moduleport/error.hpp"

namespace moduleport {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Matrix RandomNormal(std::size_t rows, std::size_t cols, double stddev,
                    std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

void RequireInputWidth(const Matrix& h, std::size_t d_model, const char* what) {
  if (h.cols() != d_model) {
    throw ShapeError(std::string(what) + ": input " + h.shape_string() +
                     " does not match d_model " + std::to_string(d_model));
  }
}

std::vector<double> Gather(std::span<const double> v,
                           std::span<const std::size_t> index) {
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = v[index[i]];
  return out;
}

LoraParams AlignLora(const LoraParams& p, std::span<const std::size_t> pi) {
  return LoraParams{GatherCols(p.a_weight, pi), GatherRows(p.b_weight, pi),
                    p.scaling};
}

}  // namespace

std::string ToString(PeftKind kind) {
  return kind == PeftKind::kAdapter ? "adapter" : "lora";
}

PeftKind ParsePeftKind(const std::string& text) {
  if (text == "adapter") return PeftKind::kAdapter;
  if (text == "lora") return PeftKind::kLora;
  throw ConfigError("unknown PEFT kind '" + text + "' (expected adapter or lora)");
}

AdapterParams AdapterParams::Fresh(std::size_t d_model, std::size_t bottleneck,
                                   std::mt19937_64& rng, double init_std) {
  AdapterParams p{RandomNormal(bottleneck, d_model, init_std, rng),
                  std::vector<double>(bottleneck, 0.0), Matrix(d_model, bottleneck),
                  std::vector<double>(d_model, 0.0)};
  return p;
}

void AdapterParams::Validate() const {
  const std::size_t d = down_weight.cols();
  const std::size_t b = down_weight.rows();
  if (up_weight.rows() != d || up_weight.cols() != b || down_bias.size() != b ||
      up_bias.size() != d) {
    throw ShapeError("adapter tensors disagree: down " + down_weight.shape_string() +
                     ", up " + up_weight.shape_string() + ", down_bias " +
                     std::to_string(down_bias.size()) + ", up_bias " +
                     std::to_string(up_bias.size()) +
                     " (expected down bottleneck x d_model, up d_model x bottleneck)");
  }
}

LoraParams LoraParams::Fresh(std::size_t d_model, std::size_t rank,
                             std::mt19937_64& rng, double scaling) {
  return LoraParams{RandomNormal(rank, d_model, 1.0 / std::sqrt(double(d_model)), rng),
                    Matrix(d_model, rank), scaling};
}

void LoraParams::Validate() const {
  if (b_weight.rows() != a_weight.cols() || b_weight.cols() != a_weight.rows()) {
    throw ShapeError("LoRA factors disagree: A " + a_weight.shape_string() + ", B " +
                     b_weight.shape_string() +
                     " (expected A rank x d_model, B d_model x rank)");
  }
  if (!std::isfinite(scaling)) throw NumericError("LoRA scaling is not finite");
}

PeftModuleSet::PeftModuleSet(std::vector<PeftLayer> layers)
    : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("PEFT module set needs at least one layer");
  kind_ = std::holds_alternative<AdapterParams>(layers_[0]) ? PeftKind::kAdapter
                                                            : PeftKind::kLora;
  d_model_ = 0;
  width_ = 0;
  double scaling = 0.0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string where = "layer " + std::to_string(l) + ": ";
    std::visit(
        Overloaded{
            [&](const AdapterParams& a) {
              if (kind_ != PeftKind::kAdapter)
                throw ShapeError(where + "mixes adapter and LoRA layers");
              a.Validate();
              if (l == 0) {
                d_model_ = a.d_model();
                width_ = a.bottleneck();
              } else if (a.d_model() != d_model_ || a.bottleneck() != width_) {
                throw ShapeError(where + "adapter shape differs from layer 0");
              }
            },
            [&](const LoraLayer& lo) {
              if (kind_ != PeftKind::kLora)
                throw ShapeError(where + "mixes adapter and LoRA layers");
              lo.query.Validate();
              lo.value.Validate();
              if (l == 0) {
                d_model_ = lo.query.d_model();
                width_ = lo.query.rank();
                scaling = lo.query.scaling;
              }
              for (const LoraParams* p : {&lo.query, &lo.value}) {
                if (p->d_model() != d_model_ || p->rank() != width_)
                  throw ShapeError(where + "LoRA shape differs from layer 0 query");
                if (p->scaling != scaling)
                  throw ShapeError(where + "LoRA scaling differs across modules");
              }
            }},
        layers_[l]);
  }
}

PeftModuleSet PeftModuleSet::FreshAdapters(std::size_t num_layers, std::size_t d_model,
                                           std::size_t bottleneck,
                                           std::mt19937_64& rng) {
  std::vector<PeftLayer> layers;
  layers.reserve(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l)
    layers.emplace_back(AdapterParams::Fresh(d_model, bottleneck, rng));
  return PeftModuleSet(std::move(layers));
}

PeftModuleSet PeftModuleSet::FreshLora(std::size_t num_layers, std::size_t d_model,
                                       std::size_t rank, double scaling,
                                       std::mt19937_64& rng) {
  std::vector<PeftLayer> layers;
  layers.reserve(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    LoraLayer layer{LoraParams::Fresh(d_model, rank, rng, scaling),
                    LoraParams::Fresh(d_model, rank, rng, scaling)};
    layers.emplace_back(std::move(layer));
  }
  return PeftModuleSet(std::move(layers));
}

double PeftModuleSet::lora_scaling() const {
  return kind_ == PeftKind::kLora ? lora(0).query.scaling : 1.0;
}

const AdapterParams& PeftModuleSet::adapter(std::size_t l) const {
  const auto* p = std::get_if<AdapterParams>(&layers_.at(l));
  if (p == nullptr) throw ConfigError("module set holds LoRA, not adapters");
  return *p;
}

const LoraLayer& PeftModuleSet::lora(std::size_t l) const {
  const auto* p = std::get_if<LoraLayer>(&layers_.at(l));
  if (p == nullptr) throw ConfigError("module set holds adapters, not LoRA");
  return *p;
}

bool BitEqual(const AdapterParams& a, const AdapterParams& b) {
  return BitEqual(a.down_weight, b.down_weight) && BitEqual(a.down_bias, b.down_bias) &&
         BitEqual(a.up_weight, b.up_weight) && BitEqual(a.up_bias, b.up_bias);
}

bool BitEqual(const LoraParams& a, const LoraParams& b) {
  return BitEqual(a.a_weight, b.a_weight) && BitEqual(a.b_weight, b.b_weight) &&
         BitEqual(std::span<const double>(&a.scaling, 1),
                  std::span<const double>(&b.scaling, 1));
}

bool BitEqual(const PeftModuleSet& a, const PeftModuleSet& b) {
  if (a.kind_ != b.kind_ || a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t l = 0; l < a.layers_.size(); ++l) {
    const bool same =
        a.kind_ == PeftKind::kAdapter
            ? BitEqual(a.adapter(l), b.adapter(l))
            : BitEqual(a.lora(l).query, b.lora(l).query) &&
                  BitEqual(a.lora(l).value, b.lora(l).value);
    if (!same) return false;
  }
  return true;
}

Matrix AdapterDownProjection(const AdapterParams& p, const Matrix& h) {
  RequireInputWidth(h, p.d_model(), "adapter");
  Matrix z = MatmulTransposedB(h, p.down_weight);
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t k = 0; k < z.cols(); ++k) z(r, k) += p.down_bias[k];
  return z;
}

Matrix AdapterForward(const AdapterParams& p, const Matrix& h) {
  Matrix z = AdapterDownProjection(p, h);
  for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
  Matrix out = MatmulTransposedB(z, p.up_weight);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += p.up_bias[c] + h(r, c);
  return out;
}

Matrix LoraDelta(const LoraParams& p, const Matrix& h) {
  RequireInputWidth(h, p.d_model(), "lora");
  Matrix delta = MatmulTransposedB(MatmulTransposedB(h, p.a_weight), p.b_weight);
  for (double& v : delta.values()) v *= p.scaling;
  return delta;
}

PeftModuleSet ApplyAlignment(const PeftModuleSet& set,
                             std::span<const AssignmentSolution> maps,
                             std::size_t d_student) {
  if (maps.size() != set.num_layers()) {
    throw ShapeError("alignment needs one map per layer: " +
                     std::to_string(set.num_layers()) + " layers, " +
                     std::to_string(maps.size()) + " maps");
  }
  std::vector<PeftLayer> aligned;
  aligned.reserve(set.num_layers());
  for (std::size_t l = 0; l < set.num_layers(); ++l) {
    const auto& pi = maps[l].mapping;
    if (pi.size() != d_student) {
      throw ShapeError("layer " + std::to_string(l) + ": map length " +
                       std::to_string(pi.size()) + " != student dim " +
                       std::to_string(d_student));
    }
    ValidateMapping(pi, set.d_model());
    std::visit(Overloaded{[&](const AdapterParams& a) {
                            aligned.emplace_back(AdapterParams{
                                GatherCols(a.down_weight, pi), a.down_bias,
                                GatherRows(a.up_weight, pi), Gather(a.up_bias, pi)});
                          },
                          [&](const LoraLayer& lo) {
                            aligned.emplace_back(
                                LoraLayer{AlignLora(lo.query, pi), AlignLora(lo.value, pi)});
                          }},
               set.layer(l));
  }
  return PeftModuleSet(std::move(aligned));
}

}  // namespace moduleport
