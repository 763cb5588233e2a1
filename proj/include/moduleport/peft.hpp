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

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "moduleport/lsa.hpp"
#include "moduleport/matrix.hpp"

namespace moduleport {

inline constexpr std::size_t kDefaultBottleneck = 96;
inline constexpr std::size_t kDefaultLoraRank = 8;

enum class PeftKind { kAdapter, kLora };

std::string ToString(PeftKind kind);
PeftKind ParsePeftKind(const std::string& text);

// Bottleneck adapter: out = h + relu(h * down^T + down_bias) * up^T + up_bias.
// down_weight is (bottleneck x d_model), up_weight is (d_model x bottleneck).
struct AdapterParams {
  Matrix down_weight;
  std::vector<double> down_bias;
  Matrix up_weight;
  std::vector<double> up_bias;

  std::size_t d_model() const { return down_weight.cols(); }
  std::size_t bottleneck() const { return down_weight.rows(); }

  // Down projection ~ N(0, init_std^2), everything else zero, so a fresh
  // adapter is the identity map.
  static AdapterParams Fresh(std::size_t d_model, std::size_t bottleneck,
                             std::mt19937_64& rng, double init_std = 0.02);

  // Throws ShapeError when the four tensors disagree.
  void Validate() const;
};

// Low-rank update: delta = scaling * h * A^T * B^T.
// a_weight is (rank x d_model), b_weight is (d_model x rank).
struct LoraParams {
  Matrix a_weight;
  Matrix b_weight;
  double scaling = 1.0;

  std::size_t d_model() const { return a_weight.cols(); }
  std::size_t rank() const { return a_weight.rows(); }

  // A ~ N(0, 1/d_model), B = 0.
  static LoraParams Fresh(std::size_t d_model, std::size_t rank,
                          std::mt19937_64& rng, double scaling = 1.0);

  void Validate() const;
};

// LoRA attached to the attention query and value projections of one layer.
struct LoraLayer {
  LoraParams query;
  LoraParams value;
};

using PeftLayer = std::variant<AdapterParams, LoraLayer>;

// Per-layer PEFT modules for one model. All layers share kind, d_model, the
// bottleneck or rank, and (for LoRA) the scaling constant.
class PeftModuleSet {
 public:
  explicit PeftModuleSet(std::vector<PeftLayer> layers);

  static PeftModuleSet FreshAdapters(std::size_t num_layers, std::size_t d_model,
                                     std::size_t bottleneck, std::mt19937_64& rng);
  static PeftModuleSet FreshLora(std::size_t num_layers, std::size_t d_model,
                                 std::size_t rank, double scaling,
                                 std::mt19937_64& rng);

  PeftKind kind() const { return kind_; }
  std::size_t d_model() const { return d_model_; }
  // Bottleneck size for adapters, rank for LoRA.
  std::size_t width() const { return width_; }
  std::size_t num_layers() const { return layers_.size(); }
  double lora_scaling() const;

  const std::vector<PeftLayer>& layers() const { return layers_; }
  const PeftLayer& layer(std::size_t l) const { return layers_.at(l); }

  const AdapterParams& adapter(std::size_t l) const;
  const LoraLayer& lora(std::size_t l) const;

  friend bool BitEqual(const PeftModuleSet& a, const PeftModuleSet& b);

 private:
  std::vector<PeftLayer> layers_;
  PeftKind kind_;
  std::size_t d_model_;
  std::size_t width_;
};

bool BitEqual(const PeftModuleSet& a, const PeftModuleSet& b);
bool BitEqual(const AdapterParams& a, const AdapterParams& b);
bool BitEqual(const LoraParams& a, const LoraParams& b);

Matrix AdapterForward(const AdapterParams& p, const Matrix& h);

// Pre-activation of the bottleneck, h * down^T + down_bias.
Matrix AdapterDownProjection(const AdapterParams& p, const Matrix& h);

Matrix LoraDelta(const LoraParams& p, const Matrix& h);

// Prunes and reorders every layer's model-dimension axis to the student's
// latent space. For layer l with map pi = maps[l].mapping, model index i of
// the result takes teacher model index pi[i]; bottleneck/rank axes and
// down_bias are untouched.
PeftModuleSet ApplyAlignment(const PeftModuleSet& set,
                             std::span<const AssignmentSolution> maps,
                             std::size_t d_student);

}  // namespace moduleport
