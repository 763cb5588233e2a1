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

// Mapping between in-memory types and TensorContainer naming conventions.
//
// Module sets:
//   layer_{l}/adapter/down.weight   (bottleneck x d_model)
//   layer_{l}/adapter/down.bias     (bottleneck)
//   layer_{l}/adapter/up.weight     (d_model x bottleneck)
//   layer_{l}/adapter/up.bias       (d_model)
//   layer_{l}/attn/query/lora_A     (rank x d_model)
//   layer_{l}/attn/query/lora_B     (d_model x rank)
//   layer_{l}/attn/value/lora_A, layer_{l}/attn/value/lora_B
//   meta: kind, d_model, bottleneck | rank, scaling (LoRA), num_layers
//
// Sample batches:
//   layer_{l}/student (N x d_s), layer_{l}/teacher (N x d_t)
//   meta: num_layers, sample_count, and optionally strategy, stride, groups

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moduleport/alignment.hpp"
#include "moduleport/container.hpp"
#include "moduleport/peft.hpp"

namespace moduleport {

// Prediction head that travels with a module set in toy checkpoints:
// head/weight (d_model x n_classes) and head/bias (n_classes).
struct TaskHead {
  Matrix weight{1, 1};
  std::vector<double> bias;
};

void StoreModules(const PeftModuleSet& set, TensorContainer& out,
                  DType dtype = DType::kF32);
TensorContainer ModulesToContainer(const PeftModuleSet& set, DType dtype = DType::kF32);

// Throws FormatError/ShapeError when tensors or metadata are missing or
// transposed. Tensors outside the module naming scheme are ignored.
PeftModuleSet ModulesFromContainer(const TensorContainer& c);

void StoreHead(const TaskHead& head, TensorContainer& out, DType dtype = DType::kF32);
std::optional<TaskHead> HeadFromContainer(const TensorContainer& c);

TensorContainer SamplesToContainer(const SampleBatch& samples, DType dtype = DType::kF64);
SampleBatch SamplesFromContainer(const TensorContainer& c);

// Shortest decimal text that parses back to the same double.
std::string FormatDouble(double v);
double ParseDouble(const std::string& text);

nlohmann::json ToJson(const std::vector<LayerAlignmentSummary>& rows);
std::string FormatAlignmentTable(const std::vector<LayerAlignmentSummary>& rows);

}  // namespace moduleport
