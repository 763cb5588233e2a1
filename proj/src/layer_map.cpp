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

#include "moduleport/layer_map.hpp"

#include "moduleport/error.hpp"

namespace moduleport {

namespace {

Matrix MeanOf(const std::vector<const Matrix*>& parts) {
  Matrix acc = *parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) acc = Add(acc, *parts[k]);
  return Scale(acc, 1.0 / static_cast<double>(parts.size()));
}

std::vector<double> MeanOf(const std::vector<const std::vector<double>*>& parts) {
  std::vector<double> acc = *parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*parts[k])[i];
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (double& v : acc) v *= inv;
  return acc;
}

LoraParams MeanOf(const std::vector<const LoraParams*>& parts) {
  std::vector<const Matrix*> a, b;
  for (const auto* p : parts) {
    a.push_back(&p->a_weight);
    b.push_back(&p->b_weight);
  }
  return LoraParams{MeanOf(a), MeanOf(b), parts.front()->scaling};
}

PeftLayer AverageLayers(const PeftModuleSet& set, const std::vector<std::size_t>& group) {
  if (group.size() == 1) return set.layer(group.front());
  if (set.kind() == PeftKind::kAdapter) {
    std::vector<const Matrix*> down, up;
    std::vector<const std::vector<double>*> down_bias, up_bias;
    for (std::size_t t : group) {
      const AdapterParams& a = set.adapter(t);
      down.push_back(&a.down_weight);
      up.push_back(&a.up_weight);
      down_bias.push_back(&a.down_bias);
      up_bias.push_back(&a.up_bias);
    }
    return AdapterParams{MeanOf(down), MeanOf(down_bias), MeanOf(up), MeanOf(up_bias)};
  }
  std::vector<const LoraParams*> query, value;
  for (std::size_t t : group) {
    query.push_back(&set.lora(t).query);
    value.push_back(&set.lora(t).value);
  }
  return LoraLayer{MeanOf(query), MeanOf(value)};
}

}  // namespace

std::string ToString(LayerStrategy strategy) {
  return strategy == LayerStrategy::kSkip ? "skip" : "avg";
}

LayerStrategy ParseLayerStrategy(const std::string& text) {
  if (text == "skip" || text == "SKIP") return LayerStrategy::kSkip;
  if (text == "avg" || text == "AVG") return LayerStrategy::kAvg;
  throw ConfigError("unknown layer strategy '" + text + "' (expected skip or avg)");
}

LayerMapPlan PlanLayers(std::size_t teacher_layers, std::size_t student_layers,
                        LayerStrategy strategy, std::optional<std::size_t> skip_offset) {
  if (teacher_layers == 0 || student_layers == 0) {
    throw ConfigError("layer counts must be positive");
  }
  if (teacher_layers % student_layers != 0) {
    throw ConfigError("teacher layer count " + std::to_string(teacher_layers) +
                      " is not divisible by student layer count " +
                      std::to_string(student_layers));
  }
  LayerMapPlan plan;
  plan.strategy = strategy;
  plan.stride = teacher_layers / student_layers;
  const std::size_t offset = skip_offset.value_or(plan.stride - 1);
  if (strategy == LayerStrategy::kSkip && offset >= plan.stride) {
    throw ConfigError("skip offset " + std::to_string(offset) +
                      " must be smaller than the stride " + std::to_string(plan.stride));
  }
  plan.groups.resize(student_layers);
  for (std::size_t l = 0; l < student_layers; ++l) {
    const std::size_t base = l * plan.stride;
    if (strategy == LayerStrategy::kSkip) {
      plan.groups[l] = {base + offset};
    } else {
      for (std::size_t k = 0; k < plan.stride; ++k) plan.groups[l].push_back(base + k);
    }
  }
  return plan;
}

PeftModuleSet RealizePlan(const PeftModuleSet& teacher_set, const LayerMapPlan& plan) {
  if (plan.groups.empty()) throw ConfigError("layer plan has no groups");
  std::vector<PeftLayer> layers;
  layers.reserve(plan.groups.size());
  for (std::size_t l = 0; l < plan.groups.size(); ++l) {
    const auto& group = plan.groups[l];
    if (group.empty()) {
      throw ConfigError("layer plan group " + std::to_string(l) + " is empty");
    }
    for (std::size_t t : group) {
      if (t >= teacher_set.num_layers()) {
        throw ShapeError("layer plan references teacher layer " + std::to_string(t) +
                         " but the module set has " +
                         std::to_string(teacher_set.num_layers()) + " layers");
      }
    }
    layers.push_back(AverageLayers(teacher_set, group));
  }
  return PeftModuleSet(std::move(layers));
}

}  // namespace moduleport
