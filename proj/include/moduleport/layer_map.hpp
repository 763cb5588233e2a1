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
#include <optional>
#include <string>
#include <vector>

#include "moduleport/peft.hpp"

namespace moduleport {

enum class LayerStrategy { kSkip, kAvg };

std::string ToString(LayerStrategy strategy);
LayerStrategy ParseLayerStrategy(const std::string& text);

// Which teacher layers feed each student layer.
//   SKIP: groups[l] = {l * stride + skip_offset}
//   AVG:  groups[l] = {l * stride, ..., l * stride + stride - 1}
struct LayerMapPlan {
  LayerStrategy strategy = LayerStrategy::kSkip;
  std::vector<std::vector<std::size_t>> groups;
  std::size_t stride = 1;

  std::size_t student_layers() const { return groups.size(); }

  // Teacher layer whose hidden states stand in for student layer l when
  // sampling: the SKIP selection, or the last member of an AVG group.
  std::size_t representative(std::size_t l) const { return groups.at(l).back(); }
};

// Throws ConfigError when teacher_layers is not a multiple of student_layers
// or skip_offset >= stride. skip_offset defaults to stride - 1.
LayerMapPlan PlanLayers(std::size_t teacher_layers, std::size_t student_layers,
                        LayerStrategy strategy,
                        std::optional<std::size_t> skip_offset = std::nullopt);

// SKIP copies the selected layer bit-exactly; AVG takes the elementwise mean
// of every parameter across the group, summed in group order.
PeftModuleSet RealizePlan(const PeftModuleSet& teacher_set, const LayerMapPlan& plan);

}  // namespace moduleport
