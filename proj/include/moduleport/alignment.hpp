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
#include <vector>

#include "moduleport/layer_map.hpp"
#include "moduleport/lsa.hpp"
#include "moduleport/matrix.hpp"
#include "moduleport/peft.hpp"

namespace moduleport {

inline constexpr std::size_t kDefaultSampleCount = 1024;

// Row r of `student` and row r of `teacher` are hidden states for the same
// input token, captured where the PEFT module would read them.
struct LayerSamples {
  Matrix student;  // N x d_s
  Matrix teacher;  // N x d_t
};

struct SampleBatch {
  std::vector<LayerSamples> per_layer;  // one entry per student layer
  std::optional<LayerMapPlan> plan;     // how layers were paired, if known

  std::size_t sample_count() const;
  std::size_t student_dim() const;
  std::size_t teacher_dim() const;

  // Throws unless every layer has the same N >= 2, d_s and d_t agree across
  // layers, and d_s <= d_t (WideningError otherwise).
  void Validate() const;
};

// Maximum-correlation injective map from student dimensions to teacher
// dimensions: SolveLsa on the negated Pearson matrix. total_score is the sum
// of the selected correlations.
AssignmentSolution AlignLayer(const Matrix& xs, const Matrix& xt, int threads = 1);

// AlignLayer for every layer of the batch. Layers are independent and may be
// spread over `threads` workers.
std::vector<AssignmentSolution> AlignBatch(const SampleBatch& samples, int threads = 1);

// Moves teacher modules onto the student. With equal hidden sizes this is
// RealizePlan verbatim and `samples` is ignored; otherwise each layer is
// pruned and reordered by the alignment computed from `samples`.
PeftModuleSet Transfer(const PeftModuleSet& teacher_set, const LayerMapPlan& plan,
                       const SampleBatch* samples, std::size_t d_student,
                       int threads = 1);

struct LayerAlignmentSummary {
  std::size_t layer = 0;
  double mean_selected = 0.0;
  double min_selected = 0.0;
  double fraction_above_half = 0.0;
  // Columns with zero variance, which correlate as 0 with everything.
  std::size_t dead_student_dims = 0;
  std::size_t dead_teacher_dims = 0;
};

std::vector<LayerAlignmentSummary> SummarizeAlignment(
    const SampleBatch& samples, const std::vector<AssignmentSolution>& maps);

std::vector<LayerAlignmentSummary> AlignmentReport(const SampleBatch& samples,
                                                   int threads = 1);

}  // namespace moduleport
