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

#include "moduleport/alignment.hpp"

#include <algorithm>
#include <string>

#include "moduleport/error.hpp"
#include "moduleport/parallel.hpp"

namespace moduleport {

namespace {

std::size_t CountDeadColumns(const Matrix& m) {
  std::size_t dead = 0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    bool constant = true;
    for (std::size_t r = 1; r < m.rows() && constant; ++r) constant = m(r, j) == m(0, j);
    dead += constant ? 1 : 0;
  }
  return dead;
}

}  // namespace

std::size_t SampleBatch::sample_count() const {
  return per_layer.empty() ? 0 : per_layer.front().student.rows();
}

std::size_t SampleBatch::student_dim() const {
  return per_layer.empty() ? 0 : per_layer.front().student.cols();
}

std::size_t SampleBatch::teacher_dim() const {
  return per_layer.empty() ? 0 : per_layer.front().teacher.cols();
}

void SampleBatch::Validate() const {
  if (per_layer.empty()) throw ShapeError("sample batch has no layers");
  const std::size_t n = sample_count();
  const std::size_t ds = student_dim();
  const std::size_t dt = teacher_dim();
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    const auto& s = per_layer[l];
    const std::string where = "samples layer " + std::to_string(l) + ": ";
    if (s.student.rows() != n || s.teacher.rows() != n) {
      throw ShapeError(where + "student has " + std::to_string(s.student.rows()) +
                       " rows, teacher " + std::to_string(s.teacher.rows()) +
                       ", expected " + std::to_string(n));
    }
    if (s.student.cols() != ds || s.teacher.cols() != dt) {
      throw ShapeError(where + "hidden sizes differ from layer 0");
    }
  }
  if (n < 2) {
    throw InsufficientSamplesError("sample batch needs at least 2 samples, got " +
                                   std::to_string(n));
  }
  if (ds > dt) {
    throw WideningError("student dim " + std::to_string(ds) + " exceeds teacher dim " +
                        std::to_string(dt) + "; only pruning to a narrower student is supported");
  }
  if (plan && plan->student_layers() != per_layer.size()) {
    throw ShapeError("sample batch has " + std::to_string(per_layer.size()) +
                     " layers but its plan has " + std::to_string(plan->student_layers()));
  }
}

AssignmentSolution AlignLayer(const Matrix& xs, const Matrix& xt, int threads) {
  if (xs.cols() > xt.cols()) {
    throw WideningError("student dim " + std::to_string(xs.cols()) +
                        " exceeds teacher dim " + std::to_string(xt.cols()));
  }
  const Matrix corr = PearsonCorrelation(xs, xt, threads);
  AssignmentSolution solution = SolveLsa(Negate(corr));
  solution.total_score = AssignmentCost(corr, solution.mapping);
  return solution;
}

std::vector<AssignmentSolution> AlignBatch(const SampleBatch& samples, int threads) {
  samples.Validate();
  std::vector<AssignmentSolution> maps(samples.per_layer.size());
  ParallelFor(maps.size(), threads, [&](std::size_t l) {
    maps[l] = AlignLayer(samples.per_layer[l].student, samples.per_layer[l].teacher);
  });
  return maps;
}

PeftModuleSet Transfer(const PeftModuleSet& teacher_set, const LayerMapPlan& plan,
                       const SampleBatch* samples, std::size_t d_student, int threads) {
  PeftModuleSet selected = RealizePlan(teacher_set, plan);
  if (teacher_set.d_model() == d_student) return selected;

  if (d_student > teacher_set.d_model()) {
    throw WideningError("student dim " + std::to_string(d_student) +
                        " exceeds teacher module dim " +
                        std::to_string(teacher_set.d_model()));
  }
  if (samples == nullptr) {
    throw ConfigError("teacher dim " + std::to_string(teacher_set.d_model()) +
                      " differs from student dim " + std::to_string(d_student) +
                      "; alignment samples are required");
  }
  samples->Validate();
  if (samples->per_layer.size() != plan.student_layers()) {
    throw ShapeError("samples cover " + std::to_string(samples->per_layer.size()) +
                     " layers, plan has " + std::to_string(plan.student_layers()));
  }
  if (samples->student_dim() != d_student || samples->teacher_dim() != teacher_set.d_model()) {
    throw ShapeError("samples are " + std::to_string(samples->student_dim()) + " -> " +
                     std::to_string(samples->teacher_dim()) + " but the transfer is " +
                     std::to_string(d_student) + " -> " +
                     std::to_string(teacher_set.d_model()));
  }
  const auto maps = AlignBatch(*samples, threads);
  return ApplyAlignment(selected, maps, d_student);
}

std::vector<LayerAlignmentSummary> SummarizeAlignment(
    const SampleBatch& samples, const std::vector<AssignmentSolution>& maps) {
  std::vector<LayerAlignmentSummary> rows;
  rows.reserve(maps.size());
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const auto& s = samples.per_layer.at(l);
    const Matrix corr = PearsonCorrelation(s.student, s.teacher);
    LayerAlignmentSummary row;
    row.layer = l;
    const auto& pi = maps[l].mapping;
    double min_selected = 1.0;
    std::size_t above = 0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
      const double c = corr(i, pi[i]);
      min_selected = std::min(min_selected, c);
      above += c > 0.5 ? 1 : 0;
    }
    const double d = static_cast<double>(pi.size());
    row.mean_selected = maps[l].total_score / d;
    row.min_selected = min_selected;
    row.fraction_above_half = static_cast<double>(above) / d;
    row.dead_student_dims = CountDeadColumns(s.student);
    row.dead_teacher_dims = CountDeadColumns(s.teacher);
    rows.push_back(row);
  }
  return rows;
}

std::vector<LayerAlignmentSummary> AlignmentReport(const SampleBatch& samples, int threads) {
  return SummarizeAlignment(samples, AlignBatch(samples, threads));
}

}  // namespace moduleport
