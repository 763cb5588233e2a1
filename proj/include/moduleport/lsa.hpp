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
#include <span>
#include <vector>

#include "moduleport/matrix.hpp"

namespace moduleport {

// Injective map from student dimensions (rows) to teacher dimensions
// (columns). mapping[i] is the teacher index chosen for student index i.
struct AssignmentSolution {
  std::vector<std::size_t> mapping;
  // For the raw solvers this is the negated minimal cost. The alignment
  // pipeline overwrites it with the sum of selected correlations.
  double total_score = 0.0;
};

// Sum of cost(i, mapping[i]) accumulated in increasing i.
double AssignmentCost(const Matrix& cost, std::span<const std::size_t> mapping);

// Throws ShapeError unless `mapping` is injective into [0, cols).
void ValidateMapping(std::span<const std::size_t> mapping, std::size_t cols);

// Minimum-cost rectangular assignment of every row to a distinct column by
// successive shortest augmenting paths with dual potentials. O(rows^2 * cols).
// Requires rows <= cols and finite entries.
AssignmentSolution SolveLsa(const Matrix& cost);

// Exhaustive search over every injective map, for use as a test oracle.
// Limited to cols <= kBruteForceMaxCols.
inline constexpr std::size_t kBruteForceMaxCols = 9;
AssignmentSolution BruteForceLsa(const Matrix& cost);

}  // namespace moduleport
