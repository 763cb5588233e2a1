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

#include "moduleport/lsa.hpp"

#include <limits>
#include <string>

#include "moduleport/error.hpp"

namespace moduleport {

namespace {

void CheckSolvable(const Matrix& cost) {
  if (cost.rows() > cost.cols()) {
    throw WideningError("assignment needs rows <= cols, got " +
                        cost.shape_string() +
                        "; a student wider than the teacher is unsupported");
  }
  if (!AllFinite(cost)) throw NumericError("assignment cost has non-finite entries");
}

}  // namespace

double AssignmentCost(const Matrix& cost, std::span<const std::size_t> mapping) {
  double total = 0.0;
  for (std::size_t i = 0; i < mapping.size(); ++i) total += cost(i, mapping[i]);
  return total;
}

void ValidateMapping(std::span<const std::size_t> mapping, std::size_t cols) {
  std::vector<bool> used(cols, false);
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    const std::size_t j = mapping[i];
    if (j >= cols) {
      throw ShapeError("mapping[" + std::to_string(i) + "] = " + std::to_string(j) +
                       " is out of range for " + std::to_string(cols) + " columns");
    }
    if (used[j]) {
      throw ShapeError("mapping is not injective: column " + std::to_string(j) +
                       " used twice");
    }
    used[j] = true;
  }
}

AssignmentSolution SolveLsa(const Matrix& cost) {
  CheckSolvable(cost);
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // 1-based with slot 0 as the virtual source column. owner[j] is the row
  // currently matched to column j (0 = free).
  std::vector<double> row_potential(n + 1, 0.0);
  std::vector<double> col_potential(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0);
  std::vector<std::size_t> previous(m + 1, 0);
  std::vector<double> slack(m + 1);
  std::vector<bool> visited(m + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col = 0;
    std::fill(slack.begin(), slack.end(), kInf);
    std::fill(visited.begin(), visited.end(), false);
    do {
      visited[col] = true;
      const std::size_t i = owner[col];
      double delta = kInf;
      std::size_t next = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (visited[j]) continue;
        const double reduced = cost(i - 1, j - 1) - row_potential[i] - col_potential[j];
        if (reduced < slack[j]) {
          slack[j] = reduced;
          previous[j] = col;
        }
        if (slack[j] < delta) {
          delta = slack[j];
          next = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (visited[j]) {
          row_potential[owner[j]] += delta;
          col_potential[j] -= delta;
        } else {
          slack[j] -= delta;
        }
      }
      col = next;
    } while (owner[col] != 0);
    // Flip the augmenting path back to the source.
    do {
      const std::size_t prev = previous[col];
      owner[col] = owner[prev];
      col = prev;
    } while (col != 0);
  }

  AssignmentSolution solution;
  solution.mapping.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) solution.mapping[owner[j] - 1] = j - 1;
  }
  solution.total_score = -AssignmentCost(cost, solution.mapping);
  return solution;
}

AssignmentSolution BruteForceLsa(const Matrix& cost) {
  if (cost.cols() > kBruteForceMaxCols) {
    throw SizeLimitError("brute-force assignment limited to " +
                         std::to_string(kBruteForceMaxCols) + " columns, got " +
                         std::to_string(cost.cols()));
  }
  CheckSolvable(cost);
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();

  std::vector<std::size_t> current(n);
  std::vector<bool> used(m, false);
  std::vector<std::size_t> best;
  double best_cost = std::numeric_limits<double>::infinity();

  // Depth-first enumeration in lexicographic order; the first strict
  // minimum wins.
  auto search = [&](auto&& self, std::size_t row) -> void {
    if (row == n) {
      const double total = AssignmentCost(cost, current);
      if (total < best_cost) {
        best_cost = total;
        best = current;
      }
      return;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (used[j]) continue;
      used[j] = true;
      current[row] = j;
      self(self, row + 1);
      used[j] = false;
    }
  };
  search(search, 0);

  AssignmentSolution solution;
  solution.mapping = std::move(best);
  solution.total_score = -best_cost;
  return solution;
}

}  // namespace moduleport
