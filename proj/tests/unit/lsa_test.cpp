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

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include <doctest.h>

#include "moduleport/error.hpp"
#include "moduleport/lsa.hpp"
#include "test_helpers.hpp"

namespace mp = moduleport;
using mp::Matrix;

namespace {

// Every injective map by std::next_permutation over column choices; kept
// separate from the library's brute force on purpose.
double ExhaustiveMinimum(const Matrix& cost) {
  std::vector<std::size_t> cols(cost.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < cost.rows(); ++r) total += cost(r, cols[r]);
    best = std::min(best, total);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

}  // namespace

TEST_CASE("two by two") {
  const auto c = mp::Negate(Matrix::FromRows({{0.9, 0.1}, {0.2, 0.8}}));
  const auto s = mp::SolveLsa(c);
  CHECK(s.mapping == std::vector<std::size_t>{0, 1});
  CHECK(s.total_score == doctest::Approx(1.7).epsilon(1e-15));
}

TEST_CASE("two rows three columns") {
  const auto c = mp::Negate(Matrix::FromRows({{0.1, 0.9, 0.3}, {0.8, 0.2, 0.4}}));
  const auto s = mp::SolveLsa(c);
  CHECK(s.mapping == std::vector<std::size_t>{1, 0});
  CHECK(s.total_score == doctest::Approx(1.7).epsilon(1e-15));
  CHECK(mp::BruteForceLsa(c).total_score == s.total_score);
}

TEST_CASE("negated identity maps the diagonal") {
  for (std::size_t n = 1; n <= 12; ++n) {
    const auto s = mp::SolveLsa(mp::Negate(Matrix::Identity(n)));
    std::vector<std::size_t> diag(n);
    std::iota(diag.begin(), diag.end(), 0);
    CHECK(s.mapping == diag);
    CHECK(s.total_score == static_cast<double>(n));
  }
}

TEST_CASE("single cell") {
  const auto c = Matrix::FromRows({{0.42}});
  CHECK(mp::SolveLsa(c).mapping == std::vector<std::size_t>{0});
  CHECK(mp::BruteForceLsa(c).mapping == std::vector<std::size_t>{0});
}

TEST_CASE("fully degenerate costs") {
  const Matrix c(3, 3, 0.25);
  for (const auto& s : {mp::SolveLsa(c), mp::BruteForceLsa(c)}) {
    CHECK(std::set<std::size_t>(s.mapping.begin(), s.mapping.end()).size() == 3);
    CHECK(mp::AssignmentCost(c, s.mapping) == 0.75);
  }
}

TEST_CASE("solver agrees with both brute forces") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  for (int trial = 0; trial < 300; ++trial) {
    std::size_t rows = dim(rng), cols = dim(rng);
    if (rows > cols) std::swap(rows, cols);
    const auto cost = mp::testing::RandomMatrix(rows, cols, rng);
    const auto fast = mp::SolveLsa(cost);
    const auto slow = mp::BruteForceLsa(cost);
    mp::ValidateMapping(fast.mapping, cols);
    CHECK(mp::AssignmentCost(cost, fast.mapping) == mp::AssignmentCost(cost, slow.mapping));
    CHECK(std::abs(mp::AssignmentCost(cost, fast.mapping) - ExhaustiveMinimum(cost)) < 1e-12);
  }
}

TEST_CASE("larger problems stay injective and beat random maps") {
  std::mt19937_64 rng(22);
  const auto cost = mp::testing::RandomMatrix(40, 64, rng);
  const auto s = mp::SolveLsa(cost);
  mp::ValidateMapping(s.mapping, 64);
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 0; i < 200; ++i) {
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(mp::AssignmentCost(cost, s.mapping) <=
          mp::AssignmentCost(cost, std::span(perm).first(40)));
  }
}

TEST_CASE("contract errors") {
  CHECK_THROWS_AS((void)mp::SolveLsa(Matrix(3, 2, 0.0)), mp::WideningError);
  auto nan = Matrix(2, 2, 0.0);
  nan(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS((void)mp::SolveLsa(nan), mp::NumericError);
  CHECK_THROWS_AS((void)mp::BruteForceLsa(Matrix(2, mp::kBruteForceMaxCols + 1, 0.0)),
                  mp::SizeLimitError);
  const std::vector<std::size_t> dup{1, 1};
  CHECK_THROWS_AS(mp::ValidateMapping(dup, 3), mp::ShapeError);
  const std::vector<std::size_t> out{0, 3};
  CHECK_THROWS_AS(mp::ValidateMapping(out, 3), mp::ShapeError);
}
