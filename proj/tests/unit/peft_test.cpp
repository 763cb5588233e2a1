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

#include <random>

#include <doctest.h>

#include "moduleport/error.hpp"
#include "moduleport/peft.hpp"
#include "test_helpers.hpp"

namespace mp = moduleport;
using mp::Matrix;

namespace {

mp::AdapterParams RandomAdapter(std::size_t d, std::size_t b, std::mt19937_64& rng) {
  return {mp::testing::GaussianMatrix(b, d, rng), std::vector<double>(b, 0.1),
          mp::testing::GaussianMatrix(d, b, rng), std::vector<double>(d, -0.2)};
}

std::vector<mp::AssignmentSolution> Maps(std::size_t layers, std::vector<std::size_t> pi) {
  return std::vector<mp::AssignmentSolution>(layers, mp::AssignmentSolution{pi, 0.0});
}

}  // namespace

TEST_CASE("adapter by hand") {
  mp::AdapterParams p{Matrix::FromRows({{1, 0}}), {0}, Matrix::FromRows({{1}, {0}}), {0, 0}};
  CHECK(mp::AdapterForward(p, Matrix::FromRows({{2, 3}})) == Matrix::FromRows({{4, 3}}));
}

TEST_CASE("adapter relu clips negative bottleneck activity") {
  mp::AdapterParams p{Matrix::FromRows({{1, 0}}), {0}, Matrix::FromRows({{1}, {1}}), {0.5, 0}};
  CHECK(mp::AdapterForward(p, Matrix::FromRows({{-2, 3}})) == Matrix::FromRows({{-1.5, 3}}));
}

TEST_CASE("fresh adapter is the identity") {
  std::mt19937_64 rng(1);
  const auto p = mp::AdapterParams::Fresh(8, 3, rng);
  CHECK(p.bottleneck() == 3);
  CHECK(p.d_model() == 8);
  const auto h = mp::testing::GaussianMatrix(5, 8, rng);
  CHECK(mp::BitEqual(mp::AdapterForward(p, h), h));
}

TEST_CASE("adapter rejects wrong width") {
  std::mt19937_64 rng(1);
  const auto p = mp::AdapterParams::Fresh(4, 2, rng);
  CHECK_THROWS_AS((void)mp::AdapterForward(p, Matrix(1, 5, 0.0)), mp::ShapeError);
  auto broken = p;
  broken.up_bias.pop_back();
  CHECK_THROWS_AS(broken.Validate(), mp::ShapeError);
}

TEST_CASE("lora by hand") {
  mp::LoraParams p{Matrix::FromRows({{1, 1}}), Matrix::FromRows({{1}, {1}}), 1.0};
  CHECK(mp::LoraDelta(p, Matrix::FromRows({{1, 2}})) == Matrix::FromRows({{3, 3}}));
  p.scaling = 0.0;
  CHECK(mp::LoraDelta(p, Matrix::FromRows({{1, 2}})) == Matrix(1, 2, 0.0));
}

TEST_CASE("fresh lora has zero delta") {
  std::mt19937_64 rng(2);
  const auto p = mp::LoraParams::Fresh(6, 2, rng);
  CHECK(p.rank() == 2);
  const auto h = mp::testing::GaussianMatrix(4, 6, rng);
  CHECK(mp::LoraDelta(p, h) == Matrix(4, 6, 0.0));
}

TEST_CASE("module set defaults and consistency") {
  std::mt19937_64 rng(3);
  const auto adapters = mp::PeftModuleSet::FreshAdapters(3, 16, mp::kDefaultBottleneck, rng);
  CHECK(adapters.kind() == mp::PeftKind::kAdapter);
  CHECK(adapters.width() == 96);
  const auto lora = mp::PeftModuleSet::FreshLora(2, 16, mp::kDefaultLoraRank, 1.0, rng);
  CHECK(lora.width() == 8);
  CHECK(lora.lora(1).value.b_weight.cols() == 8);
  CHECK_THROWS_AS(mp::PeftModuleSet({}), mp::ShapeError);

  std::vector<mp::PeftLayer> mixed{adapters.layer(0), lora.layer(0)};
  CHECK_THROWS(mp::PeftModuleSet(mixed));
  std::vector<mp::PeftLayer> widths{mp::AdapterParams::Fresh(16, 4, rng),
                                    mp::AdapterParams::Fresh(16, 5, rng)};
  CHECK_THROWS(mp::PeftModuleSet(widths));
}

TEST_CASE("alignment gathers the model axis") {
  mp::AdapterParams p{Matrix::FromRows({{10, 11, 12, 13}}), {7},
                      Matrix::FromRows({{20}, {21}, {22}, {23}}), {30, 31, 32, 33}};
  const mp::PeftModuleSet set({p});
  const auto out = mp::ApplyAlignment(set, Maps(1, {2, 0}), 2);
  const auto& a = out.adapter(0);
  CHECK(a.down_weight == Matrix::FromRows({{12, 10}}));
  CHECK(a.up_weight == Matrix::FromRows({{22}, {20}}));
  CHECK(a.up_bias == std::vector<double>{32, 30});
  CHECK(a.down_bias == std::vector<double>{7});
  CHECK(out.d_model() == 2);
}

TEST_CASE("identity alignment is bit exact") {
  std::mt19937_64 rng(4);
  const mp::PeftModuleSet set({RandomAdapter(6, 3, rng), RandomAdapter(6, 3, rng)});
  CHECK(mp::BitEqual(mp::ApplyAlignment(set, Maps(2, {0, 1, 2, 3, 4, 5}), 6), set));
}

TEST_CASE("aligned adapter equals adapter on embedded inputs") {
  // Feeding the student h through the pruned adapter is the teacher adapter
  // on h scattered into the selected teacher dims, read back at those dims.
  std::mt19937_64 rng(5);
  const auto p = RandomAdapter(5, 3, rng);
  const std::vector<std::size_t> pi{4, 1, 2};
  const auto out = mp::ApplyAlignment(mp::PeftModuleSet({p}), Maps(1, pi), 3).adapter(0);
  const auto h = mp::testing::GaussianMatrix(4, 3, rng);
  Matrix wide(4, 5, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t i = 0; i < 3; ++i) wide(r, pi[i]) = h(r, i);
  }
  const auto expect = mp::GatherCols(mp::AdapterForward(p, wide), pi);
  CHECK(mp::testing::MaxAbsDiff(mp::AdapterForward(out, h), expect) < 1e-12);
}

TEST_CASE("large shape fixture") {
  std::mt19937_64 rng(6);
  const auto adapters = mp::PeftModuleSet::FreshAdapters(1, 1024, 96, rng);
  std::vector<std::size_t> pi(768);
  for (std::size_t i = 0; i < 768; ++i) pi[i] = 1023 - i;
  const auto a = mp::ApplyAlignment(adapters, Maps(1, pi), 768).adapter(0);
  CHECK(a.down_weight.rows() == 96);
  CHECK(a.down_weight.cols() == 768);
  CHECK(a.up_weight.rows() == 768);
  CHECK(a.up_weight.cols() == 96);
  CHECK(a.up_bias.size() == 768);

  const auto lora = mp::PeftModuleSet::FreshLora(1, 1024, 8, 1.0, rng);
  const auto q = mp::ApplyAlignment(lora, Maps(1, pi), 768).lora(0).query;
  CHECK(q.a_weight.rows() == 8);
  CHECK(q.a_weight.cols() == 768);
  CHECK(q.b_weight.rows() == 768);
  CHECK(q.b_weight.cols() == 8);
}

TEST_CASE("alignment argument checks") {
  std::mt19937_64 rng(7);
  const mp::PeftModuleSet set({RandomAdapter(4, 2, rng)});
  CHECK_THROWS_AS((void)mp::ApplyAlignment(set, Maps(1, {0, 0}), 2), mp::ShapeError);
  CHECK_THROWS_AS((void)mp::ApplyAlignment(set, Maps(1, {0, 1}), 3), mp::ShapeError);
  CHECK_THROWS_AS((void)mp::ApplyAlignment(set, Maps(2, {0, 1}), 2), mp::ShapeError);
  CHECK_THROWS_AS((void)mp::ApplyAlignment(set, Maps(1, {0, 1, 2, 3, 4}), 5), mp::ShapeError);
}

TEST_CASE("kind names round trip") {
  CHECK(mp::ParsePeftKind(mp::ToString(mp::PeftKind::kLora)) == mp::PeftKind::kLora);
  CHECK(mp::ParsePeftKind("adapter") == mp::PeftKind::kAdapter);
  CHECK_THROWS_AS((void)mp::ParsePeftKind("prefix"), mp::ConfigError);
}
