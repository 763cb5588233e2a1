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
#include "moduleport/layer_map.hpp"
#include "test_helpers.hpp"

namespace mp = moduleport;
using mp::Matrix;
using Groups = std::vector<std::vector<std::size_t>>;

namespace {

mp::PeftModuleSet NumberedAdapters(std::size_t layers) {
  std::vector<mp::PeftLayer> out;
  for (std::size_t l = 0; l < layers; ++l) {
    const double v = static_cast<double>(l) + 0.125;
    out.push_back(mp::AdapterParams{Matrix(2, 3, v), {v, -v}, Matrix(3, 2, -v), {v, v, v}});
  }
  return mp::PeftModuleSet(out);
}

}  // namespace

TEST_CASE("skip with explicit offset") {
  const auto plan = mp::PlanLayers(12, 6, mp::LayerStrategy::kSkip, 1);
  CHECK(plan.groups == Groups{{1}, {3}, {5}, {7}, {9}, {11}});
  CHECK(plan.stride == 2);
}

TEST_CASE("skip defaults to the last layer of each group") {
  CHECK(mp::PlanLayers(12, 4, mp::LayerStrategy::kSkip).groups == Groups{{2}, {5}, {8}, {11}});
  CHECK(mp::PlanLayers(12, 4, mp::LayerStrategy::kSkip, 0).groups == Groups{{0}, {3}, {6}, {9}});
}

TEST_CASE("avg groups are contiguous") {
  const auto plan = mp::PlanLayers(12, 6, mp::LayerStrategy::kAvg);
  CHECK(plan.groups == Groups{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}, {10, 11}});
  CHECK(plan.representative(2) == 5);
}

TEST_CASE("equal depth is the identity plan") {
  CHECK(mp::PlanLayers(12, 12, mp::LayerStrategy::kSkip, 0).groups ==
        Groups{{0}, {1}, {2}, {3}, {4}, {5}, {6}, {7}, {8}, {9}, {10}, {11}});
  const auto set = NumberedAdapters(3);
  CHECK(mp::BitEqual(mp::RealizePlan(set, mp::PlanLayers(3, 3, mp::LayerStrategy::kSkip, 0)), set));
}

TEST_CASE("bad plans") {
  CHECK_THROWS_AS((void)mp::PlanLayers(5, 2, mp::LayerStrategy::kSkip), mp::ConfigError);
  CHECK_THROWS_AS((void)mp::PlanLayers(4, 0, mp::LayerStrategy::kAvg), mp::ConfigError);
  CHECK_THROWS_AS((void)mp::PlanLayers(2, 4, mp::LayerStrategy::kAvg), mp::ConfigError);
  CHECK_THROWS_AS((void)mp::PlanLayers(12, 6, mp::LayerStrategy::kSkip, 2), mp::ConfigError);
}

TEST_CASE("skip selects bit exactly") {
  const auto set = NumberedAdapters(12);
  const auto out = mp::RealizePlan(set, mp::PlanLayers(12, 6, mp::LayerStrategy::kSkip, 1));
  REQUIRE(out.num_layers() == 6);
  for (std::size_t l = 0; l < 6; ++l) CHECK(mp::BitEqual(out.adapter(l), set.adapter(2 * l + 1)));
}

TEST_CASE("avg takes the elementwise mean") {
  std::vector<mp::PeftLayer> layers{
      mp::AdapterParams{Matrix(1, 2, 1.0), {1.0}, Matrix(2, 1, 4.0), {0.0, 2.0}},
      mp::AdapterParams{Matrix(1, 2, 3.0), {2.0}, Matrix(2, 1, -4.0), {1.0, 2.0}}};
  const auto out = mp::RealizePlan(mp::PeftModuleSet(layers),
                                   mp::PlanLayers(2, 1, mp::LayerStrategy::kAvg));
  const auto& a = out.adapter(0);
  CHECK(a.down_weight == Matrix(1, 2, 2.0));
  CHECK(a.up_weight == Matrix(2, 1, 0.0));
  CHECK(a.down_bias == std::vector<double>{1.5});
  CHECK(a.up_bias == std::vector<double>{0.5, 2.0});
}

TEST_CASE("avg of opposite layers cancels") {
  std::mt19937_64 rng(8);
  const auto m = mp::testing::GaussianMatrix(2, 3, rng);
  std::vector<mp::PeftLayer> layers{
      mp::AdapterParams{m, {0, 0}, Matrix(3, 2, 0.0), {0, 0, 0}},
      mp::AdapterParams{mp::Negate(m), {0, 0}, Matrix(3, 2, 0.0), {0, 0, 0}}};
  const auto out = mp::RealizePlan(mp::PeftModuleSet(layers),
                                   mp::PlanLayers(2, 1, mp::LayerStrategy::kAvg));
  CHECK(out.adapter(0).down_weight == Matrix(2, 3, 0.0));
}

TEST_CASE("avg works on lora") {
  std::mt19937_64 rng(9);
  const auto set = mp::PeftModuleSet::FreshLora(4, 6, 2, 0.5, rng);
  const auto out = mp::RealizePlan(set, mp::PlanLayers(4, 2, mp::LayerStrategy::kAvg));
  CHECK(out.kind() == mp::PeftKind::kLora);
  CHECK(out.lora_scaling() == 0.5);
  const double expect = (set.lora(2).query.a_weight(1, 3) + set.lora(3).query.a_weight(1, 3)) / 2;
  CHECK(out.lora(1).query.a_weight(1, 3) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("plan must fit the set") {
  const auto set = NumberedAdapters(4);
  CHECK_THROWS_AS((void)mp::RealizePlan(set, mp::PlanLayers(8, 2, mp::LayerStrategy::kSkip)),
                  mp::ShapeError);
}
