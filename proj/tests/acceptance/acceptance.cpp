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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "moduleport/alignment.hpp"
#include "moduleport/archive.hpp"
#include "moduleport/container.hpp"
#include "moduleport/error.hpp"
#include "moduleport/experiment.hpp"
#include "moduleport/layer_map.hpp"
#include "moduleport/lsa.hpp"
#include "moduleport/matrix.hpp"
#include "moduleport/peft.hpp"
#include "moduleport/toy.hpp"

namespace mp = moduleport;
namespace toy = moduleport::toy;
namespace fs = std::filesystem;
using mp::Matrix;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

Matrix Uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Matrix m(rows, cols, 0.0);
  for (auto& v : m.values()) v = d(rng);
  return m;
}

Matrix Gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Matrix m(rows, cols, 0.0);
  for (auto& v : m.values()) v = d(rng);
  return m;
}

double Definitional(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  const double n = static_cast<double>(a.rows());
  long double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    sa += a(r, i);
    sb += b(r, j);
  }
  const long double ma = sa / n, mb = sb / n;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    sab += (a(r, i) - ma) * (b(r, j) - mb);
    saa += (a(r, i) - ma) * (a(r, i) - ma);
    sbb += (b(r, j) - mb) * (b(r, j) - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

double WorstDiff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.values().size(); ++k) {
    worst = std::max(worst, std::abs(a.values()[k] - b.values()[k]));
  }
  return worst;
}

Outcome LsaOracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t r = dim(rng), c = dim(rng);
    if (r > c) std::swap(r, c);
    const auto cost = Uniform(r, c, rng);
    const double fast = mp::AssignmentCost(cost, mp::SolveLsa(cost).mapping);
    const double slow = mp::AssignmentCost(cost, mp::BruteForceLsa(cost).mapping);
    if (fast != slow) ++mismatches;
  }
  const double secs = Seconds(start);
  std::ostringstream d;
  d << "500 matrices, " << mismatches << " cost mismatches, " << secs << " s";
  return {mismatches == 0 && secs < 10.0, d.str()};
}

Outcome PermutationRecovery() {
  const auto start = Clock::now();
  std::size_t correct = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const auto xs = Gaussian(1000, 32, rng);
    std::vector<std::size_t> pi(32);
    std::iota(pi.begin(), pi.end(), 0);
    std::shuffle(pi.begin(), pi.end(), rng);
    std::normal_distribution<double> noise(0.0, 0.01);
    Matrix xt(1000, 32, 0.0);
    for (std::size_t r = 0; r < 1000; ++r) {
      for (std::size_t i = 0; i < 32; ++i) xt(r, pi[i]) = xs(r, i) + noise(rng);
    }
    const auto got = mp::AlignLayer(xs, xt).mapping;
    for (std::size_t i = 0; i < 32; ++i) correct += got[i] == pi[i];
    total += 32;
  }
  const double secs = Seconds(start);
  const double rate = static_cast<double>(correct) / static_cast<double>(total);
  std::ostringstream d;
  d << "20 seeds, recovered " << correct << "/" << total << " (" << 100.0 * rate << "%), "
    << secs << " s";
  return {rate >= 0.99 && secs < 5.0, d.str()};
}

Outcome PearsonCorrectness() {
  std::mt19937_64 rng(3);
  const auto xs = Gaussian(64, 16, rng);
  const auto xt = Gaussian(64, 24, rng);
  const auto c = mp::PearsonCorrelation(xs, xt);
  double def = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 24; ++j) def = std::max(def, std::abs(c(i, j) - Definitional(xs, i, xt, j)));
  }
  Matrix moved = xs;
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t k = 0; k < 16; ++k) moved(r, k) = 2.75 * xs(r, k) + 4.0 - 0.5 * k;
  }
  const double affine = WorstDiff(mp::PearsonCorrelation(moved, xt), c);
  const double transpose = WorstDiff(mp::PearsonCorrelation(xt, xs), c.transposed());
  std::ostringstream d;
  d << "max errors: definitional " << def << ", affine " << affine << ", transpose " << transpose;
  return {def < 1e-12 && affine < 1e-12 && transpose < 1e-12, d.str()};
}

Outcome IdentityTransfer() {
  std::mt19937_64 rng(4);
  auto set = mp::PeftModuleSet::FreshAdapters(12, 16, 4, rng);
  // Fresh up projections are zero; fill them so equality means something.
  std::vector<mp::PeftLayer> layers;
  for (std::size_t l = 0; l < 12; ++l) {
    auto a = set.adapter(l);
    a.up_weight = Gaussian(16, 4, rng);
    for (auto& b : a.up_bias) b = static_cast<double>(l);
    layers.push_back(a);
  }
  set = mp::PeftModuleSet(layers);

  const auto same = mp::Transfer(set, mp::PlanLayers(12, 12, mp::LayerStrategy::kSkip, 0),
                                 nullptr, 16);
  bool ok = mp::BitEqual(same, set);

  // With samples supplied at equal width the result must not change either.
  mp::SampleBatch identity;
  for (std::size_t l = 0; l < 12; ++l) {
    const auto x = Gaussian(64, 16, rng);
    identity.per_layer.push_back({x, x});
  }
  const auto maps = mp::AlignBatch(identity);
  ok = ok && mp::BitEqual(mp::ApplyAlignment(set, maps, 16), set);

  bool skip_ok = true;
  for (std::size_t offset = 0; offset < 2; ++offset) {
    const auto out = mp::Transfer(set, mp::PlanLayers(12, 6, mp::LayerStrategy::kSkip, offset),
                                  nullptr, 16);
    for (std::size_t l = 0; l < 6; ++l) {
      skip_ok = skip_ok && mp::BitEqual(out.adapter(l), set.adapter(2 * l + offset));
    }
  }
  std::ostringstream d;
  d << "identity " << (ok ? "bit-equal" : "DIFFERS") << ", skip 12->6 offsets 0/1 "
    << (skip_ok ? "bit-equal" : "DIFFER");
  return {ok && skip_ok, d.str()};
}

std::string Shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Outcome ShapeContract() {
  const auto start = Clock::now();
  std::mt19937_64 rng(5);
  // 2 -> 1 layers at 1024 -> 768, aligned from real samples.
  mp::SampleBatch samples;
  const auto xt = Gaussian(64, 1024, rng);
  const auto xs = mp::GatherCols(xt, [] {
    std::vector<std::size_t> cols(768);
    for (std::size_t i = 0; i < 768; ++i) cols[i] = (i * 7) % 1024;
    return cols;
  }());
  samples.per_layer.push_back({xs, xt});
  const auto plan = mp::PlanLayers(2, 1, mp::LayerStrategy::kSkip);

  const auto adapters = mp::PeftModuleSet::FreshAdapters(2, 1024, mp::kDefaultBottleneck, rng);
  const auto a = mp::Transfer(adapters, plan, &samples, 768).adapter(0);
  const auto lora = mp::PeftModuleSet::FreshLora(2, 1024, mp::kDefaultLoraRank, 1.0, rng);
  const auto q = mp::Transfer(lora, plan, &samples, 768).lora(0);

  const bool ok = Shape(a.down_weight) == "96x768" && Shape(a.up_weight) == "768x96" &&
                  a.up_bias.size() == 768 && a.down_bias.size() == 96 &&
                  Shape(q.query.a_weight) == "8x768" && Shape(q.query.b_weight) == "768x8" &&
                  Shape(q.value.a_weight) == "8x768" && Shape(q.value.b_weight) == "768x8";
  std::ostringstream d;
  d << "adapter " << Shape(a.down_weight) << ", " << Shape(a.up_weight) << ", bias "
    << a.up_bias.size() << "; lora " << Shape(q.query.a_weight) << ", " << Shape(q.query.b_weight)
    << "; " << Seconds(start) << " s";
  return {ok, d.str()};
}

// Visits every trainable scalar with its parameter group.
template <typename Fn>
void ForEachParam(toy::PeftState& s, Fn&& fn) {
  for (auto& layer : s.layers) {
    if (auto* a = std::get_if<mp::AdapterParams>(&layer)) {
      for (auto& v : a->down_weight.values()) fn("adapter", v);
      for (auto& v : a->down_bias) fn("adapter", v);
      for (auto& v : a->up_weight.values()) fn("adapter", v);
      for (auto& v : a->up_bias) fn("adapter", v);
    } else {
      auto& l = std::get<mp::LoraLayer>(layer);
      for (auto* p : {&l.query, &l.value}) {
        for (auto& v : p->a_weight.values()) fn("lora_A", v);
        for (auto& v : p->b_weight.values()) fn("lora_B", v);
      }
    }
  }
  for (auto& v : s.head.weight.values()) fn("head", v);
  for (auto& v : s.head.bias) fn("head", v);
}

// Returns the worst relative error per group over 20 random coordinates.
std::map<std::string, double> GradientErrors(bool lora, std::uint64_t seed) {
  toy::TaskConfig tc;
  tc.d_in = 6;
  tc.seq_len = 3;
  tc.n_classes = 3;
  tc.n_train = 16;
  tc.n_val = 4;
  tc.seed = seed;
  const auto task = toy::ToyTask::Generate(tc);
  const auto model = toy::ToyModel::Random(2, 6, 8, lora, seed + 1);
  auto state = toy::PeftState::Fresh(model, lora ? mp::PeftKind::kLora : mp::PeftKind::kAdapter,
                                     lora ? 3 : 4, 0.8, 3, seed + 2);
  std::mt19937_64 rng(seed + 3);
  std::normal_distribution<double> jitter(0.0, 0.3);
  ForEachParam(state, [&](const char*, double& v) { v += jitter(rng); });

  toy::PeftState grad = state;
  toy::LossAndGradient(model, state, task.train_x, task.train_y, 3, grad);
  std::vector<std::string> tags;
  std::vector<double> analytic;
  ForEachParam(grad, [&](const char* tag, double& v) {
    tags.emplace_back(tag);
    analytic.push_back(v);
  });

  std::map<std::string, std::vector<std::size_t>> by_group;
  for (std::size_t k = 0; k < tags.size(); ++k) by_group[tags[k]].push_back(k);
  std::map<std::string, double> worst;
  for (auto& [tag, idx] : by_group) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(20, idx.size()));
    double w = 0.0;
    for (std::size_t k : idx) {
      auto loss_at = [&](double delta) {
        toy::PeftState s = state;
        std::size_t i = 0;
        ForEachParam(s, [&](const char*, double& v) {
          if (i++ == k) v += delta;
        });
        return toy::Loss(model, s, task.train_x, task.train_y, 3);
      };
      const double h = 1e-5;
      const double numeric = (loss_at(h) - loss_at(-h)) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-6});
      w = std::max(w, std::abs(numeric - analytic[k]) / denom);
    }
    worst[tag] = idx.size() < 20 ? 1.0 : w;
  }
  return worst;
}

Outcome GradientCheck() {
  auto errors = GradientErrors(false, 60);
  for (const auto& [k, v] : GradientErrors(true, 70)) errors[k + (k == "head" ? "(lora)" : "")] = v;
  bool ok = true;
  std::ostringstream d;
  d << "max rel error, 20 coords each:";
  for (const auto& [k, v] : errors) {
    d << " " << k << "=" << v;
    ok = ok && v < 1e-5;
  }
  return {ok && errors.size() == 5, d.str()};
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome Determinism() {
  auto config = toy::ExperimentConfig::Defaults(toy::PairMode::kMatching);
  config.seeds = 2;
  config.n_train = 1024;
  const auto first = toy::RunExperiment(config).ToCanonicalJson();
  const auto second = toy::RunExperiment(config).ToCanonicalJson();

  std::mt19937_64 rng(7);
  const auto modules = mp::PeftModuleSet::FreshLora(3, 16, 4, 0.5, rng);
  auto c = mp::ModulesToContainer(modules, mp::DType::kF32);
  c.AddMatrix("extra/f64", Gaussian(3, 3, rng), mp::DType::kF64);
  const fs::path path = fs::temp_directory_path() / "moduleport_acceptance_roundtrip.mpx";
  mp::WriteContainer(c, path);
  const auto a = Slurp(path);
  mp::WriteContainer(mp::ReadContainer(path), path);
  const auto b = Slurp(path);
  fs::remove(path);

  std::ostringstream d;
  d << "reports " << (first == second ? "identical" : "DIFFER") << " (" << first.size()
    << " bytes), container rewrite " << (a == b ? "identical" : "DIFFERS");
  return {first == second && a == b, d.str()};
}

struct DirectionResult {
  std::size_t lower_loss = 0;
  double mean_delta = 0.0;
  std::size_t seeds = 0;
};

DirectionResult Direction(const toy::ExperimentReport& report) {
  DirectionResult r;
  r.seeds = report.seeds.size();
  for (const auto& s : report.seeds) {
    const auto& tm = s.transfers.front();
    r.lower_loss += tm.metrics.initial_loss < s.baseline.initial_loss;
    r.mean_delta += tm.delta_vs_baseline;
  }
  r.mean_delta /= static_cast<double>(r.seeds);
  return r;
}

Outcome DirectionOfEffect(std::string& incompatible_note) {
  const auto start = Clock::now();
  auto config = toy::ExperimentConfig::Defaults(toy::PairMode::kMatching);
  config.strategies = {mp::LayerStrategy::kSkip};
  config.seeds = 10;
  const auto matching = Direction(toy::RunExperiment(config));
  const double matching_secs = Seconds(start);

  const auto mid = Clock::now();
  auto inc = toy::ExperimentConfig::Defaults(toy::PairMode::kIncompatible);
  inc.seeds = 10;
  const auto incompatible = Direction(toy::RunExperiment(inc));
  std::ostringstream note;
  note << "incompatible 4->2, d 48->32, skip: lower step-0 loss in " << incompatible.lower_loss
       << "/10 seeds, mean accuracy delta " << std::showpos << incompatible.mean_delta
       << std::noshowpos << " (" << Seconds(mid) << " s)";
  incompatible_note = note.str();

  std::ostringstream d;
  d << "matching 4->2, d 32, skip: lower step-0 loss in " << matching.lower_loss
    << "/10 seeds, mean accuracy delta " << std::showpos << matching.mean_delta << std::noshowpos
    << ", " << matching_secs << " s";
  return {matching.lower_loss >= 8 && matching.mean_delta >= 0.0 && matching_secs < 300.0, d.str()};
}

bool AllFiniteSet(const mp::PeftModuleSet& set) {
  for (std::size_t l = 0; l < set.num_layers(); ++l) {
    const auto& a = set.adapter(l);
    if (!mp::AllFinite(a.down_weight) || !mp::AllFinite(a.up_weight) ||
        !mp::AllFinite(a.down_bias) || !mp::AllFinite(a.up_bias)) {
      return false;
    }
  }
  return true;
}

Outcome Degenerate() {
  std::mt19937_64 rng(9);
  auto xs = Gaussian(200, 6, rng);
  auto xt = Gaussian(200, 10, rng);
  for (std::size_t r = 0; r < 200; ++r) {
    xs(r, 2) = 1.25;
    xt(r, 0) = -3.0;
    xt(r, 7) = 0.0;
  }
  const auto c = mp::PearsonCorrelation(xs, xt);
  bool zeros = mp::AllFinite(c);
  for (std::size_t j = 0; j < 10; ++j) zeros = zeros && c(2, j) == 0.0;
  for (std::size_t i = 0; i < 6; ++i) zeros = zeros && c(i, 0) == 0.0 && c(i, 7) == 0.0;

  // All-constant samples are the worst case: every correlation is zero.
  mp::SampleBatch batch{{{xs, xt}, {Matrix(200, 6, 1.0), Matrix(200, 10, 2.0)}}, std::nullopt};
  const auto teacher = mp::PeftModuleSet::FreshAdapters(4, 10, 3, rng);
  const auto moved = mp::Transfer(teacher, mp::PlanLayers(4, 2, mp::LayerStrategy::kAvg), &batch, 6);
  const auto report = mp::AlignmentReport(batch);
  bool finite = AllFiniteSet(moved);
  for (const auto& row : report) {
    finite = finite && std::isfinite(row.mean_selected) && std::isfinite(row.min_selected);
  }

  bool widening = false;
  try {
    mp::SampleBatch wide{{{xt, xs}}, std::nullopt};
    (void)mp::Transfer(mp::PeftModuleSet::FreshAdapters(1, 6, 3, rng),
                       mp::PlanLayers(1, 1, mp::LayerStrategy::kSkip), &wide, 10);
  } catch (const mp::WideningError&) {
    widening = true;
  } catch (const std::exception&) {
  }
  std::ostringstream d;
  d << "dead columns -> " << (zeros ? "exact 0" : "NOT 0") << ", pipeline "
    << (finite ? "finite" : "NON-FINITE") << ", d_s > d_t "
    << (widening ? "rejected (WideningError)" : "NOT rejected distinctly");
  return {zeros && finite && widening, d.str()};
}

}  // namespace

int main() {
  std::string incompatible_note;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"LSA oracle equivalence", LsaOracle},
      {"permutation recovery", PermutationRecovery},
      {"Pearson correctness", PearsonCorrectness},
      {"identity transfer", IdentityTransfer},
      {"shape contract 1024 -> 768", ShapeContract},
      {"gradient check", GradientCheck},
      {"determinism", Determinism},
      {"direction of effect", [&] { return DirectionOfEffect(incompatible_note); }},
      {"degenerate handling", Degenerate},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  if (!incompatible_note.empty()) std::printf("[INFO] %s\n", incompatible_note.c_str());
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
