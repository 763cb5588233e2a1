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
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moduleport/alignment.hpp"
#include "moduleport/layer_map.hpp"
#include "moduleport/peft.hpp"
#include "moduleport/toy.hpp"

namespace moduleport::toy {

struct ExperimentConfig {
  PairMode mode = PairMode::kMatching;
  PeftKind peft = PeftKind::kAdapter;
  std::size_t teacher_depth = 4;
  std::size_t student_depth = 2;
  std::size_t teacher_dim = 32;
  std::size_t student_dim = 32;
  std::size_t d_in = 16;
  std::size_t seq_len = 4;
  std::size_t n_classes = 4;
  std::size_t n_train = 4096;
  std::size_t n_val = 1024;
  GroundTruth ground_truth = GroundTruth::kMlp;
  std::size_t bottleneck = 16;
  std::size_t rank = 4;
  double lora_scaling = 1.0;
  std::size_t teacher_epochs = 4;
  std::size_t student_epochs = 2;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::vector<LayerStrategy> strategies = {LayerStrategy::kSkip, LayerStrategy::kAvg};
  std::optional<std::size_t> skip_offset;
  std::size_t n_samples = 1024;
  // Capture alignment samples with trained/fresh PEFT modules active rather
  // than from the bare base models.
  bool capture_with_peft = false;
  std::size_t seeds = 10;
  std::uint64_t base_seed = 0;

  // Incompatible mode defaults to 48 -> 32 and SKIP only.
  static ExperimentConfig Defaults(PairMode mode);

  // Unknown keys and ill-typed values throw ConfigError. Keys not present
  // keep the mode's defaults.
  static ExperimentConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

struct RunMetrics {
  double initial_loss = 0.0;
  double initial_val_accuracy = 0.0;
  double final_val_accuracy = 0.0;
  std::vector<double> epoch_loss;
  std::vector<double> val_accuracy;
};

struct TransferOutcome {
  LayerStrategy strategy = LayerStrategy::kSkip;
  RunMetrics metrics;
  double delta_vs_baseline = 0.0;    // TM - baseline final val accuracy
  double gap_to_teacher = 0.0;       // TM - teacher final val accuracy
  std::vector<LayerAlignmentSummary> alignment;  // incompatible mode only
};

struct SeedResult {
  std::uint64_t seed = 0;
  RunMetrics teacher;
  RunMetrics baseline;
  double baseline_gap_to_teacher = 0.0;
  std::vector<TransferOutcome> transfers;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;

  nlohmann::json ToJson() const;
  // Canonical JSON: sorted keys, no insignificant whitespace.
  std::string ToCanonicalJson() const;
  std::string ToTable() const;
};

// Teacher PEFT -> transfer (layer map, plus alignment when widths differ) ->
// student PEFT from the transferred init and from a fresh init, with the
// same seeds and batch order.
SeedResult RunSeed(const ExperimentConfig& config, std::uint64_t seed);
ExperimentReport RunExperiment(const ExperimentConfig& config);

// Per-purpose seeds derived from one experiment seed.
struct SeedStreams {
  std::uint64_t model;
  std::uint64_t task;
  std::uint64_t teacher_init;
  std::uint64_t student_init;
  std::uint64_t teacher_order;
  std::uint64_t student_order;
};
SeedStreams DeriveSeeds(std::uint64_t seed);

ToyTask MakeTask(const ExperimentConfig& config, const SeedStreams& seeds);
ToyPair MakePair(const ExperimentConfig& config, const SeedStreams& seeds);

// Transfers the teacher's modules and head onto the student. The head rows
// live in the final hidden space and follow the last layer's alignment.
// `student_capture_state` is only read when config.capture_with_peft is set.
PeftState TransferState(const ExperimentConfig& config, const ToyPair& pair,
                        const PeftState& teacher_state, LayerStrategy strategy,
                        const Matrix& sample_inputs,
                        const PeftState* student_capture_state = nullptr,
                        std::vector<LayerAlignmentSummary>* alignment = nullptr);

}  // namespace moduleport::toy
