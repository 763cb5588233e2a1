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

// Desk-scale stand-ins for a teacher/student pair of pretrained encoders.
//
// An example is a sequence of `seq_len` tokens, each a d_in vector. Batches
// are stored token-major: rows [e*seq_len, (e+1)*seq_len) belong to example
// e. The frozen base computes, per layer l,
//
//   h_0 = x * input_proj
//   a   = h + softmax(Q K^T / sqrt(d)) V          (attention models only)
//   u   = a + tanh(a * W_l^T + b_l)
//   h'  = adapter_l(u)                            (adapter PEFT) or u
//
// with Q, V carrying the LoRA deltas when LoRA PEFT is attached. The head
// reads the mean of the final hidden states over each example's tokens.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "moduleport/archive.hpp"
#include "moduleport/container.hpp"
#include "moduleport/layer_map.hpp"
#include "moduleport/matrix.hpp"
#include "moduleport/peft.hpp"

namespace moduleport::toy {

struct AttentionWeights {
  Matrix query;  // d x d, applied as h * W^T
  Matrix key;
  Matrix value;
};

struct ToyBlock {
  Matrix weight;  // d x d, applied as a * W^T
  std::vector<double> bias;
  std::optional<AttentionWeights> attention;
};

struct ToyModel {
  std::size_t d_in = 0;
  std::size_t d_model = 0;
  Matrix input_proj{1, 1};  // d_in x d_model
  std::vector<ToyBlock> blocks;
  std::uint64_t seed = 0;

  std::size_t depth() const { return blocks.size(); }
  bool has_attention() const { return !blocks.empty() && blocks.front().attention.has_value(); }

  static ToyModel Random(std::size_t depth, std::size_t d_in, std::size_t d_model,
                         bool attention, std::uint64_t seed);
};

bool BitEqual(const ToyModel& a, const ToyModel& b);

TensorContainer ModelToContainer(const ToyModel& model);
ToyModel ModelFromContainer(const TensorContainer& c);

enum class PairMode { kMatching, kIncompatible };
std::string ToString(PairMode mode);
PairMode ParsePairMode(const std::string& text);

struct PairConfig {
  PairMode mode = PairMode::kMatching;
  std::size_t teacher_depth = 4;
  std::size_t student_depth = 2;
  std::size_t teacher_dim = 32;
  std::size_t student_dim = 32;
  std::size_t d_in = 16;
  bool attention = false;
  // Matching pairs copy teacher block l*stride + offset into student block
  // l; defaults to stride - 1, the same layer SKIP transfers by default.
  std::optional<std::size_t> copy_offset;
  std::uint64_t seed = 0;
};

struct ToyPair {
  ToyModel teacher;
  ToyModel student;
};

// Matching mode: student blocks and input projection are copies of the
// teacher's (a stand-in for task-agnostic distillation); dims must agree.
// Incompatible mode: the student is initialised independently.
ToyPair BuildPair(const PairConfig& config);

enum class GroundTruth { kMlp, kLinear };

struct TaskConfig {
  std::size_t d_in = 16;
  std::size_t seq_len = 4;
  std::size_t n_classes = 4;
  std::size_t n_train = 4096;
  std::size_t n_val = 1024;
  GroundTruth ground_truth = GroundTruth::kMlp;
  std::uint64_t seed = 0;
};

// Labels are quantile buckets of a fixed random scoring network applied to
// the token-mean of each input, so classes are balanced by construction.
struct ToyTask {
  TaskConfig config;
  Matrix train_x{1, 1};  // (n_train * seq_len) x d_in
  std::vector<int> train_y;
  Matrix val_x{1, 1};
  std::vector<int> val_y;

  static ToyTask Generate(const TaskConfig& config);
};

// Everything PEFT training may change: the modules and the task head.
struct PeftState {
  std::vector<PeftLayer> layers;
  TaskHead head;

  PeftModuleSet modules() const { return PeftModuleSet(layers); }

  static PeftState Fresh(const ToyModel& model, PeftKind kind, std::size_t width,
                         double lora_scaling, std::size_t n_classes, std::uint64_t seed);
  static PeftState From(const PeftModuleSet& modules, TaskHead head);
};

bool BitEqual(const PeftState& a, const PeftState& b);

// Mean cross-entropy over the batch. Throws ShapeError when the model,
// state and inputs disagree.
double Loss(const ToyModel& model, const PeftState& state, const Matrix& x,
            std::span<const int> labels, std::size_t seq_len);

// Loss plus the gradient with respect to every entry of `state`. `grad`
// mirrors `state` in structure.
double LossAndGradient(const ToyModel& model, const PeftState& state, const Matrix& x,
                       std::span<const int> labels, std::size_t seq_len, PeftState& grad);

std::vector<int> Predict(const ToyModel& model, const PeftState& state, const Matrix& x,
                         std::size_t seq_len);
double Accuracy(const ToyModel& model, const PeftState& state, const Matrix& x,
                std::span<const int> labels, std::size_t seq_len);

struct TrainOptions {
  std::size_t epochs = 3;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  // Seeds the per-epoch shuffle; equal seeds give equal batch order.
  std::uint64_t order_seed = 0;
};

struct TrainingLog {
  double initial_loss = 0.0;  // full training set, before any update
  double initial_val_accuracy = 0.0;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  std::vector<double> val_accuracy;
};

// Plain minibatch SGD on `state`; the model is never modified.
TrainingLog TrainPeft(const ToyModel& model, PeftState& state, const ToyTask& task,
                      const TrainOptions& options);

// Where hidden states are read: the input to each layer's adapter (block
// output) or the input to the LoRA-carrying attention projections.
enum class CapturePoint { kAdapterInput, kAttentionInput };

CapturePoint CapturePointFor(PeftKind kind);

// Hidden states at `point` for every layer, one (tokens x d_model) matrix
// per layer. With `state` null the PEFT modules are inactive.
std::vector<Matrix> HiddenStates(const ToyModel& model, const PeftState* state,
                                 const Matrix& x, std::size_t seq_len, CapturePoint point);

// Matched samples for alignment. The first `n` token rows of `inputs` are run
// through both models; student layer l is paired with teacher layer
// plan.representative(l). Null states capture the base models.
SampleBatch CaptureSamples(const ToyModel& teacher, const PeftState* teacher_state,
                           const ToyModel& student, const PeftState* student_state,
                           const LayerMapPlan& plan, const Matrix& inputs,
                           std::size_t seq_len, std::size_t n, CapturePoint point);

}  // namespace moduleport::toy
