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

// moduleport: command-line surface for moving PEFT modules between models.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or format
// error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "moduleport/alignment.hpp"
#include "moduleport/archive.hpp"
#include "moduleport/container.hpp"
#include "moduleport/error.hpp"
#include "moduleport/experiment.hpp"
#include "moduleport/layer_map.hpp"
#include "moduleport/parallel.hpp"
#include "moduleport/toy.hpp"

namespace mp = moduleport;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Storage dtype of the first module tensor, so rewriting keeps precision.
mp::DType ModuleDType(const mp::TensorContainer& c) {
  for (const auto& [name, entry] : c.entries()) {
    if (name.rfind("layer_", 0) == 0) return entry.dtype;
  }
  return mp::DType::kF32;
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw mp::IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw mp::IoError("failed writing '" + path.string() + "'");
}

nlohmann::json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw mp::IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw mp::ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Copies the task head across, pruning its rows with the last layer's map
// when the hidden size changes.
void CarryHead(const mp::TensorContainer& in, mp::TensorContainer& out,
               const std::vector<mp::AssignmentSolution>* maps) {
  auto head = mp::HeadFromContainer(in);
  if (!head) return;
  if (maps != nullptr) head->weight = mp::GatherRows(head->weight, maps->back().mapping);
  mp::StoreHead(*head, out, in.Get("head/weight").dtype);
}

mp::LayerMapPlan PlanFromArgs(std::size_t teacher_layers, std::size_t student_layers,
                              const std::string& strategy,
                              std::optional<std::size_t> skip_offset) {
  const auto parsed = mp::ParseLayerStrategy(strategy);
  if (parsed == mp::LayerStrategy::kAvg && skip_offset) {
    throw mp::ConfigError("--skip-offset only applies to --strategy skip");
  }
  return mp::PlanLayers(teacher_layers, student_layers, parsed, skip_offset);
}

struct MapLayersArgs {
  std::string modules, out;
  std::size_t student_layers = 0;
  std::string strategy = "skip";
  std::optional<std::size_t> skip_offset;
};

int RunMapLayers(const MapLayersArgs& a) {
  const auto in = mp::ReadContainer(a.modules);
  const auto set = mp::ModulesFromContainer(in);
  const auto plan = PlanFromArgs(set.num_layers(), a.student_layers, a.strategy, a.skip_offset);
  mp::TensorContainer out;
  mp::StoreModules(mp::RealizePlan(set, plan), out, ModuleDType(in));
  CarryHead(in, out, nullptr);
  const auto bytes = mp::WriteContainer(out, a.out);
  std::printf("wrote %zu layers (%s, stride %zu) to %s (%zu bytes)\n", plan.student_layers(),
              mp::ToString(plan.strategy).c_str(), plan.stride, a.out.c_str(), bytes);
  return 0;
}

struct AlignArgs {
  std::string modules, samples, out, report;
};

int RunAlign(const AlignArgs& a, int threads) {
  const auto in = mp::ReadContainer(a.modules);
  const auto set = mp::ModulesFromContainer(in);
  const auto samples = mp::SamplesFromContainer(mp::ReadContainer(a.samples));
  if (samples.per_layer.size() != set.num_layers()) {
    throw mp::ShapeError("samples cover " + std::to_string(samples.per_layer.size()) +
                         " layers, modules have " + std::to_string(set.num_layers()));
  }
  if (samples.teacher_dim() != set.d_model()) {
    throw mp::ShapeError("teacher samples have " + std::to_string(samples.teacher_dim()) +
                         " dims, modules have d_model " + std::to_string(set.d_model()));
  }
  const auto maps = mp::AlignBatch(samples, threads);
  const auto aligned = mp::ApplyAlignment(set, maps, samples.student_dim());
  mp::TensorContainer out;
  mp::StoreModules(aligned, out, ModuleDType(in));
  CarryHead(in, out, &maps);
  mp::WriteContainer(out, a.out);

  const auto rows = mp::SummarizeAlignment(samples, maps);
  if (!a.report.empty()) WriteText(a.report, mp::ToJson(rows).dump() + "\n");
  std::fputs(mp::FormatAlignmentTable(rows).c_str(), stdout);
  return 0;
}

struct TransferArgs {
  std::string modules, samples, out;
  std::size_t student_layers = 0;
  std::size_t student_dim = 0;
  std::string strategy = "skip";
  std::optional<std::size_t> skip_offset;
};

int RunTransfer(const TransferArgs& a, int threads) {
  const auto in = mp::ReadContainer(a.modules);
  const auto set = mp::ModulesFromContainer(in);
  const std::size_t student_layers = a.student_layers ? a.student_layers : set.num_layers();
  const std::size_t student_dim = a.student_dim ? a.student_dim : set.d_model();
  const auto plan = PlanFromArgs(set.num_layers(), student_layers, a.strategy, a.skip_offset);
  std::optional<mp::SampleBatch> samples;
  if (!a.samples.empty()) samples = mp::SamplesFromContainer(mp::ReadContainer(a.samples));
  if (student_dim != set.d_model() && !samples) {
    throw mp::ConfigError("--samples is required when --student-dim (" +
                          std::to_string(student_dim) + ") differs from the teacher's " +
                          std::to_string(set.d_model()));
  }

  const auto moved = mp::Transfer(set, plan, samples ? &*samples : nullptr, student_dim, threads);
  mp::TensorContainer out;
  mp::StoreModules(moved, out, ModuleDType(in));
  if (student_dim != set.d_model()) {
    const auto maps = mp::AlignBatch(*samples, threads);
    CarryHead(in, out, &maps);
    std::fputs(mp::FormatAlignmentTable(mp::SummarizeAlignment(*samples, maps)).c_str(), stdout);
  } else {
    CarryHead(in, out, nullptr);
  }
  mp::WriteContainer(out, a.out);
  std::printf("transferred %zu -> %zu layers, d_model %zu -> %zu, wrote %s\n",
              set.num_layers(), moved.num_layers(), set.d_model(), moved.d_model(),
              a.out.c_str());
  return 0;
}

int RunInspect(const std::string& path) {
  const auto c = mp::ReadContainer(path);
  for (const auto& [k, v] : c.meta()) std::printf("meta %s = %s\n", k.c_str(), v.c_str());
  for (const auto& [name, e] : c.entries()) {
    std::string shape;
    for (std::size_t i = 0; i < e.shape.size(); ++i) {
      shape += (i ? "x" : "") + std::to_string(e.shape[i]);
    }
    std::printf("%-36s %s [%s]\n", name.c_str(), mp::ToString(e.dtype).c_str(), shape.c_str());
  }
  return 0;
}

struct ToyArgs {
  std::string config;
  std::string out;
  std::string out_dir;
  std::string model, init, teacher, student;
  std::string role = "teacher";
  std::string strategy = "skip";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> n_samples;
  bool json = false;
};

mp::toy::ExperimentConfig LoadConfig(const ToyArgs& a) {
  return mp::toy::ExperimentConfig::FromJson(ReadJsonFile(a.config));
}

int RunToyBuild(const ToyArgs& a) {
  const auto config = LoadConfig(a);
  const auto streams = mp::toy::DeriveSeeds(a.seed.value_or(config.base_seed));
  const auto pair = mp::toy::MakePair(config, streams);
  fs::create_directories(a.out_dir);
  mp::WriteContainer(mp::toy::ModelToContainer(pair.teacher), fs::path(a.out_dir) / "teacher.mpx");
  mp::WriteContainer(mp::toy::ModelToContainer(pair.student), fs::path(a.out_dir) / "student.mpx");
  std::printf("wrote %s/teacher.mpx (depth %zu, d %zu) and %s/student.mpx (depth %zu, d %zu)\n",
              a.out_dir.c_str(), pair.teacher.depth(), pair.teacher.d_model,
              a.out_dir.c_str(), pair.student.depth(), pair.student.d_model);
  return 0;
}

int RunToyTrain(const ToyArgs& a) {
  const auto config = LoadConfig(a);
  const auto streams = mp::toy::DeriveSeeds(a.seed.value_or(config.base_seed));
  const auto task = mp::toy::MakeTask(config, streams);
  const auto model = mp::toy::ModelFromContainer(mp::ReadContainer(a.model));
  const bool teacher = a.role == "teacher";
  if (!teacher && a.role != "student") throw mp::ConfigError("--role must be teacher or student");

  mp::toy::PeftState state;
  if (!a.init.empty()) {
    const auto c = mp::ReadContainer(a.init);
    auto head = mp::HeadFromContainer(c);
    if (!head) throw mp::FormatError("'" + a.init + "' has no task head");
    state = mp::toy::PeftState::From(mp::ModulesFromContainer(c), *head);
  } else {
    const std::size_t width =
        config.peft == mp::PeftKind::kAdapter ? config.bottleneck : config.rank;
    state = mp::toy::PeftState::Fresh(model, config.peft, width, config.lora_scaling,
                                      config.n_classes,
                                      teacher ? streams.teacher_init : streams.student_init);
  }
  mp::toy::TrainOptions options{
      a.epochs.value_or(teacher ? config.teacher_epochs : config.student_epochs),
      config.learning_rate, config.batch_size,
      teacher ? streams.teacher_order : streams.student_order};
  const auto log = mp::toy::TrainPeft(model, state, task, options);

  mp::TensorContainer out;
  mp::StoreModules(state.modules(), out, mp::DType::kF64);
  mp::StoreHead(state.head, out, mp::DType::kF64);
  mp::WriteContainer(out, a.out);
  nlohmann::json j = {{"initial_loss", log.initial_loss},
                      {"initial_val_accuracy", log.initial_val_accuracy},
                      {"epoch_loss", log.epoch_loss},
                      {"val_accuracy", log.val_accuracy}};
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

int RunToyCapture(const ToyArgs& a) {
  const auto config = LoadConfig(a);
  const auto streams = mp::toy::DeriveSeeds(a.seed.value_or(config.base_seed));
  const auto task = mp::toy::MakeTask(config, streams);
  const auto teacher = mp::toy::ModelFromContainer(mp::ReadContainer(a.teacher));
  const auto student = mp::toy::ModelFromContainer(mp::ReadContainer(a.student));
  const auto plan = mp::PlanLayers(teacher.depth(), student.depth(),
                                   mp::ParseLayerStrategy(a.strategy), config.skip_offset);
  const auto samples = mp::toy::CaptureSamples(teacher, nullptr, student, nullptr, plan,
                                               task.train_x, config.seq_len,
                                               a.n_samples.value_or(config.n_samples),
                                               mp::toy::CapturePointFor(config.peft));
  mp::WriteContainer(mp::SamplesToContainer(samples), a.out);
  std::printf("captured %zu samples over %zu layers (%zu -> %zu dims) to %s\n",
              samples.sample_count(), samples.per_layer.size(), samples.student_dim(),
              samples.teacher_dim(), a.out.c_str());
  return 0;
}

int RunToyExperiment(const ToyArgs& a) {
  auto config = LoadConfig(a);
  if (a.seeds) {
    if (*a.seeds == 0) throw mp::ConfigError("--seeds must be positive");
    config.seeds = *a.seeds;
  }
  if (a.seed) config.base_seed = *a.seed;
  const auto report = mp::toy::RunExperiment(config);
  const std::string canonical = report.ToCanonicalJson();
  if (!a.out.empty()) WriteText(a.out, canonical + "\n");
  if (a.json) {
    std::printf("%s\n", canonical.c_str());
  } else {
    std::fputs(report.ToTable().c_str(), stdout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer PEFT modules (adapters, LoRA) from a teacher to a student model"};
  app.require_subcommand(1);

  MapLayersArgs map_args;
  auto* map_cmd = app.add_subcommand("map-layers", "Select or average teacher layers for a shallower student");
  map_cmd->add_option("--modules", map_args.modules, "Teacher module container")
      ->required()->check(CLI::ExistingFile);
  map_cmd->add_option("--student-layers", map_args.student_layers, "Student layer count")
      ->required()->check(CLI::PositiveNumber);
  map_cmd->add_option("--strategy", map_args.strategy, "skip or avg")
      ->check(CLI::IsMember({"skip", "avg"}));
  map_cmd->add_option("--skip-offset", map_args.skip_offset,
                      "Layer kept within each group for skip (default: last)");
  map_cmd->add_option("--out", map_args.out, "Output module container")->required();

  AlignArgs align_args;
  auto* align_cmd = app.add_subcommand("align", "Prune and reorder modules to a narrower student by correlation + assignment");
  align_cmd->add_option("--modules", align_args.modules, "Module container at teacher width")
      ->required()->check(CLI::ExistingFile);
  align_cmd->add_option("--samples", align_args.samples, "Matched sample container")
      ->required()->check(CLI::ExistingFile);
  align_cmd->add_option("--out", align_args.out, "Output module container")->required();
  align_cmd->add_option("--report", align_args.report, "Write the alignment report as JSON");

  TransferArgs transfer_args;
  auto* transfer_cmd = app.add_subcommand("transfer", "Layer mapping plus alignment in one step");
  transfer_cmd->add_option("--modules", transfer_args.modules, "Teacher module container")
      ->required()->check(CLI::ExistingFile);
  transfer_cmd->add_option("--strategy", transfer_args.strategy, "skip or avg")
      ->check(CLI::IsMember({"skip", "avg"}));
  transfer_cmd->add_option("--skip-offset", transfer_args.skip_offset,
                           "Layer kept within each group for skip (default: last)");
  transfer_cmd->add_option("--student-layers", transfer_args.student_layers,
                           "Student layer count (default: teacher's)");
  transfer_cmd->add_option("--student-dim", transfer_args.student_dim,
                           "Student hidden size (default: teacher's)");
  transfer_cmd->add_option("--samples", transfer_args.samples,
                           "Matched samples, required when the hidden size changes")
      ->check(CLI::ExistingFile);
  transfer_cmd->add_option("--out", transfer_args.out, "Output module container")->required();

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "List the tensors and metadata in a container");
  inspect_cmd->add_option("file", inspect_path, "Container file")->required()->check(CLI::ExistingFile);

  auto* toy_cmd = app.add_subcommand("toy", "Desk-scale teacher/student harness");
  toy_cmd->require_subcommand(1);
  ToyArgs toy_args;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", toy_args.config, "Experiment config JSON")
        ->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", toy_args.seed, "Seed (default: config base_seed)");
  };
  auto* build_cmd = toy_cmd->add_subcommand("build", "Build a teacher/student base-model pair");
  add_config(build_cmd);
  build_cmd->add_option("--out-dir", toy_args.out_dir, "Directory for teacher.mpx and student.mpx")->required();

  auto* train_cmd = toy_cmd->add_subcommand("train", "PEFT-train a toy model on the task");
  add_config(train_cmd);
  train_cmd->add_option("--model", toy_args.model, "Base model container")
      ->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--init", toy_args.init, "Initial modules + head (default: fresh)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--role", toy_args.role, "teacher or student (picks epochs and seeds)")
      ->check(CLI::IsMember({"teacher", "student"}));
  train_cmd->add_option("--epochs", toy_args.epochs, "Override the epoch count");
  train_cmd->add_option("--out", toy_args.out, "Output modules + head container")->required();

  auto* capture_cmd = toy_cmd->add_subcommand("capture", "Capture matched hidden states for alignment");
  add_config(capture_cmd);
  capture_cmd->add_option("--teacher", toy_args.teacher, "Teacher model container")
      ->required()->check(CLI::ExistingFile);
  capture_cmd->add_option("--student", toy_args.student, "Student model container")
      ->required()->check(CLI::ExistingFile);
  capture_cmd->add_option("--strategy", toy_args.strategy, "Layer pairing: skip or avg")
      ->check(CLI::IsMember({"skip", "avg"}));
  capture_cmd->add_option("--n-samples", toy_args.n_samples,
                          "Token positions to capture (default: config n_samples)")
      ->check(CLI::PositiveNumber);
  capture_cmd->add_option("--out", toy_args.out, "Output sample container")->required();

  auto* experiment_cmd = toy_cmd->add_subcommand("experiment", "Teacher PEFT, transfer, student PEFT vs baseline");
  add_config(experiment_cmd);
  experiment_cmd->add_option("--seeds", toy_args.seeds, "Number of seeds (overrides config)");
  experiment_cmd->add_option("--out", toy_args.out, "Write the canonical JSON report here");
  experiment_cmd->add_flag("--json", toy_args.json, "Print JSON instead of the table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const int threads = mp::ThreadsFromEnvironment();
    if (*map_cmd) return RunMapLayers(map_args);
    if (*align_cmd) return RunAlign(align_args, threads);
    if (*transfer_cmd) return RunTransfer(transfer_args, threads);
    if (*inspect_cmd) return RunInspect(inspect_path);
    if (*build_cmd) return RunToyBuild(toy_args);
    if (*train_cmd) return RunToyTrain(toy_args);
    if (*capture_cmd) return RunToyCapture(toy_args);
    if (*experiment_cmd) return RunToyExperiment(toy_args);
  } catch (const mp::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
