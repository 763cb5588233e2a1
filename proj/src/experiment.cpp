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

#include "moduleport/experiment.hpp"

#include <cstdio>
#include <set>

#include "moduleport/alignment.hpp"
#include "moduleport/error.hpp"

namespace moduleport::toy {

namespace {

using nlohmann::json;

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <class T>
void Read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

void ReadCount(const json& j, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned()) {
    throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
  }
  out = v.get<std::size_t>();
}

json MetricsJson(const RunMetrics& m) {
  return {{"initial_loss", m.initial_loss},
          {"initial_val_accuracy", m.initial_val_accuracy},
          {"final_val_accuracy", m.final_val_accuracy},
          {"epoch_loss", m.epoch_loss},
          {"val_accuracy", m.val_accuracy}};
}

RunMetrics ToMetrics(const TrainingLog& log) {
  RunMetrics m;
  m.initial_loss = log.initial_loss;
  m.initial_val_accuracy = log.initial_val_accuracy;
  m.final_val_accuracy =
      log.val_accuracy.empty() ? log.initial_val_accuracy : log.val_accuracy.back();
  m.epoch_loss = log.epoch_loss;
  m.val_accuracy = log.val_accuracy;
  return m;
}

std::size_t Width(const ExperimentConfig& c) {
  return c.peft == PeftKind::kAdapter ? c.bottleneck : c.rank;
}

TrainOptions Options(const ExperimentConfig& c, std::size_t epochs, std::uint64_t order) {
  return TrainOptions{epochs, c.learning_rate, c.batch_size, order};
}

double Mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

ExperimentConfig ExperimentConfig::Defaults(PairMode mode) {
  ExperimentConfig c;
  c.mode = mode;
  if (mode == PairMode::kIncompatible) {
    c.teacher_dim = 48;
    c.student_dim = 32;
    c.strategies = {LayerStrategy::kSkip};
  }
  return c;
}

ExperimentConfig ExperimentConfig::FromJson(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::set<std::string> kKeys = {
      "mode", "peft", "teacher_depth", "student_depth", "teacher_dim", "student_dim",
      "d_in", "seq_len", "n_classes", "n_train", "n_val", "ground_truth", "bottleneck",
      "rank", "lora_scaling", "teacher_epochs", "student_epochs", "learning_rate",
      "batch_size", "strategies", "skip_offset", "n_samples", "capture_with_peft",
      "seeds", "base_seed"};
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  std::string mode = "matching";
  Read(j, "mode", mode);
  ExperimentConfig c = Defaults(ParsePairMode(mode));
  std::string text;
  if (j.contains("peft")) {
    Read(j, "peft", text);
    c.peft = ParsePeftKind(text);
  }
  if (j.contains("ground_truth")) {
    Read(j, "ground_truth", text);
    if (text == "mlp") {
      c.ground_truth = GroundTruth::kMlp;
    } else if (text == "linear") {
      c.ground_truth = GroundTruth::kLinear;
    } else {
      throw ConfigError("ground_truth must be 'mlp' or 'linear'");
    }
  }
  ReadCount(j, "teacher_depth", c.teacher_depth);
  ReadCount(j, "student_depth", c.student_depth);
  ReadCount(j, "teacher_dim", c.teacher_dim);
  ReadCount(j, "student_dim", c.student_dim);
  ReadCount(j, "d_in", c.d_in);
  ReadCount(j, "seq_len", c.seq_len);
  ReadCount(j, "n_classes", c.n_classes);
  ReadCount(j, "n_train", c.n_train);
  ReadCount(j, "n_val", c.n_val);
  ReadCount(j, "bottleneck", c.bottleneck);
  ReadCount(j, "rank", c.rank);
  ReadCount(j, "teacher_epochs", c.teacher_epochs);
  ReadCount(j, "student_epochs", c.student_epochs);
  ReadCount(j, "batch_size", c.batch_size);
  ReadCount(j, "n_samples", c.n_samples);
  ReadCount(j, "seeds", c.seeds);
  Read(j, "lora_scaling", c.lora_scaling);
  Read(j, "learning_rate", c.learning_rate);
  Read(j, "capture_with_peft", c.capture_with_peft);
  Read(j, "base_seed", c.base_seed);
  if (j.contains("skip_offset") && !j.at("skip_offset").is_null()) {
    std::size_t offset = 0;
    ReadCount(j, "skip_offset", offset);
    c.skip_offset = offset;
  }
  if (j.contains("strategies")) {
    std::vector<std::string> names;
    Read(j, "strategies", names);
    if (names.empty()) throw ConfigError("strategies must not be empty");
    c.strategies.clear();
    for (const auto& n : names) c.strategies.push_back(ParseLayerStrategy(n));
  }
  if (c.seeds == 0) throw ConfigError("seeds must be positive");
  if (c.n_samples < 2) throw ConfigError("n_samples must be at least 2");
  return c;
}

json ExperimentConfig::ToJson() const {
  std::vector<std::string> names;
  for (auto s : strategies) names.push_back(ToString(s));
  return {{"mode", ToString(mode)},
          {"peft", ToString(peft)},
          {"teacher_depth", teacher_depth},
          {"student_depth", student_depth},
          {"teacher_dim", teacher_dim},
          {"student_dim", student_dim},
          {"d_in", d_in},
          {"seq_len", seq_len},
          {"n_classes", n_classes},
          {"n_train", n_train},
          {"n_val", n_val},
          {"ground_truth", ground_truth == GroundTruth::kMlp ? "mlp" : "linear"},
          {"bottleneck", bottleneck},
          {"rank", rank},
          {"lora_scaling", lora_scaling},
          {"teacher_epochs", teacher_epochs},
          {"student_epochs", student_epochs},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"strategies", names},
          {"skip_offset", skip_offset ? json(*skip_offset) : json(nullptr)},
          {"n_samples", n_samples},
          {"capture_with_peft", capture_with_peft},
          {"seeds", seeds},
          {"base_seed", base_seed}};
}

SeedStreams DeriveSeeds(std::uint64_t seed) {
  const std::uint64_t root = SplitMix64(seed);
  return SeedStreams{SplitMix64(root ^ 1), SplitMix64(root ^ 2), SplitMix64(root ^ 3),
                     SplitMix64(root ^ 4), SplitMix64(root ^ 5), SplitMix64(root ^ 6)};
}

ToyTask MakeTask(const ExperimentConfig& config, const SeedStreams& seeds) {
  TaskConfig t;
  t.d_in = config.d_in;
  t.seq_len = config.seq_len;
  t.n_classes = config.n_classes;
  t.n_train = config.n_train;
  t.n_val = config.n_val;
  t.ground_truth = config.ground_truth;
  t.seed = seeds.task;
  return ToyTask::Generate(t);
}

ToyPair MakePair(const ExperimentConfig& config, const SeedStreams& seeds) {
  PairConfig p;
  p.mode = config.mode;
  p.teacher_depth = config.teacher_depth;
  p.student_depth = config.student_depth;
  p.teacher_dim = config.teacher_dim;
  p.student_dim = config.student_dim;
  p.d_in = config.d_in;
  p.attention = config.peft == PeftKind::kLora;
  p.copy_offset = config.skip_offset;
  p.seed = seeds.model;
  return BuildPair(p);
}

PeftState TransferState(const ExperimentConfig& config, const ToyPair& pair,
                        const PeftState& teacher_state, LayerStrategy strategy,
                        const Matrix& sample_inputs, const PeftState* student_capture_state,
                        std::vector<LayerAlignmentSummary>* alignment) {
  const LayerMapPlan plan = PlanLayers(pair.teacher.depth(), pair.student.depth(), strategy,
                                       config.skip_offset);
  const PeftModuleSet teacher_modules = teacher_state.modules();
  const std::size_t d_student = pair.student.d_model;
  if (teacher_modules.d_model() == d_student) {
    return PeftState::From(Transfer(teacher_modules, plan, nullptr, d_student),
                           teacher_state.head);
  }

  const PeftState* student_capture = nullptr;
  const PeftState* teacher_capture = nullptr;
  if (config.capture_with_peft) {
    if (student_capture_state == nullptr) {
      throw ConfigError("capture_with_peft needs the student's initial PEFT state");
    }
    student_capture = student_capture_state;
    teacher_capture = &teacher_state;
  }
  const SampleBatch samples = CaptureSamples(
      pair.teacher, teacher_capture, pair.student, student_capture, plan, sample_inputs,
      config.seq_len, config.n_samples, CapturePointFor(config.peft));
  const auto maps = AlignBatch(samples);
  if (alignment) *alignment = SummarizeAlignment(samples, maps);

  PeftModuleSet modules = ApplyAlignment(RealizePlan(teacher_modules, plan), maps, d_student);
  // The head reads the last layer's output, which shares that layer's
  // adapter-input space.
  const auto& last = maps.back().mapping;
  TaskHead head{GatherRows(teacher_state.head.weight, last), teacher_state.head.bias};
  return PeftState::From(modules, std::move(head));
}

SeedResult RunSeed(const ExperimentConfig& config, std::uint64_t seed) {
  const SeedStreams streams = DeriveSeeds(seed);
  const ToyTask task = MakeTask(config, streams);
  const ToyPair pair = MakePair(config, streams);
  const std::size_t width = Width(config);

  SeedResult result;
  result.seed = seed;

  PeftState teacher_state = PeftState::Fresh(pair.teacher, config.peft, width,
                                             config.lora_scaling, config.n_classes,
                                             streams.teacher_init);
  result.teacher = ToMetrics(TrainPeft(pair.teacher, teacher_state, task,
                                       Options(config, config.teacher_epochs,
                                               streams.teacher_order)));

  const PeftState student_init = PeftState::Fresh(pair.student, config.peft, width,
                                                  config.lora_scaling, config.n_classes,
                                                  streams.student_init);
  PeftState baseline = student_init;
  result.baseline = ToMetrics(TrainPeft(pair.student, baseline, task,
                                        Options(config, config.student_epochs,
                                                streams.student_order)));
  result.baseline_gap_to_teacher =
      result.baseline.final_val_accuracy - result.teacher.final_val_accuracy;

  for (LayerStrategy strategy : config.strategies) {
    TransferOutcome outcome;
    outcome.strategy = strategy;
    PeftState tm = TransferState(config, pair, teacher_state, strategy, task.train_x,
                                 &student_init, &outcome.alignment);
    outcome.metrics = ToMetrics(TrainPeft(pair.student, tm, task,
                                          Options(config, config.student_epochs,
                                                  streams.student_order)));
    outcome.delta_vs_baseline =
        outcome.metrics.final_val_accuracy - result.baseline.final_val_accuracy;
    outcome.gap_to_teacher =
        outcome.metrics.final_val_accuracy - result.teacher.final_val_accuracy;
    result.transfers.push_back(std::move(outcome));
  }
  return result;
}

ExperimentReport RunExperiment(const ExperimentConfig& config) {
  ExperimentReport report;
  report.config = config;
  for (std::size_t s = 0; s < config.seeds; ++s) {
    report.seeds.push_back(RunSeed(config, config.base_seed + s));
  }
  return report;
}

json ExperimentReport::ToJson() const {
  json seeds_json = json::array();
  std::vector<double> teacher_acc, baseline_acc, baseline_loss;
  for (const auto& s : seeds) {
    json transfers = json::object();
    for (const auto& t : s.transfers) {
      json entry = {{"metrics", MetricsJson(t.metrics)},
                    {"delta_vs_baseline", t.delta_vs_baseline},
                    {"gap_to_teacher", t.gap_to_teacher}};
      if (!t.alignment.empty()) entry["alignment"] = moduleport::ToJson(t.alignment);
      transfers[ToString(t.strategy)] = entry;
    }
    seeds_json.push_back({{"seed", s.seed},
                          {"teacher", MetricsJson(s.teacher)},
                          {"baseline", MetricsJson(s.baseline)},
                          {"baseline_gap_to_teacher", s.baseline_gap_to_teacher},
                          {"transfer", transfers}});
    teacher_acc.push_back(s.teacher.final_val_accuracy);
    baseline_acc.push_back(s.baseline.final_val_accuracy);
    baseline_loss.push_back(s.baseline.initial_loss);
  }

  json summary = {{"teacher_mean_val_accuracy", Mean(teacher_acc)},
                  {"baseline_mean_val_accuracy", Mean(baseline_acc)},
                  {"baseline_mean_initial_loss", Mean(baseline_loss)},
                  {"baseline_gap_to_teacher", Mean(baseline_acc) - Mean(teacher_acc)}};
  json per_strategy = json::object();
  for (std::size_t k = 0; k < config.strategies.size(); ++k) {
    std::vector<double> acc, loss, delta;
    std::size_t lower_loss = 0;
    for (const auto& s : seeds) {
      const auto& t = s.transfers.at(k);
      acc.push_back(t.metrics.final_val_accuracy);
      loss.push_back(t.metrics.initial_loss);
      delta.push_back(t.delta_vs_baseline);
      lower_loss += t.metrics.initial_loss < s.baseline.initial_loss ? 1 : 0;
    }
    per_strategy[ToString(config.strategies[k])] = {
        {"mean_val_accuracy", Mean(acc)},
        {"mean_initial_loss", Mean(loss)},
        {"mean_delta_vs_baseline", Mean(delta)},
        {"gap_to_teacher", Mean(acc) - Mean(teacher_acc)},
        {"seeds_with_lower_initial_loss", lower_loss}};
  }
  summary["transfer"] = per_strategy;

  json out = {{"config", config.ToJson()}, {"seeds", seeds_json}, {"summary", summary}};
  if (config.mode == PairMode::kMatching) {
    out["note"] =
        "matching students are built by copying teacher blocks, standing in for "
        "task-agnostic distillation";
  }
  return out;
}

std::string ExperimentReport::ToCanonicalJson() const { return ToJson().dump(); }

std::string ExperimentReport::ToTable() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "mode=%s peft=%s seeds=%zu\n", ToString(config.mode).c_str(),
                ToString(config.peft).c_str(), seeds.size());
  out += line;
  out += "seed  teacher_acc  baseline_acc  baseline_loss0";
  for (auto s : config.strategies) {
    const std::string n = ToString(s);
    std::snprintf(line, sizeof(line), "  tm_%s_acc  tm_%s_loss0  delta_%s", n.c_str(), n.c_str(),
                  n.c_str());
    out += line;
  }
  out += '\n';
  for (const auto& s : seeds) {
    std::snprintf(line, sizeof(line), "%4llu  %11.4f  %12.4f  %14.4f",
                  static_cast<unsigned long long>(s.seed), s.teacher.final_val_accuracy,
                  s.baseline.final_val_accuracy, s.baseline.initial_loss);
    out += line;
    for (const auto& t : s.transfers) {
      std::snprintf(line, sizeof(line), "  %10.4f  %11.4f  %+8.4f", t.metrics.final_val_accuracy,
                    t.metrics.initial_loss, t.delta_vs_baseline);
      out += line;
    }
    out += '\n';
  }
  const json summary = ToJson()["summary"];
  std::snprintf(line, sizeof(line), "mean  %11.4f  %12.4f  %14.4f",
                summary["teacher_mean_val_accuracy"].get<double>(),
                summary["baseline_mean_val_accuracy"].get<double>(),
                summary["baseline_mean_initial_loss"].get<double>());
  out += line;
  for (auto s : config.strategies) {
    const json& t = summary["transfer"][ToString(s)];
    std::snprintf(line, sizeof(line), "  %10.4f  %11.4f  %+8.4f",
                  t["mean_val_accuracy"].get<double>(), t["mean_initial_loss"].get<double>(),
                  t["mean_delta_vs_baseline"].get<double>());
    out += line;
  }
  out += '\n';
  return out;
}

}  // namespace moduleport::toy
