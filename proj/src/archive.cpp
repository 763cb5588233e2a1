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

#include "moduleport/archive.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "moduleport/error.hpp"

namespace moduleport {

namespace {

std::string LayerPrefix(std::size_t l) { return "layer_" + std::to_string(l) + "/"; }

std::size_t ParseCount(const TensorContainer& c, const std::string& key) {
  const std::string& text = c.GetMeta(key);
  std::size_t value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw FormatError("metadata '" + key + "' is not a count: '" + text + "'");
  }
  return value;
}

Matrix ExpectMatrix(const TensorContainer& c, const std::string& name, std::size_t rows,
                    std::size_t cols) {
  Matrix m = c.GetMatrix(name);
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError("tensor '" + name + "' is " + m.shape_string() + ", expected (" +
                     std::to_string(rows) + " x " + std::to_string(cols) + ")");
  }
  return m;
}

std::vector<double> ExpectVector(const TensorContainer& c, const std::string& name,
                                 std::size_t n) {
  auto v = c.GetVector(name);
  if (v.size() != n) {
    throw ShapeError("tensor '" + name + "' has " + std::to_string(v.size()) +
                     " entries, expected " + std::to_string(n));
  }
  return v;
}

std::string FormatGroups(const LayerMapPlan& plan) {
  std::string out;
  for (std::size_t l = 0; l < plan.groups.size(); ++l) {
    if (l) out += ';';
    for (std::size_t k = 0; k < plan.groups[l].size(); ++k) {
      if (k) out += ',';
      out += std::to_string(plan.groups[l][k]);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> ParseGroups(const std::string& text) {
  std::vector<std::vector<std::size_t>> groups;
  std::stringstream outer(text);
  std::string group;
  while (std::getline(outer, group, ';')) {
    std::vector<std::size_t> members;
    std::stringstream inner(group);
    std::string item;
    while (std::getline(inner, item, ',')) {
      std::size_t v = 0;
      const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || end != item.data() + item.size()) {
        throw FormatError("bad layer group list '" + text + "'");
      }
      members.push_back(v);
    }
    groups.push_back(std::move(members));
  }
  return groups;
}

}  // namespace

std::string FormatDouble(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double ParseDouble(const std::string& text) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw FormatError("not a number: '" + text + "'");
  }
  return v;
}

void StoreModules(const PeftModuleSet& set, TensorContainer& out, DType dtype) {
  out.SetMeta("kind", ToString(set.kind()));
  out.SetMeta("d_model", std::to_string(set.d_model()));
  out.SetMeta("num_layers", std::to_string(set.num_layers()));
  if (set.kind() == PeftKind::kAdapter) {
    out.SetMeta("bottleneck", std::to_string(set.width()));
    for (std::size_t l = 0; l < set.num_layers(); ++l) {
      const AdapterParams& a = set.adapter(l);
      const std::string p = LayerPrefix(l) + "adapter/";
      out.AddMatrix(p + "down.weight", a.down_weight, dtype);
      out.AddVector(p + "down.bias", a.down_bias, dtype);
      out.AddMatrix(p + "up.weight", a.up_weight, dtype);
      out.AddVector(p + "up.bias", a.up_bias, dtype);
    }
  } else {
    out.SetMeta("rank", std::to_string(set.width()));
    out.SetMeta("scaling", FormatDouble(set.lora_scaling()));
    for (std::size_t l = 0; l < set.num_layers(); ++l) {
      const LoraLayer& lo = set.lora(l);
      const std::string p = LayerPrefix(l) + "attn/";
      out.AddMatrix(p + "query/lora_A", lo.query.a_weight, dtype);
      out.AddMatrix(p + "query/lora_B", lo.query.b_weight, dtype);
      out.AddMatrix(p + "value/lora_A", lo.value.a_weight, dtype);
      out.AddMatrix(p + "value/lora_B", lo.value.b_weight, dtype);
    }
  }
}

TensorContainer ModulesToContainer(const PeftModuleSet& set, DType dtype) {
  TensorContainer c;
  StoreModules(set, c, dtype);
  return c;
}

PeftModuleSet ModulesFromContainer(const TensorContainer& c) {
  const PeftKind kind = ParsePeftKind(c.GetMeta("kind"));
  const std::size_t d = ParseCount(c, "d_model");
  const std::size_t layers = ParseCount(c, "num_layers");
  if (layers == 0) throw FormatError("module container declares zero layers");
  std::vector<PeftLayer> out;
  out.reserve(layers);
  if (kind == PeftKind::kAdapter) {
    const std::size_t b = ParseCount(c, "bottleneck");
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string p = LayerPrefix(l) + "adapter/";
      out.emplace_back(AdapterParams{ExpectMatrix(c, p + "down.weight", b, d),
                                     ExpectVector(c, p + "down.bias", b),
                                     ExpectMatrix(c, p + "up.weight", d, b),
                                     ExpectVector(c, p + "up.bias", d)});
    }
  } else {
    const std::size_t r = ParseCount(c, "rank");
    const double scaling = ParseDouble(c.GetMeta("scaling"));
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string p = LayerPrefix(l) + "attn/";
      out.emplace_back(LoraLayer{
          LoraParams{ExpectMatrix(c, p + "query/lora_A", r, d),
                     ExpectMatrix(c, p + "query/lora_B", d, r), scaling},
          LoraParams{ExpectMatrix(c, p + "value/lora_A", r, d),
                     ExpectMatrix(c, p + "value/lora_B", d, r), scaling}});
    }
  }
  return PeftModuleSet(std::move(out));
}

void StoreHead(const TaskHead& head, TensorContainer& out, DType dtype) {
  if (head.bias.size() != head.weight.cols()) {
    throw ShapeError("head bias length does not match head weight columns");
  }
  out.AddMatrix("head/weight", head.weight, dtype);
  out.AddVector("head/bias", head.bias, dtype);
}

std::optional<TaskHead> HeadFromContainer(const TensorContainer& c) {
  if (!c.Contains("head/weight")) return std::nullopt;
  TaskHead head{c.GetMatrix("head/weight"), c.GetVector("head/bias")};
  if (head.bias.size() != head.weight.cols()) {
    throw ShapeError("head bias length does not match head weight columns");
  }
  return head;
}

TensorContainer SamplesToContainer(const SampleBatch& samples, DType dtype) {
  samples.Validate();
  TensorContainer c;
  c.SetMeta("num_layers", std::to_string(samples.per_layer.size()));
  c.SetMeta("sample_count", std::to_string(samples.sample_count()));
  if (samples.plan) {
    c.SetMeta("strategy", ToString(samples.plan->strategy));
    c.SetMeta("stride", std::to_string(samples.plan->stride));
    c.SetMeta("groups", FormatGroups(*samples.plan));
  }
  for (std::size_t l = 0; l < samples.per_layer.size(); ++l) {
    c.AddMatrix(LayerPrefix(l) + "student", samples.per_layer[l].student, dtype);
    c.AddMatrix(LayerPrefix(l) + "teacher", samples.per_layer[l].teacher, dtype);
  }
  return c;
}

SampleBatch SamplesFromContainer(const TensorContainer& c) {
  const std::size_t layers = ParseCount(c, "num_layers");
  if (layers == 0) throw FormatError("sample container declares zero layers");
  SampleBatch batch;
  for (std::size_t l = 0; l < layers; ++l) {
    batch.per_layer.push_back(LayerSamples{c.GetMatrix(LayerPrefix(l) + "student"),
                                           c.GetMatrix(LayerPrefix(l) + "teacher")});
  }
  if (c.HasMeta("strategy")) {
    LayerMapPlan plan;
    plan.strategy = ParseLayerStrategy(c.GetMeta("strategy"));
    plan.stride = ParseCount(c, "stride");
    plan.groups = ParseGroups(c.GetMeta("groups"));
    batch.plan = std::move(plan);
  }
  if (c.HasMeta("sample_count") && ParseCount(c, "sample_count") != batch.sample_count()) {
    throw InconsistentShapeError("sample_count metadata disagrees with tensor rows");
  }
  batch.Validate();
  return batch;
}

nlohmann::json ToJson(const std::vector<LayerAlignmentSummary>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"layer", r.layer},
                   {"mean_selected_correlation", r.mean_selected},
                   {"min_selected_correlation", r.min_selected},
                   {"fraction_above_0.5", r.fraction_above_half},
                   {"dead_student_dims", r.dead_student_dims},
                   {"dead_teacher_dims", r.dead_teacher_dims}});
  }
  return out;
}

std::string FormatAlignmentTable(const std::vector<LayerAlignmentSummary>& rows) {
  std::string out = "layer  mean_corr  min_corr  frac>0.5  dead_s  dead_t\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%5zu  %9.4f  %8.4f  %8.3f  %6zu  %6zu\n", r.layer,
                  r.mean_selected, r.min_selected, r.fraction_above_half,
                  r.dead_student_dims, r.dead_teacher_dims);
    out += line;
  }
  return out;
}

}  // namespace moduleport
