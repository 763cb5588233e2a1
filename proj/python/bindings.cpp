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

// Python bindings for the transfer pipeline.

#include <optional>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "moduleport/alignment.hpp"
#include "moduleport/archive.hpp"
#include "moduleport/container.hpp"
#include "moduleport/error.hpp"
#include "moduleport/experiment.hpp"
#include "moduleport/layer_map.hpp"
#include "moduleport/lsa.hpp"
#include "moduleport/matrix.hpp"

namespace py = pybind11;
namespace mp = moduleport;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

mp::Matrix ToMatrix(const Array& a) {
  if (a.ndim() != 2) throw mp::ShapeError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return mp::Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array ToArray(const mp::Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

py::tuple ToTuple(const mp::AssignmentSolution& s) {
  return py::make_tuple(s.mapping, s.total_score);
}

std::string Transfer(const std::string& modules, const std::string& out,
                     std::optional<std::size_t> student_layers,
                     std::optional<std::size_t> student_dim, const std::string& strategy,
                     std::optional<std::size_t> skip_offset,
                     std::optional<std::string> samples, int threads) {
  const auto in = mp::ReadContainer(modules);
  const auto set = mp::ModulesFromContainer(in);
  const auto plan = mp::PlanLayers(set.num_layers(), student_layers.value_or(set.num_layers()),
                                   mp::ParseLayerStrategy(strategy), skip_offset);
  std::optional<mp::SampleBatch> batch;
  if (samples) batch = mp::SamplesFromContainer(mp::ReadContainer(*samples));
  const auto moved = mp::Transfer(set, plan, batch ? &*batch : nullptr,
                                  student_dim.value_or(set.d_model()), threads);
  mp::WriteContainer(mp::ModulesToContainer(moved), out);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Transfer PEFT modules between teacher and student models";

  auto error = py::register_exception<mp::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<mp::ConfigError>(m, "ConfigError", error.ptr());
  auto shape = py::register_exception<mp::ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<mp::WideningError>(m, "WideningError", shape.ptr());
  py::register_exception<mp::InsufficientSamplesError>(m, "InsufficientSamplesError", shape.ptr());
  py::register_exception<mp::NumericError>(m, "NumericError", error.ptr());
  py::register_exception<mp::SizeLimitError>(m, "SizeLimitError", error.ptr());
  py::register_exception<mp::IoError>(m, "IoError", error.ptr());
  py::register_exception<mp::FormatError>(m, "FormatError", error.ptr());

  m.def("pearson", [](const Array& xs, const Array& xt, int threads) {
        return ToArray(mp::PearsonCorrelation(ToMatrix(xs), ToMatrix(xt), threads));
      },
      py::arg("xs"), py::arg("xt"), py::arg("threads") = 1,
      "Pearson correlation between every column of xs and every column of xt.");

  m.def("solve_lsa", [](const Array& cost) { return ToTuple(mp::SolveLsa(ToMatrix(cost))); },
        py::arg("cost"), "Minimum-cost injective row->column assignment: (mapping, score).");
  m.def("brute_force_lsa",
        [](const Array& cost) { return ToTuple(mp::BruteForceLsa(ToMatrix(cost))); },
        py::arg("cost"), "Exhaustive reference solver for small problems.");

  m.def("align_layer", [](const Array& xs, const Array& xt, int threads) {
        return ToTuple(mp::AlignLayer(ToMatrix(xs), ToMatrix(xt), threads));
      },
      py::arg("xs"), py::arg("xt"), py::arg("threads") = 1,
      "Student->teacher dimension map maximising total correlation.");

  m.def("plan_layers",
        [](std::size_t teacher, std::size_t student, const std::string& strategy,
           std::optional<std::size_t> offset) {
          return mp::PlanLayers(teacher, student, mp::ParseLayerStrategy(strategy), offset).groups;
        },
        py::arg("teacher_layers"), py::arg("student_layers"), py::arg("strategy") = "skip",
        py::arg("skip_offset") = py::none(), "Teacher layer groups feeding each student layer.");

  m.def("transfer", &Transfer, py::arg("modules"), py::arg("out"),
        py::arg("student_layers") = py::none(), py::arg("student_dim") = py::none(),
        py::arg("strategy") = "skip", py::arg("skip_offset") = py::none(),
        py::arg("samples") = py::none(), py::arg("threads") = 1,
        "Map layers (and align, when widths differ) from container files.");

  m.def("run_experiment",
        [](const std::string& config_json) {
          const auto config = mp::toy::ExperimentConfig::FromJson(
              nlohmann::json::parse(config_json.empty() ? "{}" : config_json));
          py::gil_scoped_release release;
          return mp::toy::RunExperiment(config).ToCanonicalJson();
        },
        py::arg("config_json") = "{}", "Run the toy experiment; returns the canonical JSON report.");
}
