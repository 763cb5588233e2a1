# Copyright 2026 The ModulePort Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Transfer PEFT modules (adapters, LoRA) from a teacher model to a student."""

import json as _json

from ._core import (
    ConfigError,
    Error,
    FormatError,
    InsufficientSamplesError,
    IoError,
    NumericError,
    ShapeError,
    SizeLimitError,
    WideningError,
    align_layer,
    brute_force_lsa,
    pearson,
    plan_layers,
    solve_lsa,
    transfer,
)
from ._core import run_experiment as _run_experiment


def run_experiment(config=None):
    """Runs the toy experiment and returns the report as a dict."""
    return _json.loads(_run_experiment(_json.dumps(config or {})))


__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "InsufficientSamplesError",
    "IoError",
    "NumericError",
    "ShapeError",
    "SizeLimitError",
    "WideningError",
    "align_layer",
    "brute_force_lsa",
    "pearson",
    "plan_layers",
    "run_experiment",
    "solve_lsa",
    "transfer",
]
