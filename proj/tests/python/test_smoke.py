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

import itertools

import numpy as np
import pytest

import moduleport


def test_pearson_hand_value():
    xs = np.array([[1.0], [2.0], [3.0], [4.0]])
    xt = np.array([[1.0], [3.0], [2.0], [4.0]])
    assert moduleport.pearson(xs, xt)[0, 0] == pytest.approx(0.8, abs=1e-15)


def test_pearson_matches_numpy():
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(64, 5))
    xt = rng.normal(size=(64, 7))
    expect = np.corrcoef(xs.T, xt.T)[:5, 5:]
    np.testing.assert_allclose(moduleport.pearson(xs, xt), expect, atol=1e-12)


def test_lsa_against_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(50):
        rows, cols = sorted(int(v) for v in rng.integers(1, 6, size=2))
        cost = rng.uniform(-1, 1, size=(rows, cols))
        mapping, score = moduleport.solve_lsa(cost)
        best = min(
            sum(cost[r, c] for r, c in enumerate(p))
            for p in itertools.permutations(range(cols), rows)
        )
        assert sum(cost[r, c] for r, c in enumerate(mapping)) == pytest.approx(best, abs=1e-12)
        assert score == pytest.approx(-best, abs=1e-12)
        assert moduleport.brute_force_lsa(cost)[1] == pytest.approx(score, abs=1e-12)


def test_align_layer_recovers_permutation():
    rng = np.random.default_rng(2)
    xs = rng.normal(size=(500, 8))
    perm = rng.permutation(8)
    xt = np.empty_like(xs)
    xt[:, perm] = xs
    mapping, _ = moduleport.align_layer(xs, xt)
    assert list(mapping) == list(perm)


def test_plan_layers():
    assert moduleport.plan_layers(12, 6, "skip", 1) == [[1], [3], [5], [7], [9], [11]]
    assert moduleport.plan_layers(4, 2, "avg") == [[0, 1], [2, 3]]
    with pytest.raises(moduleport.ConfigError):
        moduleport.plan_layers(5, 2)


def test_widening_is_a_distinct_error():
    rng = np.random.default_rng(3)
    with pytest.raises(moduleport.WideningError):
        moduleport.align_layer(rng.normal(size=(10, 4)), rng.normal(size=(10, 3)))


def test_missing_file(tmp_path):
    with pytest.raises(moduleport.IoError):
        moduleport.transfer(str(tmp_path / "nope.mpx"), str(tmp_path / "out.mpx"))


def test_run_experiment_small_and_deterministic():
    config = {"seeds": 1, "n_train": 256, "n_val": 128, "teacher_epochs": 1, "student_epochs": 1}
    first = moduleport.run_experiment(config)
    assert first == moduleport.run_experiment(config)
    assert len(first["seeds"]) == 1
    assert "skip" in first["summary"]["transfer"]
