# Copyright 2024 The errest Authors
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

import math

import numpy as np
import pytest

from errest.estimation.config import LocalizationConfig, SolverConfig
from errest.estimation.core_algos import (
    FiniteTaskClass,
    GapOrientation,
    ParametricTaskClass,
    PointwiseBound,
    SplitOrdering,
    StopReason,
    localize,
    max_error_bound,
    pointwise_u,
    split_sample,
    sup_parametric,
)
from errest.estimation.errors import (
    EmptyClassError,
    EmptyLocalizationError,
    InfeasibleConstraintError,
    SolverTimeoutError,
)
from errest.estimation.oracles import brute_max_error


def _finite_bound(theta_def, u_values):
    """Zero-width bound whose gap theta_def - theta_err equals u."""
    theta_def = np.asarray(theta_def, dtype=np.float64)
    return PointwiseBound.from_arrays(theta_def, theta_def - np.asarray(u_values), b=0.0)


def _parabola_bound():
    return PointwiseBound(
        theta_def=lambda points: 1.0 - (points[:, 0] - 0.3) ** 2,
        theta_err=lambda points: np.zeros(points.shape[0]),
        b_width=lambda points, delta: 0.0,
    )


@pytest.mark.parametrize(
    "b, theta_def, theta_err, expected",
    [(0.5, 0.2, 0.2, 0.5), (0.0, 1.0, 0.4, 0.6), (0.34616604, 0.1, 0.3, 0.14616604)],
)
def test_pointwise_u(b, theta_def, theta_err, expected):
    pb = PointwiseBound.from_arrays([theta_def], [theta_err], b=b)
    assert pointwise_u(pb, 0, 0.05, FiniteTaskClass(1)) == pytest.approx(expected)


def test_pointwise_u_orientations_and_domain():
    pb = PointwiseBound.from_arrays([0.1], [0.3], b=0.0, orientation=GapOrientation.ERR_MINUS_DEF)
    assert pointwise_u(pb, 0, 0.05) == pytest.approx(0.2)
    pb = PointwiseBound.from_arrays([0.3], [0.1], b=0.0, orientation=GapOrientation.ABSOLUTE)
    assert pointwise_u(pb, 0, 0.05) == pytest.approx(0.2)
    with pytest.raises(ValueError, match="outside the class"):
        pointwise_u(pb, 3, 0.05, FiniteTaskClass(1))


def test_pointwise_u_delta_dependent_width():
    pb = PointwiseBound.from_arrays([0.0, 0.0], [0.0, 0.0], b=lambda delta: np.array([1.0, 2.0]) * math.log(1 / delta))
    assert pointwise_u(pb, 1, math.exp(-1.0)) == pytest.approx(2.0)


def test_max_error_bound_finite():
    assert max_error_bound(FiniteTaskClass(2), _finite_bound([0, 0], [0.3, 0.7]), 0.1) == (pytest.approx(0.7), 1)
    assert max_error_bound(FiniteTaskClass(1), _finite_bound([0], [0.42]), 0.1) == (pytest.approx(0.42), 0)
    assert max_error_bound(FiniteTaskClass(3), _finite_bound([0, 0, 0], [0.1, 0.9, 0.9]), 0.1)[1] == 1


def test_max_error_bound_matches_linear_scan():
    values = np.random.default_rng(3).standard_normal(500)
    xi, argmax = max_error_bound(FiniteTaskClass(500), _finite_bound(np.zeros(500), values), 0.1)
    assert (xi, argmax) == brute_max_error(values)


def test_max_error_bound_parametric():
    xi, argmax = max_error_bound(ParametricTaskClass([0.0], [1.0]), _parabola_bound(), 0.1)
    assert xi == pytest.approx(1.0, abs=1e-3)
    assert argmax[0] == pytest.approx(0.3, abs=1e-3)


def test_empty_finite_class_rejected():
    with pytest.raises(EmptyClassError):
        FiniteTaskClass(0)


def test_localize_finite_trace():
    pb = _finite_bound([0.5, -0.9], [0.2, 0.8])
    trace = localize(FiniteTaskClass(2), pb, c=0.0, delta=0.1)
    assert trace.xi_sequence == pytest.approx([0.8, 0.2, 0.2])
    assert trace.stop_reason is StopReason.NON_DECREASING
    assert trace.final == pytest.approx(0.2)
    assert list(trace.contains(np.arange(2))) == [True, False]
    assert trace.argmax_sequence[0] == 1


def test_localize_vacuous_lower_bound():
    pb = _finite_bound([0.5, -0.9, 0.1], [0.2, 0.8, 0.4])
    trace = localize(FiniteTaskClass(3), pb, c=-1e6, delta=0.1)
    assert trace.xi_sequence == pytest.approx([0.8, 0.8])
    assert trace.iterations == 1
    assert np.all(trace.contains(np.arange(3)))


def test_localize_singleton_class():
    trace = localize(FiniteTaskClass(1), _finite_bound([0.0], [0.42]), c=0.0, delta=0.1)
    assert trace.xi_sequence == pytest.approx([0.42, 0.42])


def test_localize_non_increasing_and_empty():
    rng = np.random.default_rng(0)
    theta_def = rng.uniform(-1, 1, 50)
    trace = localize(FiniteTaskClass(50), _finite_bound(theta_def, rng.uniform(0, 1, 50)), c=0.0, delta=0.1)
    assert np.all(np.diff(trace.xi_sequence) <= 0)

    with pytest.raises(EmptyLocalizationError):
        localize(FiniteTaskClass(2), _finite_bound([-2.0, -3.0], [0.5, 0.4]), c=0.0, delta=0.1)


def test_localize_parametric_respects_max_iterations():
    config = LocalizationConfig(max_iterations=3)
    trace = localize(ParametricTaskClass([0.0], [1.0]), _parabola_bound(), c=-10.0, delta=0.1, config=config)
    assert trace.iterations <= 3
    assert trace.final == pytest.approx(1.0, abs=1e-3)


def test_sup_parametric_examples():
    result = sup_parametric(lambda point: 3.0, [0.0, 0.0], [1.0, 1.0])
    assert result.value == pytest.approx(3.0)

    result = sup_parametric(lambda point: -((point[0] - 0.25) ** 2), [0.0], [1.0])
    assert result.value == pytest.approx(0.0, abs=1e-3)
    assert result.point[0] == pytest.approx(0.25, abs=1e-2)

    grid = np.linspace(0.0, 1.0, 100_001)
    result = sup_parametric(lambda point: float(np.sin(5 * point[0])), [0.0], [2.0], constraint=lambda p: p[0] <= 1)
    assert result.value == pytest.approx(np.max(np.sin(5 * grid)), abs=1e-3)
    assert result.point[0] <= 1.0


def test_sup_parametric_matches_dense_grid_on_random_objectives():
    rng = np.random.default_rng(7)
    grid = np.linspace(-2.0, 2.0, 100_000)
    for _ in range(20):
        amplitude = rng.uniform(0.2, 1.0, size=3)
        frequency = rng.uniform(0.5, 4.0, size=3)
        phase = rng.uniform(0.0, 2 * np.pi, size=3)

        def objective(point, amplitude=amplitude, frequency=frequency, phase=phase):
            x = np.asarray(point, dtype=np.float64)[..., :1]
            return np.sum(amplitude * np.sin(frequency * x + phase), axis=-1)

        oracle = float(np.max(objective(grid[:, None])))
        result = sup_parametric(objective, [-2.0], [2.0], batched=True, rng=np.random.default_rng(0))
        assert abs(result.value - oracle) <= 1e-3


def test_sup_parametric_errors():
    with pytest.raises(InfeasibleConstraintError):
        sup_parametric(lambda point: 0.0, [0.0], [1.0], constraint=lambda point: False)

    with pytest.raises(SolverTimeoutError):
        sup_parametric(lambda point: -float(point[0] ** 2), [-1.0], [1.0], config=SolverConfig(time_limit=1e-12))


def test_sup_parametric_higher_dimension_uses_seeds():
    target = np.array([0.2, -0.4, 0.7])
    result = sup_parametric(
        lambda point: -float(np.sum((point - target) ** 2)), -np.ones(3), np.ones(3), seeds=[target + 0.05]
    )
    assert result.value == pytest.approx(0.0, abs=1e-4)


def test_split_sample():
    split = split_sample(10, 0.3)
    assert list(split.err_index) == [7, 8, 9]
    assert split.def_index.size == 7

    split = split_sample(10, 0.5, SplitOrdering.RANDOM, np.random.default_rng(0))
    assert np.union1d(split.def_index, split.err_index).size == 10
    with pytest.raises(ValueError, match="fraction"):
        split_sample(10, 1.0)
