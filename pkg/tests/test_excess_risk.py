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

from errest.estimation.concentration import WidthKind, hoeffding_excess_width, normal_quantile
from errest.estimation.config import LocalizationConfig, SolverConfig
from errest.estimation.core_algos import split_sample
from errest.estimation.excess_risk import (
    LinearModelClass,
    PerArmLinearModelClass,
    SupervisedSplit,
    excess_pointwise_bound,
    excess_risk_bound,
    fit_erm_linear,
    linear_dgp,
    linear_risk_experiment,
    theta_hats,
    true_excess_risk,
    u_excess,
    vc_baseline,
)


def _small_config():
    solver = SolverConfig(n_restarts=2, max_iterations=50, n_random_probes=32)
    return LocalizationConfig(max_iterations=5, solver=solver)


def _random_split(n, d, seed=0):
    rng = np.random.default_rng(seed)
    features, labels = linear_dgp(2 * n, np.full(d, 0.2), rng)
    return SupervisedSplit.from_split(features, labels, split_sample(2 * n, 0.5))


def test_theta_hats_examples():
    model_class = LinearModelClass(1, clip=1.0, label_bound=1.0)
    data = _random_split(20, 1)
    assert theta_hats(model_class, np.array([0.3]), np.array([0.3]), data) == (0.0, 0.0)

    one_point = SupervisedSplit(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    theta_def, _ = theta_hats(model_class, np.array([math.sqrt(0.4)]), np.array([math.sqrt(0.9)]), one_point)
    assert theta_def == pytest.approx(0.5)

    fitted = SupervisedSplit(np.ones((1, 1)), np.ones(1), np.ones((1, 1)), np.zeros(1))
    theta_def, _ = theta_hats(model_class, np.array([1.0]), np.array([0.0]), fitted)
    assert theta_def == pytest.approx(1.0)


def test_u_excess_width_and_composition():
    model_class = LinearModelClass(2, loss_range=1.0)
    data = _random_split(50, 2)
    g_def = np.array([0.1, -0.2])
    assert u_excess(model_class, g_def, g_def, data, 0.05) == pytest.approx(0.34616604, abs=1e-8)

    g = np.array([0.4, 0.3])
    theta_def, theta_err = theta_hats(model_class, g, g_def, data)
    expected = theta_err - theta_def + 0.34616604
    assert u_excess(model_class, g, g_def, data, 0.05) == pytest.approx(expected, abs=1e-8)
    assert u_excess(model_class, g, g_def, data, 0.999999) == pytest.approx(theta_err - theta_def, abs=2e-3)


def test_unequal_split_width_needs_flag():
    model_class = LinearModelClass(1, loss_range=1.0)
    data = SupervisedSplit(np.ones((3, 1)), np.zeros(3), np.ones((2, 1)), np.zeros(2))
    with pytest.raises(ValueError, match="needs \\|S_def\\| = \\|S_err\\|"):
        u_excess(model_class, np.zeros(1), np.zeros(1), data, 0.05)

    report = excess_risk_bound(model_class, np.zeros(1), data, 0.05, candidates=np.zeros((1, 1)), equal_split=False)
    assert report.bound_erm == pytest.approx(float(hoeffding_excess_width(1.0, 2, 0.05)))


def test_excess_risk_bound_singleton_class():
    model_class = LinearModelClass(2)
    data = _random_split(40, 2)
    g_def = fit_erm_linear(data.features_def, data.labels_def)
    report = excess_risk_bound(model_class, g_def, data, 0.05, candidates=g_def[None, :])
    width = float(hoeffding_excess_width(model_class.M, 40, 0.05))
    assert report.bound_erm == pytest.approx(width)
    assert report.bound_uniform == pytest.approx(width)
    assert report.erm_valid


def test_excess_risk_bound_parametric_is_monotone():
    model_class = LinearModelClass(2)
    data = _random_split(60, 2, seed=4)
    g_def = fit_erm_linear(data.features_def, data.labels_def)
    report = excess_risk_bound(model_class, g_def, data, 0.05, config=_small_config(), rng=np.random.default_rng(1))
    xi = report.trace.xi_sequence
    assert all(b <= a for a, b in zip(xi, xi[1:]))
    assert report.bound_erm >= float(hoeffding_excess_width(model_class.M, 60, 0.05)) - 1e-12
    assert report.bound_uniform >= report.bound_erm - 1e-12


def test_normal_width_vanishes_at_reference_and_tracks_loss_spread():
    model_class = LinearModelClass(2, clip=1.0, label_bound=1.0)
    data = _random_split(40, 2, seed=3)
    g_def, g = np.array([0.2, 0.2]), np.array([0.5, -0.1])
    pb = excess_pointwise_bound(model_class, g_def, data, width=WidthKind.NORMAL_QUANTILE)
    assert pb.b_width(np.atleast_2d(g_def), 0.05)[0] == pytest.approx(0.0, abs=1e-12)

    diffs = (
        model_class.loss(g, data.features_err, data.labels_err)[0]
        - model_class.loss(g_def, data.features_err, data.labels_err)[0]
    )
    expected = normal_quantile(0.95) * diffs.std(ddof=1) / math.sqrt(40)
    assert pb.b_width(np.atleast_2d(g), 0.05)[0] == pytest.approx(expected)

    single = SupervisedSplit(data.features_def, data.labels_def, data.features_err[:1], data.labels_err[:1])
    pb_single = excess_pointwise_bound(model_class, g_def, single, equal_split=False, width="normal_quantile")
    hoeffding = float(hoeffding_excess_width(model_class.M, 1, 0.05))
    assert pb_single.b_width(np.atleast_2d(g), 0.05) == pytest.approx(hoeffding)
    with pytest.raises(ValueError, match="hoeffding or normal_quantile"):
        excess_pointwise_bound(model_class, g_def, data, width=WidthKind.FREEDMAN_IPS)


def test_localization_keeps_the_population_minimizer_on_a_grid():
    beta = np.array([0.3, -0.2])
    axis = np.round(np.arange(-0.5, 0.51, 0.1), 10)
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    star = int(np.flatnonzero(np.all(np.isclose(grid, beta), axis=1))[0])

    rng = np.random.default_rng(11)
    features, labels = linear_dgp(400, beta, rng)
    data = SupervisedSplit.from_split(features, labels, split_sample(400, 0.5))
    model_class = LinearModelClass(2)
    g_def = grid[np.argmin(model_class.loss(grid, data.features_def, data.labels_def).mean(axis=1))]
    report = excess_risk_bound(model_class, g_def, data, 0.05, candidates=grid)

    handles = np.arange(len(grid))
    assert len(report.trace.class_sequence) >= 2
    for constraint in report.trace.class_sequence:
        assert constraint(handles)[star]
    assert report.trace.contains(handles)[star]
    assert report.erm_valid
    assert report.bound_erm >= true_excess_risk(g_def, beta)


def test_vc_baseline():
    assert vc_baseline(10, 250, 0.05) == pytest.approx(0.10396586, abs=1e-8)
    assert vc_baseline(0, 2, math.exp(-1.0)) == pytest.approx(1.0)
    assert vc_baseline(10, 10**9, 0.05) < 1e-7


def test_fit_erm_linear():
    assert fit_erm_linear(np.array([[1.0], [2.0]]), np.array([1.0, 2.0])) == pytest.approx([1.0])
    assert fit_erm_linear(np.ones((3, 2)), np.zeros(3), ridge=0.5) == pytest.approx([0.0, 0.0])

    rng = np.random.default_rng(2)
    X, y = rng.standard_normal((40, 10)), rng.standard_normal(40)
    beta = fit_erm_linear(X, y)
    assert np.max(np.abs(X.T @ X @ beta - X.T @ y)) < 1e-8
    with pytest.raises(ValueError, match="singular"):
        fit_erm_linear(np.ones((3, 2)), np.zeros(3))


def test_true_excess_risk():
    beta = np.array([0.3, -0.2, 0.1])
    assert true_excess_risk(beta, beta) == 0.0
    assert true_excess_risk(beta + np.array([0.3, 0.0, 0.0]), beta) == pytest.approx(0.03)


def test_per_arm_featurize():
    model_class = PerArmLinearModelClass(2, 3)
    features = model_class.featurize(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([2, 0]))
    assert features.tolist() == [[0, 0, 0, 0, 1, 2], [3, 4, 0, 0, 0, 0]]
    assert model_class.dim == 6


def test_linear_risk_experiment_columns():
    rows = linear_risk_experiment([40], reps=2, delta=0.05, seed=0, d=3, config=_small_config())
    assert len(rows) == 2
    assert np.all(rows["n_def"] == 20)
    assert np.all(rows["monotone"])
    assert rows["vc_bound"].iloc[0] == pytest.approx(vc_baseline(3, 20, 0.05))
    assert rows["vc_ratio"].to_numpy() == pytest.approx((rows["ee_bound_erm"] / rows["vc_bound"]).to_numpy())


@pytest.mark.slow
def test_linear_risk_vc_column_and_realizable_rate():
    rows = linear_risk_experiment([500], reps=1, delta=0.05, seed=0, d=10, config=_small_config())
    assert rows["vc_bound"].iloc[0] == pytest.approx(0.10396586, abs=1e-8)

    rng = np.random.default_rng(5)
    beta = np.array([0.3, -0.2, 0.1])
    features, labels = linear_dgp(20_000, beta, rng)
    data = SupervisedSplit.from_split(features, labels, split_sample(20_000, 0.5))
    model_class = LinearModelClass(3)
    g_def = fit_erm_linear(data.features_def, data.labels_def)
    report = excess_risk_bound(model_class, g_def, data, 0.05, config=_small_config(), rng=rng)
    assert report.bound_erm <= 2 * float(hoeffding_excess_width(model_class.M, 10_000, 0.05))


@pytest.mark.slow
def test_linear_risk_coverage_and_monotone_localization():
    rows = linear_risk_experiment([100, 400], reps=50, delta=0.05, seed=1, d=10, config=_small_config(), jobs=4)
    assert rows["monotone"].all()
    for _, group in rows.groupby("n"):
        assert group["covered"].mean() >= 0.93


@pytest.mark.slow
def test_linear_risk_vc_ratio_by_width():
    solver = SolverConfig(n_restarts=2, max_iterations=50, n_random_probes=32)
    config = LocalizationConfig(max_iterations=30, solver=solver)
    hoeffding = linear_risk_experiment([1000], reps=3, delta=0.05, seed=2, d=10, config=config)
    floor = float(hoeffding_excess_width(4.0, 500, 0.05)) / vc_baseline(10, 500, 0.05)
    assert np.all(hoeffding["vc_ratio"] >= floor - 1e-9)

    normal = linear_risk_experiment([1000], reps=5, delta=0.05, seed=2, d=10, config=config, width="normal_quantile")
    assert normal["vc_ratio"].mean() <= 1.25
    assert np.all(normal["ee_bound_erm"] < hoeffding["ee_bound_erm"].min())
