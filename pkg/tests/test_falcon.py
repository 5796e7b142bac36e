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

import logging
import math

import numpy as np
import pytest

from errest.bandit.config import FalconConfig
from errest.bandit.core import InteractionLog, LinearBanditEnv, RidgeArmRegressor, UniformKernel
from errest.bandit.falcon import (
    FalconVariant,
    falcon_ee_epsilon,
    falcon_experiment,
    falcon_gamma,
    falcon_model_class,
    igw_action_kernel,
    run_falcon_trial,
    theoretical_epsilon,
)
from errest.estimation.concentration import WidthKind, hoeffding_excess_width
from errest.estimation.config import LocalizationConfig, SolverConfig
from errest.estimation.excess_risk import SupervisedSplit, excess_risk_bound


def _small_config(**kwargs):
    time_limit = kwargs.pop("time_limit", 30.0)
    solver = SolverConfig(n_restarts=2, max_iterations=30, n_random_probes=16, time_limit=time_limit)
    defaults = dict(
        d=2,
        n_arms=2,
        horizon=32,
        trials=2,
        noise_sd=0.0,
        solver_retries=1,
        localization=LocalizationConfig(max_iterations=4, solver=solver),
    )
    defaults.update(kwargs)
    return FalconConfig(**defaults)


def _env():
    return LinearBanditEnv(np.array([[0.6, 0.8], [-0.8, 0.6]]), noise_sd=0.0)


def _uniform_epoch(env, n, epoch, seed):
    rng = np.random.default_rng(seed)
    contexts = env.sample_contexts(n, rng)
    actions = rng.integers(0, env.n_arms, n)
    rewards = env.sample_reward_table(contexts, rng)[np.arange(n), actions]
    return InteractionLog.from_arrays(
        contexts, actions, rewards, np.full(n, 0.5), epoch, 2, 2, kernel=UniformKernel(env.n_arms)
    )


def test_falcon_gamma():
    assert falcon_gamma(5, 0.05, 1.0, 1e-3) == pytest.approx(10.0)
    assert falcon_gamma(5, 0.0, 1.0, 1e-3) == pytest.approx(math.sqrt(5 / 1e-3))
    assert falcon_gamma(4, 1.0, 2.0, 1e-3) == pytest.approx(4.0)
    with pytest.raises(ValueError, match="two arms"):
        falcon_gamma(1, 0.1, 1.0, 1e-3)


def test_igw_action_kernel():
    assert igw_action_kernel(np.array([0.3, 0.7]), 0.0) == pytest.approx([0.5, 0.5])
    assert igw_action_kernel(np.array([1.0, 0.5, 0.5]), 2.0) == pytest.approx([0.5, 0.25, 0.25])
    assert igw_action_kernel(np.array([0.0, 1.0, 2.0]), 1e6)[2] >= 0.99

    batch = igw_action_kernel(np.array([[1.0, 0.5, 0.5], [0.0, 0.0, 1.0]]), 2.0)
    assert batch.shape == (2, 3)
    assert batch.sum(axis=1) == pytest.approx([1.0, 1.0])
    with pytest.raises(ValueError, match="gamma"):
        igw_action_kernel(np.array([0.0, 1.0]), -1.0)


def test_theoretical_epsilon():
    assert theoretical_epsilon(10, 5, 1000, 0.05, 2.0) == pytest.approx(0.10599146, abs=1e-8)
    assert theoretical_epsilon(10, 5, 1000, 0.05, 0.0) == 0.0
    assert theoretical_epsilon(10, 5, 10**9, 0.05, 2.0) < 1e-6


def test_ee_epsilon_without_defining_data_falls_back():
    env = _env()
    config = _small_config()
    estimate = falcon_ee_epsilon(InteractionLog.empty(2), _uniform_epoch(env, 8, 1, 0), 0.05, config)
    assert estimate.fallback
    assert estimate.epsilon == pytest.approx(theoretical_epsilon(2, 2, 8, 0.05, config.epsilon_scale))


def test_ee_epsilon_solver_timeout_falls_back():
    env = _env()
    config = _small_config(time_limit=1e-12)
    def_log, err_log = _uniform_epoch(env, 16, 1, 0), _uniform_epoch(env, 16, 2, 1)
    estimate = falcon_ee_epsilon(def_log, err_log, 0.05, config)
    assert estimate.fallback
    assert estimate.attempts == config.solver_retries + 1
    assert estimate.epsilon == pytest.approx(theoretical_epsilon(2, 2, 32, 0.05, config.epsilon_scale))


def test_ee_epsilon_noise_free_localizes_below_hoeffding_width():
    env = _env()
    solver = SolverConfig(n_restarts=2, max_iterations=50, n_random_probes=32, time_limit=60.0)
    config = _small_config(localization=LocalizationConfig(max_iterations=20, solver=solver))
    def_log, err_log = _uniform_epoch(env, 2000, 1, 0), _uniform_epoch(env, 2000, 2, 1)
    estimate = falcon_ee_epsilon(def_log, err_log, 0.05, config, rng=np.random.default_rng(0))
    width = float(hoeffding_excess_width(falcon_model_class(def_log, err_log, config).M, 2000, 0.05))
    assert not estimate.fallback
    assert 0.0 <= estimate.epsilon <= width + 1e-6


def test_ee_epsilon_hoeffding_width_is_a_floor():
    env = _env()
    config = _small_config(width="hoeffding")
    def_log, err_log = _uniform_epoch(env, 64, 1, 0), _uniform_epoch(env, 32, 2, 1)
    estimate = falcon_ee_epsilon(def_log, err_log, 0.05, config, rng=np.random.default_rng(0))
    width = float(hoeffding_excess_width(falcon_model_class(def_log, err_log, config).M, 32, 0.05))
    assert not estimate.fallback
    assert estimate.epsilon >= width - 1e-9


def test_falcon_model_class_uses_realized_reward_scale():
    env = _env()
    def_log, err_log = _uniform_epoch(env, 16, 1, 0), _uniform_epoch(env, 8, 2, 1)
    y_max = np.max(np.abs(np.concatenate([def_log.batch["rewards"], err_log.batch["rewards"]])))
    model_class = falcon_model_class(def_log, err_log, _small_config())
    assert model_class.clip == pytest.approx(y_max)
    assert model_class.M == pytest.approx((2.0 * y_max) ** 2)

    assert falcon_model_class(def_log, err_log, _small_config(label_bound=3.0)).M == pytest.approx(36.0)
    assert falcon_model_class(def_log, err_log, _small_config(loss_range=2.5)).M == pytest.approx(2.5)


def test_ee_epsilon_uses_uniform_bound_when_ridge_fit_is_not_erm(caplog):
    env = LinearBanditEnv(np.array([[0.6, 0.8], [-0.8, 0.6]]), noise_sd=0.1)
    config = _small_config(ridge=50.0)
    def_log, err_log = _uniform_epoch(env, 64, 1, 0), _uniform_epoch(env, 64, 2, 1)
    with caplog.at_level(logging.WARNING):
        estimate = falcon_ee_epsilon(def_log, err_log, 0.05, config, rng=np.random.default_rng(4))

    model_class = falcon_model_class(def_log, err_log, config)
    data = SupervisedSplit(
        model_class.featurize(def_log.contexts, def_log.batch["actions"]),
        def_log.batch["rewards"],
        model_class.featurize(err_log.contexts, err_log.batch["actions"]),
        err_log.batch["rewards"],
    )
    g_def = RidgeArmRegressor.from_log(def_log, 2, 50.0).params
    report = excess_risk_bound(
        model_class,
        g_def,
        data,
        0.05,
        config=config.localization,
        rng=np.random.default_rng(4),
        equal_split=False,
        width=WidthKind.NORMAL_QUANTILE,
    )
    assert not report.erm_valid
    assert not estimate.diagnostics["erm_valid"]
    assert estimate.epsilon == pytest.approx(max(report.bound_uniform, 0.0))
    assert estimate.epsilon >= report.bound_erm
    assert not any("does not minimize" in record.getMessage() for record in caplog.records)


def test_single_arm_has_no_regret():
    env = LinearBanditEnv(np.array([[0.5, 0.5]]), noise_sd=0.0)
    config = _small_config(n_arms=1)
    trajectory = run_falcon_trial(env, 32, FalconVariant.THEORETICAL, config, seed=0)
    assert np.all(trajectory.regret == 0.0)
    assert np.all(trajectory.log.batch["propensities"] == 1.0)


def test_greedy_on_true_model_has_no_regret_after_first_epoch():
    env = LinearBanditEnv(np.array([[0.6, 0.8], [-0.8, 0.6], [1.0, 0.0]]), noise_sd=0.0)
    config = _small_config(n_arms=3, gamma_override=1e12)

    class TrueModel:
        def predict(self, contexts):
            return env.mean_rewards(contexts)

    trajectory = run_falcon_trial(
        env, 64, FalconVariant.THEORETICAL, config, seed=1, regressor_factory=lambda log: TrueModel()
    )
    assert np.all(trajectory.regret[2:] <= 1e-6)
    assert np.all(trajectory.gamma_of_round[2:] == 1e12)


def test_error_estimated_trial_records_epochs():
    env = _env()
    config = _small_config()
    trajectory = run_falcon_trial(env, 32, FalconVariant.ERROR_ESTIMATED, config, seed=3)
    assert [epoch.end for epoch in trajectory.epochs] == [2, 4, 8, 16, 32]
    assert math.isnan(trajectory.epochs[0].epsilon)
    assert trajectory.epochs[1].fallback
    assert not trajectory.epochs[2].fallback
    rewards = trajectory.log.select_epochs([1, 2]).batch["rewards"]
    assert trajectory.epochs[2].epsilon >= 0.0
    assert trajectory.epochs[2].diagnostics["loss_range"] == pytest.approx((2.0 * np.max(np.abs(rewards))) ** 2)
    assert np.diff(trajectory.cum_regret) == pytest.approx(trajectory.regret[1:])


def test_falcon_experiment_pairs_variants():
    config = _small_config(horizon=16)
    rows = falcon_experiment(config, seed=5)
    assert len(rows) == config.trials * 2 * 16
    assert set(rows.columns) == {"trial", "t", "variant", "epoch", "epsilon_m", "gamma_m", "fallback", "cum_regret"}

    first_epoch = rows[rows["epoch"] == 1].pivot(index=["trial", "t"], columns="variant", values="cum_regret")
    assert np.all(first_epoch["theoretical"] == first_epoch["error_estimated"])
    assert rows.equals(falcon_experiment(config, seed=5))


@pytest.mark.slow
def test_error_estimated_regret_not_above_theoretical():
    config = FalconConfig(d=10, n_arms=5, horizon=2000, trials=10)
    rows = falcon_experiment(config, seed=0, jobs=4)
    final = rows[rows["t"] == config.horizon].groupby("variant")["cum_regret"].mean()
    assert final["error_estimated"] <= final["theoretical"]
