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

from errest.bandit.config import PipelineConfig
from errest.bandit.core import InteractionLog, LinearBanditEnv, LinearPolicyClass, RewardModel, UniformKernel
from errest.bandit.pipeline import (
    ConformalArmSet,
    PipelineOracles,
    arm_eliminator,
    build_pipeline_oracles,
    cb_con_error,
    cb_elim_error,
    conformal_coverage_fraction,
    conformal_set,
    cover_and_M_bounds,
    cover_upper_bound,
    exploration_kernel,
    kernel_lower_bounds,
    pipeline_experiment,
    pipeline_split,
    reward_model_hoeffding_term,
    run_pipeline_epochs,
    select_eta,
)
from errest.estimation.concentration import freedman_ips_width
from errest.estimation.errors import MixedKernelError, UndefinedBoundError


def _epoch_log(n, epoch, n_arms=2, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return InteractionLog.from_arrays(
        rng.standard_normal((n, d)),
        rng.integers(0, n_arms, n),
        rng.integers(0, 2, n).astype(np.float64),
        np.full(n, 1.0 / n_arms),
        epoch=epoch,
        alpha=n_arms,
        M=n_arms,
        kernel=UniformKernel(n_arms),
    )


def _two_epoch_log(n_first, n_second, n_arms=2):
    return InteractionLog.concat([_epoch_log(n_first, 1, n_arms), _epoch_log(n_second, 2, n_arms, seed=1)])


def _fixed_set(gaps, U_con, mask=None):
    """Conformal arm set with constant predictions 1 - gap and pi_con = arm 0."""
    predictions = 1.0 - np.asarray(gaps, dtype=np.float64)
    mask = np.ones(predictions.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return ConformalArmSet(
        arm_mask=lambda x: np.tile(mask, (len(x), 1)),
        f_hat=lambda x: np.tile(predictions, (len(x), 1)),
        pi_con=lambda x: np.zeros(len(x), dtype=np.int64),
        U_con=U_con,
    )


@pytest.mark.parametrize("tau, parts", [(12, (2, 2, 2)), (13, (2, 2, 3))])
def test_pipeline_split_sizes(tau, parts):
    split = pipeline_split(_two_epoch_log(6, tau - 6), 0.5)
    assert len(split.S_def) == 6
    assert (len(split.S_err_elim), len(split.S_err_con), len(split.S_err_B)) == parts
    assert split.alpha_err == 2.0
    assert isinstance(split.p_err, UniformKernel)


def test_pipeline_split_rejects_mixed_kernels():
    with pytest.raises(MixedKernelError):
        pipeline_split(_two_epoch_log(8, 4), 0.5)
    with pytest.raises(ValueError, match="at least 3"):
        pipeline_split(_two_epoch_log(2, 2), 0.5)


def test_cb_elim_error_single_policy_is_width_only():
    log = _two_epoch_log(30, 30)
    split = pipeline_split(log, 0.5)
    pi_tilde = LinearPolicyClass(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    oracles = build_pipeline_oracles(split, pi_tilde, log, 2)
    U_elim = cb_elim_error(split.S_err_elim, oracles, pi_tilde, split.p_err, split.alpha_err, 0.05)
    assert U_elim == pytest.approx(float(freedman_ips_width(0.05, 10, 2.0, 2.0)))


def test_reward_model_hoeffding_term():
    assert reward_model_hoeffding_term(100, 0.05) == pytest.approx(0.27162, abs=1e-5)


def test_cb_con_error_constant_model_is_width_only():
    log = _two_epoch_log(30, 30)
    split = pipeline_split(log, 0.5)
    pi_tilde = LinearPolicyClass(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    oracles = build_pipeline_oracles(split, pi_tilde, log, 2)
    oracles.f_hat = lambda x: np.full((len(x), 2), 0.5)
    U_con = cb_con_error(split.S_err_con, oracles, pi_tilde, split.p_err, split.alpha_err, 0.05)
    expected = float(freedman_ips_width(0.025, 10, 2.0, 2.0)) + reward_model_hoeffding_term(10, 0.05)
    assert U_con == pytest.approx(expected)


def _oracles(means, width):
    means = np.asarray(means, dtype=np.float64)

    def R_elim(policy):
        return np.zeros(len(policy)) if isinstance(policy, LinearPolicyClass) else 0.0

    return PipelineOracles(
        R_elim=R_elim,
        pi_elim=lambda x: np.zeros(len(x), dtype=np.int64),
        f_hat=lambda x: np.tile(means, (len(x), 1)),
        pi_con=lambda x: np.zeros(len(x), dtype=np.int64),
        ci_mean=lambda x: np.tile(means, (len(x), 1)),
        ci_width=lambda x: np.full((len(x), means.size), width),
    )


def test_arm_eliminator_degenerate_widths():
    contexts = np.array([[1.0, 0.0], [0.5, 0.2]])
    best_arm_policy = LinearPolicyClass(np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]]))
    sets = arm_eliminator(_oracles([0.2, 0.8, 0.5], 0.0), 0.1, contexts, best_arm_policy)
    assert sets.gamma == 1.0
    assert sets(contexts).tolist() == [[False, True, False]] * 2


def test_arm_eliminator_grows_to_all_arms():
    contexts = np.array([[1.0, 0.0], [0.5, 0.2]])
    worst_arm_policy = LinearPolicyClass(np.array([[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]]))
    sets = arm_eliminator(_oracles([0.2, 0.8, 0.5], 0.1), 1e9, contexts, worst_arm_policy)
    assert sets.gamma == 4.0
    assert np.all(sets(contexts))

    sets = arm_eliminator(_oracles([0.2, 0.8, 0.5], 0.0), 1e9, contexts, worst_arm_policy, max_doublings=3)
    assert math.isinf(sets.gamma)
    assert np.all(sets(contexts))


def test_conformal_set_thresholds():
    contexts = np.zeros((1, 2))
    assert conformal_set(_fixed_set([0.0, 0.4], 0.1), contexts, 0.5).tolist() == [[True, False]]
    assert conformal_set(_fixed_set([0.0, 0.4], 0.1), contexts, 1e-9).tolist() == [[True, True]]
    assert conformal_set(_fixed_set([0.0, 0.25], 0.125), contexts, 0.5).tolist() == [[True, True]]
    assert conformal_set(_fixed_set([0.0, 0.0], 0.1, mask=[True, False]), contexts, 0.5).tolist() == [[True, False]]
    with pytest.raises(ValueError, match="zeta"):
        conformal_set(_fixed_set([0.0, 0.4], 0.1), contexts, 0.0)


def test_exploration_kernel_examples():
    contexts = np.zeros((3, 2))
    probs = exploration_kernel(_fixed_set([0.0, 0.4], 0.1), 1.0, 0.5, contexts)
    assert probs == pytest.approx(np.tile([0.875, 0.125], (3, 1)))

    probs = exploration_kernel(_fixed_set([0.0, 0.0, 0.0], 0.1), 2.0, 0.5, np.zeros((1, 2)))
    assert probs == pytest.approx(np.full((1, 3), 1.0 / 3.0))

    probs = exploration_kernel(_fixed_set([0.0, 0.3, 0.0, 0.9], 0.05, mask=[1, 1, 1, 0]), 2.0, 0.5, contexts)
    assert probs.sum(axis=1) == pytest.approx(np.ones(3))
    assert np.all(probs[:, 3] == 0.0)
    with pytest.raises(ValueError, match="eta"):
        exploration_kernel(_fixed_set([0.0, 0.4], 0.1), 3.0, 0.5, contexts)


def test_kernel_lower_bounds_hold():
    cas = _fixed_set([0.0, 0.4], 0.1)
    contexts = np.zeros((1, 2))
    first, second = kernel_lower_bounds(cas, 1.0, 0.5, contexts)
    assert first[0, 1] == pytest.approx(0.125)
    probs = exploration_kernel(cas, 1.0, 0.5, contexts)
    assert np.all(probs >= first - 1e-12)
    assert np.all(probs >= second - 1e-12)


def _random_state(rng):
    """Conformal arm set over indexed contexts with random predictions, eliminations and pi*, pi_con f-greedy."""
    n, n_arms = 8, int(rng.integers(2, 6))
    predictions = rng.uniform(0.0, 1.0, size=(n, n_arms))
    mask = rng.random((n, n_arms)) < 0.6
    pi_star = rng.integers(0, n_arms, n)
    mask[np.arange(n), pi_star] = True
    greedy = np.argmax(predictions, axis=1)

    def rows(x):
        return np.asarray(x, dtype=np.int64)[:, 0]

    def make(U_con):
        return ConformalArmSet(
            arm_mask=lambda x: mask[rows(x)],
            f_hat=lambda x: predictions[rows(x)],
            pi_con=lambda x: greedy[rows(x)],
            U_con=U_con,
        )

    return make, np.arange(n, dtype=np.float64)[:, None], pi_star, mask, n_arms


def test_pipeline_invariants_on_random_states():
    rng = np.random.default_rng(2024)
    premise_held = 0
    for _ in range(2000):
        make, contexts, pi_star, mask, n_arms = _random_state(rng)
        gaps = make(1.0).gaps(contexts)
        pi_star_gap = float(np.mean(gaps[np.arange(len(contexts)), pi_star]))
        U_con = max(pi_star_gap * rng.uniform(0.5, 1.5), 1e-3)
        cas = make(U_con)
        eta, beta_max = rng.uniform(1.0, n_arms), rng.uniform(0.1, 0.9)

        probs = exploration_kernel(cas, eta, beta_max, contexts)
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-9)
        assert np.all(probs[~mask] == 0.0)
        first, second = kernel_lower_bounds(cas, eta, beta_max, contexts)
        assert np.all(probs >= first - 1e-12)
        assert np.all(probs >= second - 1e-12)

        if pi_star_gap <= U_con:
            premise_held += 1
            for zeta in (0.1, 0.25, 0.5):
                assert conformal_coverage_fraction(cas, contexts, pi_star, zeta) >= 1.0 - zeta - 1e-12

        i = int(rng.integers(0, len(contexts)))
        arm = int(rng.choice(np.flatnonzero(mask[i])))
        if gaps[i, arm] > 0:
            assert conformal_set(make(0.5 * gaps[i, arm]), contexts, 0.5)[i, arm]

    assert premise_held > 0


def test_cover_and_M_bounds():
    cas = _fixed_set([0.0] * 5, 0.2)
    S_err_B = np.zeros((100, 2))
    M, alpha = cover_and_M_bounds(cas, 5.0, 0.5, S_err_B, 0.05)
    assert M == pytest.approx(5.0)
    assert alpha - 5.0 - 1.0 == pytest.approx(0.63992, abs=1e-4)
    with pytest.raises(UndefinedBoundError):
        cover_and_M_bounds(_fixed_set([0.0] * 5, 0.0), 5.0, 0.5, S_err_B, 0.05)


def test_select_eta_minimizes_alpha():
    cas = _fixed_set([0.0, 0.2, 0.6], 0.1)
    S_err_B = np.zeros((50, 2))
    eta, M, alpha = select_eta(cas, 0.5, S_err_B, 0.05, 3)
    alphas = [cover_and_M_bounds(cas, float(e), 0.5, S_err_B, 0.05)[1] for e in (1, 2, 3)]
    assert alpha == pytest.approx(min(alphas))
    assert eta == float(1 + int(np.argmin(alphas)))


def test_cover_upper_bound_dominates_realized_cover():
    cas = _fixed_set([0.0, 0.1, 0.5], 0.1)
    contexts = np.zeros((4, 2))
    probs = exploration_kernel(cas, 2.0, 0.5, contexts)
    for arm in range(3):
        actions = np.full(4, arm)
        per_context, _ = cover_upper_bound(cas, 2.0, 0.5, contexts, actions)
        assert per_context >= float(np.mean(1.0 / probs[:, arm])) - 1e-9

    assert conformal_coverage_fraction(cas, contexts, np.zeros(4), 0.25) == 1.0


def test_single_arm_pipeline_has_no_regret():
    env = LinearBanditEnv(np.array([[1.0, 0.0]]), reward_model=RewardModel.BERNOULLI)
    config = PipelineConfig(d=2, n_arms=1, n_policies=4, horizon=64, n_probe_contexts=32, n_cover_contexts=64)
    trajectory = run_pipeline_epochs(env, 64, config, seed=0)
    frame = trajectory.to_frame()
    assert np.all(frame["realized_cover"] == 1.0)
    assert np.all(frame["regret"] == 0.0)
    assert frame["uniform_fallback"].iloc[0]


def test_pipeline_epochs_small_instance():
    env = LinearBanditEnv.random(3, 3, np.random.default_rng(4), reward_model=RewardModel.BERNOULLI)
    config = PipelineConfig(horizon=128, n_probe_contexts=64, n_cover_contexts=256)
    frame = run_pipeline_epochs(env, 128, config, seed=2).to_frame()
    assert frame["epoch"].tolist() == list(range(1, 8))
    assert frame["tau"].tolist() == [0, 2, 4, 8, 16, 32, 64]
    assert np.all(frame["alpha_next"] >= 1.0)
    assert np.all(frame["M_next"] >= 1.0)
    assert frame.loc[0, "realized_cover"] == pytest.approx(3.0)

    updated = frame[~frame["uniform_fallback"]]
    assert len(updated) > 0
    assert np.all(updated["U_con"] > 0)
    assert np.all(updated["eta"].between(1, 3))


def test_pipeline_experiment_is_deterministic():
    config = PipelineConfig(horizon=32, trials=2, n_policies=8, n_probe_contexts=16, n_cover_contexts=64)
    rows = pipeline_experiment(config, seed=1)
    assert rows["trial"].tolist().count(0) == 5
    assert rows.equals(pipeline_experiment(config, seed=1))


@pytest.mark.slow
def test_pipeline_cover_bound_and_elimination_frequencies():
    config = PipelineConfig(d=3, n_arms=3, n_policies=32, horizon=512, trials=40)
    rows = pipeline_experiment(config, seed=6, jobs=4)
    updated = rows[~rows["uniform_fallback"]]
    assert len(updated) > 0
    floor = 1.0 - config.delta - 3.0 * math.sqrt(config.delta * (1.0 - config.delta) / len(updated))
    assert updated["alpha_covered"].mean() >= floor
    assert updated["pi_star_in_g"].mean() >= floor
