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
"""
FALCON with an inverse-gap-weighted action rule, run either with the theoretical excess-risk rate or with an
excess-risk bound estimated from the logged data.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from ..estimation.concentration import DeltaLike, WidthKind, as_delta
from ..estimation.errors import EmptyLocalizationError, InfeasibleConstraintError, SolverTimeoutError
from ..estimation.excess_risk import PerArmLinearModelClass, SupervisedSplit, excess_risk_bound
from ..utils.parallel import map_replicates
from ..utils.seeding import make_rng
from .config import FalconConfig
from .core import (
    ActionKernel,
    InteractionLog,
    LinearBanditEnv,
    RidgeArmRegressor,
    TrialStream,
    epoch_schedule,
    sample_actions,
)


logger = logging.getLogger(__name__)

_MIN_LABEL_BOUND = 1e-3


class FalconVariant(str, Enum):
    """
    Using an enumeration class to avoid spelling errors in FALCON variants
    """

    THEORETICAL = "theoretical"
    ERROR_ESTIMATED = "error_estimated"


def falcon_gamma(n_arms: int, epsilon_m: float, c: float, floor: float) -> float:
    """gamma = c sqrt(K / max(epsilon, floor))."""
    if n_arms < 2:
        raise ValueError(f"exploration needs at least two arms, got {n_arms}.")
    if floor <= 0:
        raise ValueError(f"epsilon floor must be positive, got {floor}.")

    return c * math.sqrt(n_arms / max(epsilon_m, floor))


def igw_action_kernel(f_hat: np.ndarray, gamma: float) -> np.ndarray:
    """Inverse gap weighting: 1 / (K + gamma gap_a) off the greedy arm, the remaining mass on it.

    Accepts one (K,) prediction vector or a (n, K) batch and returns probabilities of the same shape.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}.")

    f_hat = np.asarray(f_hat, dtype=np.float64)
    f = np.atleast_2d(f_hat)
    rows = np.arange(f.shape[0])
    greedy = np.argmax(f, axis=1)
    gaps = f[rows, greedy][:, None] - f
    probs = 1.0 / (f.shape[1] + gamma * gaps)
    probs[rows, greedy] = 0.0
    probs[rows, greedy] = 1.0 - probs.sum(axis=1)
    return probs.reshape(f_hat.shape)


def theoretical_epsilon(d: int, n_arms: int, n_total: int, delta: DeltaLike, C: float) -> float:
    """C (d K + log(1/delta)) / n."""
    if n_total < 1:
        raise ValueError(f"n_total must be at least 1, got {n_total}.")

    return C * (d * n_arms + math.log(1.0 / as_delta(delta))) / n_total


class IGWKernel(ActionKernel):
    def __init__(self, regressor: Any, gamma: float, n_arms: int):
        self.regressor = regressor
        self.gamma = gamma
        self.n_arms = n_arms

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        return igw_action_kernel(self.regressor.predict(contexts), self.gamma)


class _ZeroRegressor:
    def __init__(self, n_arms: int):
        self.n_arms = n_arms

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        return np.zeros((np.atleast_2d(contexts).shape[0], self.n_arms))


@dataclass
class EpsilonEstimate:
    epsilon: float
    fallback: bool
    attempts: int = 0
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def falcon_model_class(
    def_log: InteractionLog, err_log: InteractionLog, config: FalconConfig
) -> PerArmLinearModelClass:
    """Per-arm linear class with labels and predictions clipped to the realized reward scale of both logs."""
    label_bound = config.label_bound
    if label_bound is None:
        rewards = np.concatenate([def_log.batch["rewards"], err_log.batch["rewards"]])
        label_bound = max(float(np.max(np.abs(rewards), initial=0.0)), _MIN_LABEL_BOUND)

    return PerArmLinearModelClass(
        config.d,
        config.n_arms,
        bound=config.param_bound,
        clip=label_bound,
        label_bound=label_bound,
        loss_range=config.loss_range,
    )


def falcon_ee_epsilon(
    def_log: InteractionLog,
    err_log: InteractionLog,
    delta: DeltaLike,
    config: FalconConfig,
    rng: Optional[np.random.Generator] = None,
) -> EpsilonEstimate:
    """Excess-risk term from error estimation, with S_def the earlier epochs and S_err the latest one.

    The reference model is the per-arm ridge fit on S_def. Solver failures are retried with fresh seeds
    ``config.solver_retries`` times before falling back to the theoretical rate, which is also used when
    there is no defining data yet.
    """
    delta = as_delta(delta)
    n_total = len(def_log) + len(err_log)
    theoretical = theoretical_epsilon(config.d, config.n_arms, max(n_total, 1), delta, config.epsilon_scale)
    if len(def_log) == 0 or len(err_log) == 0:
        return EpsilonEstimate(epsilon=theoretical, fallback=True)

    model_class = falcon_model_class(def_log, err_log, config)
    data = SupervisedSplit(
        features_def=model_class.featurize(def_log.contexts, def_log.batch["actions"]),
        labels_def=def_log.batch["rewards"],
        features_err=model_class.featurize(err_log.contexts, err_log.batch["actions"]),
        labels_err=err_log.batch["rewards"],
    )
    g_def = RidgeArmRegressor.from_log(def_log, config.n_arms, config.ridge).params
    rng = rng if rng is not None else np.random.default_rng(config.localization.solver.seed)

    for attempt in range(config.solver_retries + 1):
        solver = replace(config.localization.solver, seed=config.localization.solver.seed + attempt)
        try:
            report = excess_risk_bound(
                model_class,
                g_def,
                data,
                delta,
                config=replace(config.localization, solver=solver),
                rng=rng,
                equal_split=False,
                width=WidthKind(config.width),
            )
        except (SolverTimeoutError, EmptyLocalizationError, InfeasibleConstraintError) as exc:
            logger.warning(f"excess-risk solver failed on attempt {attempt + 1}: {exc}")
            continue

        # bound_erm needs g_def to minimize the defining loss on the final class
        bound = report.bound_erm if report.erm_valid else report.bound_uniform
        return EpsilonEstimate(
            epsilon=max(bound, 0.0),
            fallback=False,
            attempts=attempt + 1,
            diagnostics={
                "iterations": report.trace.iterations,
                "erm_valid": report.erm_valid,
                "loss_range": model_class.M,
            },
        )

    logger.warning("excess-risk solver exhausted its retries, using the theoretical rate.")
    return EpsilonEstimate(epsilon=theoretical, fallback=True, attempts=config.solver_retries + 1)


@dataclass
class FalconState:
    epoch: int
    regressor: Any
    epsilon: float
    gamma: float
    variant: FalconVariant


@dataclass
class FalconEpoch:
    epoch: int
    start: int
    end: int
    epsilon: float
    gamma: float
    fallback: bool
    diagnostics: Dict[str, Any] = field(default_factory=dict)


@dataclass
class FalconTrajectory:
    variant: FalconVariant
    epochs: List[FalconEpoch]
    log: InteractionLog
    regret: np.ndarray
    epoch_of_round: np.ndarray
    epsilon_of_round: np.ndarray
    gamma_of_round: np.ndarray
    fallback_of_round: np.ndarray

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t": np.arange(1, len(self.regret) + 1),
                "variant": self.variant.value,
                "epoch": self.epoch_of_round,
                "epsilon_m": self.epsilon_of_round,
                "gamma_m": self.gamma_of_round,
                "fallback": self.fallback_of_round,
                "cum_regret": self.cum_regret,
            }
        )


def _next_state(
    state: FalconState,
    log: InteractionLog,
    config: FalconConfig,
    regressor_factory: Callable[[InteractionLog], Any],
    rng: np.random.Generator,
) -> FalconEpoch:
    """Refit on everything logged so far and pick epsilon and gamma for the next epoch."""
    m = state.epoch
    state.regressor = regressor_factory(log)
    fallback = False
    diagnostics: Dict[str, Any] = {}
    if state.variant is FalconVariant.THEORETICAL:
        state.epsilon = theoretical_epsilon(config.d, config.n_arms, len(log), config.delta, config.epsilon_scale)
    else:
        previous = m - 1
        estimate = falcon_ee_epsilon(
            log.select_epochs(range(1, previous)), log.select_epochs([previous]), config.delta, config, rng
        )
        state.epsilon, fallback, diagnostics = estimate.epsilon, estimate.fallback, estimate.diagnostics

    if config.gamma_override is not None:
        state.gamma = config.gamma_override
    elif config.n_arms > 1:
        state.gamma = falcon_gamma(config.n_arms, state.epsilon, config.gamma_scale, config.epsilon_floor)
    else:
        state.gamma = 0.0

    return FalconEpoch(m, 0, 0, state.epsilon, state.gamma, fallback, diagnostics)


def run_falcon_trial(
    env: LinearBanditEnv,
    T: int,
    variant: FalconVariant,
    config: FalconConfig,
    seed: int,
    stream: Optional[TrialStream] = None,
    regressor_factory: Optional[Callable[[InteractionLog], Any]] = None,
    trial: int = 0,
) -> FalconTrajectory:
    """One FALCON run over T rounds; epoch 1 explores uniformly.

    Per-round regret is max_a f*(x_t, a) - r_t with r_t the realized reward. Pass the same ``stream`` to both
    variants for a paired comparison; otherwise it is drawn from ``seed``.
    """
    variant = FalconVariant(variant)
    n_arms = env.n_arms
    stream = stream if stream is not None else TrialStream.draw(env, T, make_rng(seed, trial, 1))
    assert len(stream) >= T, f"stream holds {len(stream)} rounds, need {T}."
    if regressor_factory is None:

        def regressor_factory(log: InteractionLog) -> RidgeArmRegressor:
            return RidgeArmRegressor.from_log(log, n_arms, config.ridge)

    boundaries = epoch_schedule(T, config.epoch_base)
    starts = [0] + boundaries[:-1]
    log = InteractionLog.empty(env.d)
    state = FalconState(epoch=1, regressor=_ZeroRegressor(n_arms), epsilon=math.nan, gamma=0.0, variant=variant)
    epochs: List[FalconEpoch] = []
    regret = np.zeros(T)
    epoch_of_round = np.zeros(T, dtype=np.int64)
    epsilon_of_round = np.full(T, math.nan)
    gamma_of_round = np.zeros(T)
    fallback_of_round = np.zeros(T, dtype=bool)

    for m, (start, end) in enumerate(zip(starts, boundaries), start=1):
        state.epoch = m
        if m == 1:
            record = FalconEpoch(1, 0, 0, math.nan, 0.0, False)
        else:
            record = _next_state(state, log, config, regressor_factory, make_rng(seed, trial, 2, m))

        record.start, record.end = start, end
        epochs.append(record)

        contexts = stream.contexts[start:end]
        kernel = IGWKernel(state.regressor, state.gamma, n_arms)
        probs = kernel.probs(contexts)
        actions = sample_actions(probs, stream.uniforms[start:end])
        rows = np.arange(end - start)
        rewards = stream.reward_table[start:end][rows, actions]
        regret[start:end] = env.mean_rewards(contexts).max(axis=1) - rewards
        epoch_of_round[start:end] = m
        epsilon_of_round[start:end] = record.epsilon
        gamma_of_round[start:end] = record.gamma
        fallback_of_round[start:end] = record.fallback

        epoch_log = InteractionLog.from_arrays(
            contexts,
            actions,
            rewards,
            probs[rows, actions],
            epoch=m,
            alpha=float(n_arms),
            M=float(np.max(1.0 / probs.min(axis=1))),
            kernel=kernel,
        )
        log = InteractionLog.concat([log, epoch_log])

    return FalconTrajectory(
        variant=variant,
        epochs=epochs,
        log=log,
        regret=regret,
        epoch_of_round=epoch_of_round,
        epsilon_of_round=epsilon_of_round,
        gamma_of_round=gamma_of_round,
        fallback_of_round=fallback_of_round,
    )


def _falcon_task(trial: int, variant: str, config: FalconConfig, seed: int) -> pd.DataFrame:
    env = LinearBanditEnv.random(config.d, config.n_arms, make_rng(seed, trial, 0), noise_sd=config.noise_sd)
    stream = TrialStream.draw(env, config.horizon, make_rng(seed, trial, 1))
    trajectory = run_falcon_trial(
        env, config.horizon, FalconVariant(variant), config, seed=seed, stream=stream, trial=trial
    )
    frame = trajectory.to_frame()
    frame.insert(0, "trial", trial)
    return frame


def falcon_experiment(config: FalconConfig, seed: int, jobs: int = 1) -> pd.DataFrame:
    """Paired trials: both variants of a trial share the environment and the context, noise and action streams.

    Rows (trial, t, variant, epoch, epsilon_m, gamma_m, fallback, cum_regret), one per round and variant.
    """
    tasks = [(trial, variant.value, config, seed) for trial in range(config.trials) for variant in FalconVariant]
    return pd.concat(map_replicates(_falcon_task, tasks, jobs), ignore_index=True)
