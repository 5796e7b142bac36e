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
Error-estimated contextual bandit pipeline.

At the end of an epoch the log is split into a defining part and an error part (the last epoch, cut in three).
Error estimation bounds the policy-evaluation error (for arm elimination) and the reward-model error (for
conformal arm sets); the next exploration kernel mixes uniform draws over conformal arm sets and comes with a
floor 1/M on the probability of the optimal arm and a bound alpha on the optimal cover.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..estimation.concentration import DeltaLike, as_delta, freedman_ips_width
from ..estimation.config import LocalizationConfig
from ..estimation.core_algos import FiniteTaskClass, GapOrientation, PointwiseBound, localize
from ..estimation.errors import EmptyClassError, MixedKernelError, UndefinedBoundError, ZeroPropensityError
from ..utils.parallel import map_replicates
from ..utils.seeding import make_rng
from .config import PipelineConfig
from .core import (
    ActionKernel,
    InteractionLog,
    LinearBanditEnv,
    LinearPolicyClass,
    Policy,
    RewardModel,
    RidgeArmRegressor,
    TrialStream,
    UniformKernel,
    cover,
    cover_batch,
    epoch_schedule,
    filter_pi_tilde,
    ips_values,
    policy_actions,
    sample_actions,
)


logger = logging.getLogger(__name__)

ArraysOfContexts = Callable[[np.ndarray], np.ndarray]


@dataclass
class PipelineSplit:
    S_def: InteractionLog
    S_err_elim: InteractionLog
    S_err_con: InteractionLog
    S_err_B: InteractionLog
    p_err: ActionKernel
    alpha_err: float

    @property
    def min_part_size(self) -> int:
        return min(len(self.S_err_elim), len(self.S_err_con), len(self.S_err_B))


def pipeline_split(log: InteractionLog, error_fraction: float) -> PipelineSplit:
    """S_def is the first floor((1 - lambda) tau) rounds; the rest is cut into three consecutive parts.

    The parts have |S_err| // 3 rounds each, the remainder going to the last one.
    """
    if not 0 < error_fraction < 1:
        raise ValueError(f"error_fraction must be in (0, 1), got {error_fraction}.")

    tau = len(log)
    n_def = math.floor((1.0 - error_fraction) * tau)
    err = log[n_def:]
    if len(err) < 3:
        raise ValueError(f"the error part needs at least 3 rounds, got {len(err)}.")

    epochs = err.epoch_ids
    if len(epochs) != 1:
        raise MixedKernelError(f"the error part spans epochs {epochs}, expected exactly one kernel.")

    part = len(err) // 3
    return PipelineSplit(
        S_def=log[:n_def],
        S_err_elim=err[:part],
        S_err_con=err[part : 2 * part],
        S_err_B=err[2 * part :],
        p_err=log.meta_info["kernels"][epochs[0]],
        alpha_err=float(err.batch["alpha"][0]),
    )


@dataclass
class PipelineOracles:
    R_elim: Callable[[Any], np.ndarray]
    """IPS value on S_def of a policy or of every policy in a class"""
    pi_elim: Policy
    f_hat: ArraysOfContexts
    """(n, K) reward predictions clipped to [0, 1]"""
    pi_con: Policy
    ci_mean: ArraysOfContexts
    ci_width: ArraysOfContexts


def build_pipeline_oracles(
    split: PipelineSplit, pi_tilde: LinearPolicyClass, log: InteractionLog, n_arms: int, ridge: float = 1.0
) -> PipelineOracles:
    """IPS evaluator on S_def, ridge reward model on S_def and S_err_elim, ridge CI estimator on the whole log."""
    if len(pi_tilde) == 0:
        raise EmptyClassError("the possibly-optimal policy class is empty.")

    S_def = split.S_def

    def R_elim(policy):
        return ips_values(policy.actions(S_def.contexts), S_def)

    pi_elim = pi_tilde[int(np.argmax(R_elim(pi_tilde)))]

    fit_log = InteractionLog.concat([split.S_def, split.S_err_elim])
    regressor = RidgeArmRegressor.from_log(fit_log, n_arms, ridge)

    def f_hat(contexts):
        return np.clip(regressor.predict(contexts), 0.0, 1.0)

    predictions = f_hat(fit_log.contexts)
    values = predictions[np.arange(len(fit_log))[None, :], pi_tilde.actions(fit_log.contexts)].mean(axis=1)
    pi_con = pi_tilde[int(np.argmax(values))]

    ci = RidgeArmRegressor.from_log(log, n_arms, ridge)
    return PipelineOracles(
        R_elim=R_elim, pi_elim=pi_elim, f_hat=f_hat, pi_con=pi_con, ci_mean=ci.predict, ci_width=ci.width
    )


def _localized_policy_bound(
    theta_def: np.ndarray, theta_err: np.ndarray, width: float, delta: float, config: Optional[LocalizationConfig]
) -> float:
    pb = PointwiseBound.from_arrays(
        theta_def=theta_def, theta_err=theta_err, b=width, orientation=GapOrientation.ERR_MINUS_DEF
    )
    trace = localize(FiniteTaskClass(len(theta_def)), pb, 0.0, delta, config)
    return trace.final


def _ips_gap(pi_tilde: LinearPolicyClass, reference: Policy, log: InteractionLog) -> np.ndarray:
    return ips_values(pi_tilde.actions(log.contexts), log) - ips_values(policy_actions(reference, log.contexts), log)


def cb_elim_error(
    S_err_elim: InteractionLog,
    oracles: PipelineOracles,
    pi_tilde: LinearPolicyClass,
    p_err: ActionKernel,
    alpha_err: float,
    delta: DeltaLike,
    config: Optional[LocalizationConfig] = None,
) -> float:
    """Bound on R_elim(pi_elim) - R_elim(pi*), localized with c = 0 over the possibly-optimal class."""
    if len(pi_tilde) == 0:
        raise EmptyClassError("the possibly-optimal policy class is empty.")

    delta = as_delta(delta)
    theta_def = oracles.R_elim(pi_tilde) - oracles.R_elim(oracles.pi_elim)
    theta_err = _ips_gap(pi_tilde, oracles.pi_elim, S_err_elim)
    contexts = S_err_elim.contexts
    width = freedman_ips_width(delta, len(S_err_elim), cover(p_err, oracles.pi_elim, contexts), alpha_err).value
    return _localized_policy_bound(theta_def, theta_err, width, delta, config)


def reward_model_hoeffding_term(n: int, delta: DeltaLike) -> float:
    """sqrt(2 log(2/delta) / n)."""
    return math.sqrt(2.0 * math.log(2.0 / as_delta(delta)) / n)


def cb_con_error(
    S_err_con: InteractionLog,
    oracles: PipelineOracles,
    pi_tilde: LinearPolicyClass,
    p_err: ActionKernel,
    alpha_err: float,
    delta: DeltaLike,
    config: Optional[LocalizationConfig] = None,
) -> float:
    """Bound on R_f(pi_con) - R_f(pi*) for the clipped reward model f.

    The defining estimate averages f over the S_err_con contexts, so the localized bound runs at delta/2 and a
    Hoeffding term at delta/2 covers the context average.
    """
    if len(pi_tilde) == 0:
        raise EmptyClassError("the possibly-optimal policy class is empty.")

    delta = as_delta(delta)
    contexts = S_err_con.contexts
    n = len(S_err_con)
    rows = np.arange(n)
    predictions = oracles.f_hat(contexts)
    reference = predictions[rows, policy_actions(oracles.pi_con, contexts)]
    theta_def = (predictions[rows[None, :], pi_tilde.actions(contexts)] - reference[None, :]).mean(axis=1)
    theta_err = _ips_gap(pi_tilde, oracles.pi_con, S_err_con)
    width = freedman_ips_width(delta / 2.0, n, cover(p_err, oracles.pi_con, contexts), alpha_err).value
    xi = _localized_policy_bound(theta_def, theta_err, width, delta / 2.0, config)
    return xi + reward_model_hoeffding_term(n, delta)


@dataclass
class EliminationSets:
    """g(x) = {a : mean + gamma width >= max_a (mean - gamma width)}; an infinite gamma keeps every arm."""

    ci_mean: ArraysOfContexts
    ci_width: ArraysOfContexts
    gamma: float

    def __call__(self, contexts: np.ndarray) -> np.ndarray:
        mean = self.ci_mean(contexts)
        if math.isinf(self.gamma):
            return np.ones(mean.shape, dtype=bool)

        width = self.ci_width(contexts)
        lower = np.max(mean - self.gamma * width, axis=1, keepdims=True)
        return mean + self.gamma * width >= lower


def arm_eliminator(
    oracles: PipelineOracles,
    U_elim: float,
    contexts: np.ndarray,
    pi_tilde: LinearPolicyClass,
    max_doublings: int = 60,
) -> EliminationSets:
    """Double gamma from 1 until every policy with R_elim(pi_elim) - R_elim(pi) <= U_elim stays inside g on the
    given contexts; falls back to all arms when the widths cannot separate them."""
    good = pi_tilde.subset(oracles.R_elim(oracles.pi_elim) - oracles.R_elim(pi_tilde) <= U_elim)
    good_actions = good.actions(contexts)
    columns = np.arange(good_actions.shape[1])[None, :]
    gamma = 1.0
    for _ in range(max_doublings + 1):
        sets = EliminationSets(oracles.ci_mean, oracles.ci_width, gamma)
        if np.all(sets(contexts)[columns, good_actions]):
            return sets

        gamma *= 2.0

    logger.warning(f"arm eliminator not valid after {max_doublings} doublings, keeping every arm.")
    return EliminationSets(oracles.ci_mean, oracles.ci_width, math.inf)


@dataclass
class ConformalArmSet:
    arm_mask: ArraysOfContexts
    """(n, K) membership of g(x)"""
    f_hat: ArraysOfContexts
    pi_con: Policy
    U_con: float

    def gaps(self, contexts: np.ndarray) -> np.ndarray:
        """(n, K) f(x, pi_con(x)) - f(x, a)."""
        predictions = self.f_hat(contexts)
        reference = predictions[np.arange(predictions.shape[0]), policy_actions(self.pi_con, contexts)]
        return reference[:, None] - predictions

    def effective_gaps(self, contexts: np.ndarray) -> np.ndarray:
        """Gaps shifted down so the best arm of g(x) has gap at most 0, keeping every C(x, zeta) nonempty.

        The shift is zero whenever pi_con(x) lies in g(x).
        """
        gaps = self.gaps(contexts)
        mask = self.arm_mask(contexts)
        floor = np.min(np.where(mask, gaps, np.inf), axis=1, keepdims=True)
        return gaps - np.maximum(floor, 0.0)


def conformal_set(cas: ConformalArmSet, contexts: np.ndarray, zeta: float) -> np.ndarray:
    """(n, K) membership of C(x, zeta) = {a in g(x) : f(x, pi_con(x)) - f(x, a) <= U_con / zeta}."""
    if not 0 < zeta <= 1:
        raise ValueError(f"zeta must be in (0, 1], got {zeta}.")

    return cas.arm_mask(contexts) & (cas.gaps(contexts) <= cas.U_con / zeta)


def _breakpoints(cas: ConformalArmSet, eta: float, contexts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Largest beta at which each arm is still in C(x, beta / eta): eta U / gap, inf for gap <= 0, 0 outside g."""
    mask = cas.arm_mask(contexts)
    gaps = cas.effective_gaps(contexts)
    with np.errstate(divide="ignore", invalid="ignore"):
        points = np.where(gaps > 0, eta * cas.U_con / np.where(gaps > 0, gaps, 1.0), np.inf)

    return np.where(mask, points, 0.0), mask


def _check_kernel_params(eta: float, beta_max: float, n_arms: int):
    if not 1 <= eta <= n_arms:
        raise ValueError(f"eta must be in [1, {n_arms}], got {eta}.")
    if not 0 < beta_max < 1:
        raise ValueError(f"beta_max must be in (0, 1), got {beta_max}.")


def exploration_kernel(cas: ConformalArmSet, eta: float, beta_max: float, contexts: np.ndarray) -> np.ndarray:
    """p(a|x) = (1 - beta_max) Unif_{beta_max/eta}(a|x) + int_0^beta_max Unif_{beta/eta}(a|x) d beta, exactly.

    C(x, beta/eta) only changes at the arm breakpoints, so the integral is a finite sum over sorted breakpoints.
    """
    points, mask = _breakpoints(cas, eta, contexts)
    n, n_arms = points.shape
    _check_kernel_params(eta, beta_max, n_arms)

    clipped = np.minimum(points, beta_max)
    ordered = np.sort(clipped, axis=1)
    lengths = np.diff(ordered, axis=1, prepend=0.0)
    counts = n_arms - np.arange(n_arms)
    increments = np.cumsum(lengths / counts[None, :], axis=1)
    last = np.sum(ordered[:, None, :] <= clipped[:, :, None], axis=2) - 1
    integral = np.take_along_axis(increments, last, axis=1)

    final = points >= beta_max
    probs = np.where(mask, integral, 0.0)
    probs += np.where(final, (1.0 - beta_max) / final.sum(axis=1, keepdims=True), 0.0)
    return probs


class ExplorationKernel(ActionKernel):
    def __init__(self, cas: ConformalArmSet, eta: float, beta_max: float, n_arms: int):
        self.cas = cas
        self.eta = eta
        self.beta_max = beta_max
        self.n_arms = n_arms

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        return exploration_kernel(self.cas, self.eta, self.beta_max, contexts)


def _set_sizes(
    cas: ConformalArmSet, eta: float, beta_max: float, contexts: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """|C(x, beta_max/eta)| under the effective gaps and |g(x)|."""
    points, mask = _breakpoints(cas, eta, contexts)
    return (points >= beta_max).sum(axis=1), mask.sum(axis=1)


def _first_cover_term(c_size: np.ndarray, g_size: np.ndarray, beta_max: float) -> np.ndarray:
    return c_size / (1.0 - beta_max + beta_max * c_size / g_size)


def cover_and_M_bounds(
    cas: ConformalArmSet,
    eta: float,
    beta_max: float,
    S_err_B: np.ndarray,
    delta: DeltaLike,
    probe_contexts: Optional[np.ndarray] = None,
) -> Tuple[float, float]:
    """(M, alpha) for the exploration kernel; max_x |g(x)| is taken over S_err_B and the probe contexts.

    M = max|g| / min(eta U_con, 1), which is max|g| / (eta U_con) whenever eta U_con <= 1.
    """
    delta = as_delta(delta)
    contexts = np.atleast_2d(S_err_B)
    if contexts.shape[0] == 0:
        raise ValueError("S_err_B must be nonempty.")
    if cas.U_con <= 0:
        raise UndefinedBoundError(f"M is undefined for U_con = {cas.U_con}.")

    c_size, g_size = _set_sizes(cas, eta, beta_max, contexts)
    max_g = g_size.max()
    if probe_contexts is not None:
        max_g = max(max_g, cas.arm_mask(probe_contexts).sum(axis=1).max())

    max_g = float(max_g)
    M = max_g / min(eta * cas.U_con, 1.0)
    alpha = (
        float(np.mean(_first_cover_term(c_size, g_size, beta_max)))
        + max_g / eta
        + math.sqrt(max_g * math.log(3.0 / delta) / (beta_max * contexts.shape[0]))
    )
    return M, alpha


def select_eta(
    cas: ConformalArmSet,
    beta_max: float,
    S_err_B: np.ndarray,
    delta: DeltaLike,
    n_arms: int,
    probe_contexts: Optional[np.ndarray] = None,
) -> Tuple[float, float, float]:
    """Grid search of eta over {1, ..., K} minimizing alpha; returns (eta, M, alpha), smallest eta on ties."""
    best = None
    for eta in range(1, n_arms + 1):
        M, alpha = cover_and_M_bounds(cas, float(eta), beta_max, S_err_B, delta, probe_contexts)
        if best is None or alpha < best[2]:
            best = (float(eta), M, alpha)

    return best


def conformal_coverage_fraction(
    cas: ConformalArmSet, contexts: np.ndarray, pi_star_actions: np.ndarray, zeta: float
) -> float:
    """Share of contexts with pi*(x) in C(x, zeta)."""
    members = conformal_set(cas, contexts, zeta)
    return float(np.mean(members[np.arange(members.shape[0]), np.asarray(pi_star_actions, dtype=np.int64)]))


def kernel_lower_bounds(
    cas: ConformalArmSet, eta: float, beta_max: float, contexts: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """The two pointwise floors on p(a|x), each (n, K).

    Inside C(x, beta_max/eta): (1 - beta_max)/|C| + beta_max/|g|, then 1/|g|. Elsewhere in g(x):
    (eta/|g|)(U_con/gap), then eta U_con/|g|. Zero outside g(x).
    """
    points, mask = _breakpoints(cas, eta, contexts)
    gaps = cas.effective_gaps(contexts)
    c_size, g_size = _set_sizes(cas, eta, beta_max, contexts)
    in_c = points >= beta_max
    in_g_only = mask & ~in_c
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(in_g_only, cas.U_con / np.where(in_g_only, gaps, 1.0), 0.0)

    g_size = g_size[:, None].astype(np.float64)
    first = np.where(in_c, (1.0 - beta_max) / np.maximum(c_size, 1)[:, None] + beta_max / g_size, 0.0)
    first += np.where(in_g_only, eta / g_size * ratio, 0.0)
    second = np.where(in_c, 1.0 / g_size, 0.0) + np.where(in_g_only, eta * cas.U_con / g_size, 0.0)
    return first, second


def cover_upper_bound(
    cas: ConformalArmSet, eta: float, beta_max: float, contexts: np.ndarray, pi_star_actions: np.ndarray
) -> Tuple[float, float]:
    """(per-context form, final form) of the optimal-cover bound on the given contexts.

    The per-context form dominates V(p, pi*) whenever pi*(x) lies in g(x) everywhere; the final form does too
    when, in addition, the average gap of pi* over contexts where it falls outside C(x, beta_max/eta) is at most
    U_con.
    """
    points, mask = _breakpoints(cas, eta, contexts)
    rows = np.arange(points.shape[0])
    actions = np.asarray(pi_star_actions, dtype=np.int64)
    c_size, g_size = _set_sizes(cas, eta, beta_max, contexts)
    first_term = _first_cover_term(c_size, g_size, beta_max)
    in_c = points[rows, actions] >= beta_max
    gaps = cas.effective_gaps(contexts)[rows, actions]
    per_context = np.where(in_c, first_term, g_size / eta * gaps / cas.U_con)
    final = float(np.mean(first_term)) + float(g_size.max()) / eta
    return float(np.mean(per_context)), final


@dataclass
class PipelineOutput:
    g_hat: EliminationSets
    cas: ConformalArmSet
    p_next: ExplorationKernel
    M_next: float
    alpha_next: float
    U_elim: float
    U_con: float
    eta: float
    beta_max: float
    n_pi_tilde: int


def pipeline_update(
    log: InteractionLog,
    policies: LinearPolicyClass,
    config: PipelineConfig,
    probe_contexts: Optional[np.ndarray] = None,
) -> PipelineOutput:
    """One end-of-epoch update: split, oracles, both error bounds, arm sets, eta and the next kernel."""
    delta = config.delta
    split = pipeline_split(log, config.error_fraction)
    if split.min_part_size < config.min_part_size:
        raise ValueError(f"error parts of {split.min_part_size} rounds are below {config.min_part_size}.")

    pi_tilde = filter_pi_tilde(policies, log, probe_contexts=probe_contexts)
    oracles = build_pipeline_oracles(split, pi_tilde, log, policies.n_arms, config.ridge)
    U_elim = cb_elim_error(
        split.S_err_elim, oracles, pi_tilde, split.p_err, split.alpha_err, delta / 3.0, config.localization
    )
    g_hat = arm_eliminator(oracles, U_elim, log.contexts, pi_tilde, config.max_gamma_doublings)
    U_con = cb_con_error(
        split.S_err_con, oracles, pi_tilde, split.p_err, split.alpha_err, delta / 3.0, config.localization
    )
    cas = ConformalArmSet(arm_mask=g_hat, f_hat=oracles.f_hat, pi_con=oracles.pi_con, U_con=U_con)
    contexts_B = split.S_err_B.contexts
    if config.eta is None:
        eta, M, alpha = select_eta(cas, config.beta_max, contexts_B, delta, policies.n_arms, probe_contexts)
    else:
        eta = config.eta
        M, alpha = cover_and_M_bounds(cas, eta, config.beta_max, contexts_B, delta, probe_contexts)

    return PipelineOutput(
        g_hat=g_hat,
        cas=cas,
        p_next=ExplorationKernel(cas, eta, config.beta_max, policies.n_arms),
        M_next=M,
        alpha_next=alpha,
        U_elim=U_elim,
        U_con=U_con,
        eta=eta,
        beta_max=config.beta_max,
        n_pi_tilde=len(pi_tilde),
    )


@dataclass
class PipelineTrajectory:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    log: Optional[InteractionLog] = None
    pi_star: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def _realized_cover(kernel: ActionKernel, pi_star_actions: np.ndarray, contexts: np.ndarray) -> float:
    try:
        return float(cover_batch(kernel, pi_star_actions, contexts))
    except ZeroPropensityError:
        return math.inf


def run_pipeline_epochs(
    env: LinearBanditEnv,
    T: int,
    config: PipelineConfig,
    seed: int,
    policies: Optional[LinearPolicyClass] = None,
    trial: int = 0,
) -> PipelineTrajectory:
    """Run the pipeline for T rounds; epoch 1 explores uniformly.

    Each row reports the bounds produced at an epoch end next to the realized optimal cover of the new kernel,
    computed on a large context sample against the known environment. Epochs whose update fails (error parts
    too short, an empty possibly-optimal class, U_con = 0) keep exploring uniformly and are flagged.
    """
    n_arms = env.n_arms
    if policies is None:
        rng = make_rng(seed, trial, 1)
        policies = LinearPolicyClass.random(config.n_policies, env.d, n_arms, rng, config.grid_step)

    probe_contexts = env.sample_contexts(config.n_probe_contexts, make_rng(seed, trial, 2))
    cover_contexts = env.sample_contexts(config.n_cover_contexts, make_rng(seed, trial, 3))
    pi_star = int(np.argmax(env.policy_value(policies.actions(cover_contexts), cover_contexts)))
    pi_star_cover = policies[pi_star].actions(cover_contexts)
    pi_star_probe = policies[pi_star].actions(probe_contexts)
    stream = TrialStream.draw(env, T, make_rng(seed, trial, 4))

    boundaries = epoch_schedule(T, config.epoch_base)
    starts = [0] + boundaries[:-1]
    log = InteractionLog.empty(env.d)
    kernel: ActionKernel = UniformKernel(n_arms)
    alpha, M = float(n_arms), float(n_arms)
    trajectory = PipelineTrajectory(pi_star=int(policies.index[pi_star]))

    for m, (start, end) in enumerate(zip(starts, boundaries), start=1):
        row: Dict[str, Any] = {"epoch": m, "tau": start}
        if m > 1:
            try:
                output = pipeline_update(log, policies, config, probe_contexts)
            except (ValueError, EmptyClassError) as exc:
                logger.warning(f"epoch {m} explores uniformly: {exc}")
                kernel, alpha, M = UniformKernel(n_arms), float(n_arms), float(n_arms)
                row.update(U_elim=math.nan, U_con=math.nan, eta=math.nan, n_pi_tilde=math.nan, pi_star_in_g=True)
                row["uniform_fallback"] = True
            else:
                kernel, alpha, M = output.p_next, output.alpha_next, output.M_next
                in_g = output.g_hat(probe_contexts)[np.arange(len(probe_contexts)), pi_star_probe]
                row.update(U_elim=output.U_elim, U_con=output.U_con, eta=output.eta, n_pi_tilde=output.n_pi_tilde)
                row.update(pi_star_in_g=bool(np.all(in_g)), uniform_fallback=False)
        else:
            row.update(U_elim=math.nan, U_con=math.nan, eta=math.nan, n_pi_tilde=len(policies), pi_star_in_g=True)
            row["uniform_fallback"] = True

        realized = _realized_cover(kernel, pi_star_cover, cover_contexts)
        row.update(M_next=M, alpha_next=alpha, realized_cover=realized, alpha_covered=bool(alpha >= realized))

        contexts = stream.contexts[start:end]
        probs = kernel.probs(contexts)
        actions = sample_actions(probs, stream.uniforms[start:end])
        rounds = np.arange(end - start)
        rewards = stream.reward_table[start:end][rounds, actions]
        means = env.mean_rewards(contexts)
        row["regret"] = float(np.sum(means.max(axis=1) - means[rounds, actions]))
        trajectory.rows.append(row)

        epoch_log = InteractionLog.from_arrays(
            contexts, actions, rewards, probs[rounds, actions], epoch=m, alpha=alpha, M=M, kernel=kernel
        )
        log = InteractionLog.concat([log, epoch_log])

    trajectory.log = log
    return trajectory


def _pipeline_task(trial: int, config: PipelineConfig, seed: int) -> List[Dict[str, Any]]:
    env = LinearBanditEnv.random(config.d, config.n_arms, make_rng(seed, trial, 0), reward_model=RewardModel.BERNOULLI)
    trajectory = run_pipeline_epochs(env, config.horizon, config, seed=seed, trial=trial)
    return [{"trial": trial, **row} for row in trajectory.rows]


def pipeline_experiment(config: PipelineConfig, seed: int, jobs: int = 1) -> pd.DataFrame:
    """Per-epoch rows (trial, epoch, tau, U_elim, U_con, eta, M_next, alpha_next, realized_cover, ...)."""
    results = map_replicates(_pipeline_task, [(trial, config, seed) for trial in range(config.trials)], jobs)
    return pd.DataFrame([row for rows in results for row in rows])
