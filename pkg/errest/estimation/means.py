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
Simultaneous confidence intervals for many means, the union-bound baseline and the correlated-Gaussian
simulations built on them.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..utils.parallel import map_replicates
from ..utils.seeding import make_rng
from .concentration import DeltaLike, as_delta, normal_quantile
from .core_algos import FiniteTaskClass, GapOrientation, PointwiseBound, max_error_bound


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeanTaskStats:
    theta_hat: float
    sigma_hat: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"mean statistics need n >= 2, got {self.n}.")
        if not self.sigma_hat >= 0:
            raise ValueError(f"sigma_hat must be non-negative, got {self.sigma_hat}.")


def mean_stats(sample: Sequence[float]) -> MeanTaskStats:
    sample = np.asarray(sample, dtype=np.float64).ravel()
    if sample.size < 2:
        raise ValueError(f"mean statistics need n >= 2, got {sample.size}.")

    return MeanTaskStats(theta_hat=float(np.mean(sample)), sigma_hat=float(np.std(sample, ddof=1)), n=sample.size)


def _batch_stats(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise means and n-1 standard deviations of a (tasks, n) matrix."""
    return samples.mean(axis=1), samples.std(axis=1, ddof=1)


def _standardized_bound(
    theta_def: np.ndarray, sigma_def: np.ndarray, theta_err: np.ndarray, sigma_err: np.ndarray, n: int
) -> PointwiseBound:
    """û = sqrt(n)|theta_def - theta_err| / sigma_def + sigma_err * z_{1-delta/2} / sigma_def."""
    if np.any(sigma_def <= 0):
        index = int(np.flatnonzero(sigma_def <= 0)[0])
        raise ValueError(f"task {index} has sigma_hat_def = 0; degenerate tasks must be filtered by the caller.")

    scale = math.sqrt(n) / sigma_def
    ratio = sigma_err / sigma_def

    def b(delta):
        return ratio * normal_quantile(1.0 - delta / 2.0)

    return PointwiseBound.from_arrays(
        theta_def=scale * theta_def, theta_err=scale * theta_err, b=b, orientation=GapOrientation.ABSOLUTE
    )


def u_mean(def_stats: MeanTaskStats, err_stats: MeanTaskStats, delta: DeltaLike) -> float:
    if def_stats.n != err_stats.n:
        raise ValueError(f"defining and error statistics must share n, got {def_stats.n} and {err_stats.n}.")

    pb = _standardized_bound(
        np.array([def_stats.theta_hat]),
        np.array([def_stats.sigma_hat]),
        np.array([err_stats.theta_hat]),
        np.array([err_stats.sigma_hat]),
        def_stats.n,
    )
    return float(pb.u(np.array([0]), as_delta(delta))[0])


def _cis_from_arrays(theta_def, sigma_def, theta_err, sigma_err, n: int, delta: float) -> Tuple[float, np.ndarray]:
    pb = _standardized_bound(theta_def, sigma_def, theta_err, sigma_err, n)
    xi, _ = max_error_bound(FiniteTaskClass(theta_def.size), pb, delta)
    half_width = sigma_def * xi / math.sqrt(n)
    return xi, np.stack([theta_def - half_width, theta_def + half_width], axis=1)


def simultaneous_cis(
    tasks: Sequence[Tuple[MeanTaskStats, MeanTaskStats]], delta: DeltaLike
) -> Tuple[float, np.ndarray]:
    """Intervals theta_def_h +- sigma_def_h * xi / sqrt(n), all sharing xi = max_h û(h).

    Returns:
        xi and a (tasks, 2) array of [lo, hi] rows.
    """
    if len(tasks) == 0:
        raise ValueError("simultaneous intervals need at least one task.")

    n_values = {stats.n for pair in tasks for stats in pair}
    if len(n_values) != 1:
        raise ValueError(f"all task statistics must share n, got {sorted(n_values)}.")

    theta_def = np.array([pair[0].theta_hat for pair in tasks])
    sigma_def = np.array([pair[0].sigma_hat for pair in tasks])
    theta_err = np.array([pair[1].theta_hat for pair in tasks])
    sigma_err = np.array([pair[1].sigma_hat for pair in tasks])
    return _cis_from_arrays(theta_def, sigma_def, theta_err, sigma_err, n_values.pop(), as_delta(delta))


def union_bound_adjustment(n_tasks: int, delta: DeltaLike, two_sided: bool = False) -> float:
    """z_{1-delta/n} one-sided, z_{1-delta/(2n)} two-sided."""
    delta = as_delta(delta)
    if n_tasks < 1:
        raise ValueError(f"n_tasks must be at least 1, got {n_tasks}.")

    tail = delta / (2 * n_tasks) if two_sided else delta / n_tasks
    return normal_quantile(1.0 - tail)


@dataclass(frozen=True)
class SubgroupSpec:
    membership: Callable[[np.ndarray], np.ndarray]
    p_h: float
    M: float

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be at least 1, got {self.M}.")
        if not (1.0 / self.M - 1e-12 <= self.p_h <= 1.0):
            raise ValueError(f"p_h must lie in [1/M, 1], got {self.p_h} with M={self.M}.")

    @classmethod
    def from_pattern(cls, pattern: Sequence[Optional[int]]) -> "SubgroupSpec":
        """Subgroup of binary attribute vectors fixing the non-None coordinates; X is uniform on {0,1}^q."""
        pattern = tuple(pattern)
        fixed = np.array([value is not None for value in pattern])
        target = np.array([0 if value is None else int(value) for value in pattern])

        def membership(X):
            return np.all((np.asarray(X) == target) | ~fixed, axis=-1)

        return cls(membership=membership, p_h=0.5 ** int(fixed.sum()), M=2.0 ** len(pattern))


def subgroup_values(T, X, spec: SubgroupSpec):
    """Y(h) = T * 1(X in h) / p_h; scalars in, scalar out."""
    values = np.where(spec.membership(X), np.asarray(T, dtype=np.float64) / spec.p_h, 0.0)
    return float(values) if np.ndim(values) == 0 else values


def _check_reps(reps: int):
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}.")


def correlated_max_replicate(alpha: float, n_tasks: int, delta: float, rng: np.random.Generator) -> Dict[str, float]:
    """One draw of the correlated-Gaussian comparison between the data-driven bound and the union bound."""
    points = rng.standard_normal(n_tasks)
    err_points = alpha * points + math.sqrt(max(1.0 - alpha**2, 0.0)) * rng.standard_normal(n_tasks)
    # points play e_h, err_points play e_err,h: theta_hat = -e, theta_err = -e_err under theta = 0
    pb = PointwiseBound.from_arrays(
        theta_def=-points,
        theta_err=-err_points,
        b=normal_quantile(1.0 - delta),
        orientation=GapOrientation.ERR_MINUS_DEF,
    )
    ee_bound, _ = max_error_bound(FiniteTaskClass(n_tasks), pb, delta)
    return {
        "true_max": float(np.max(points)),
        "ee_bound": ee_bound,
        "union_bound": union_bound_adjustment(n_tasks, delta),
    }


def _correlated_max_task(alpha, alpha_index, rep, n_tasks, delta, seed):
    row = correlated_max_replicate(alpha, n_tasks, delta, make_rng(seed, alpha_index, rep))
    return {"alpha": alpha, "rep": rep, **row}


def correlated_max_experiment(
    alphas: Sequence[float], n_tasks: int, reps: int, delta: DeltaLike, seed: int, jobs: int = 1
) -> pd.DataFrame:
    """Rows (alpha, rep, true_max, ee_bound, union_bound), one per replicate."""
    _check_reps(reps)
    delta = as_delta(delta)
    for alpha in alphas:
        if not (0.0 <= alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}.")

    tasks = [(alpha, i, rep, n_tasks, delta, seed) for i, alpha in enumerate(alphas) for rep in range(reps)]
    return pd.DataFrame(map_replicates(_correlated_max_task, tasks, jobs))


def correlated_max_summary(rows: pd.DataFrame) -> pd.DataFrame:
    """Per-alpha means and standard deviations of the three columns."""
    return rows.groupby("alpha")[["true_max", "ee_bound", "union_bound"]].agg(["mean", "std"])


def coverage_replicate(alpha: float, n_tasks: int, delta: float, rng: np.random.Generator) -> Dict[str, float]:
    """Equicorrelated errors e_h = sqrt(alpha) Z_0 + sqrt(1-alpha) Z_h with an independent error-set copy."""
    shared, shared_err = rng.standard_normal(2)
    errors = math.sqrt(alpha) * shared + math.sqrt(1.0 - alpha) * rng.standard_normal(n_tasks)
    err_errors = math.sqrt(alpha) * shared_err + math.sqrt(1.0 - alpha) * rng.standard_normal(n_tasks)
    pb = PointwiseBound.from_arrays(
        theta_def=-errors,
        theta_err=-err_errors,
        b=normal_quantile(1.0 - delta),
        orientation=GapOrientation.ERR_MINUS_DEF,
    )
    xi, _ = max_error_bound(FiniteTaskClass(n_tasks), pb, delta)
    true_max = float(np.max(errors))
    return {"true_max": true_max, "ee_bound": xi, "covered": bool(xi >= true_max)}


def _coverage_task(alpha, alpha_index, rep, n_tasks, delta, seed):
    row = coverage_replicate(alpha, n_tasks, delta, make_rng(seed, alpha_index, rep))
    return {"alpha": alpha, "rep": rep, **row}


def coverage_experiment(
    alphas: Sequence[float], n_tasks: int, reps: int, delta: DeltaLike, seed: int, jobs: int = 1
) -> pd.DataFrame:
    _check_reps(reps)
    delta = as_delta(delta)
    tasks = [(alpha, i, rep, n_tasks, delta, seed) for i, alpha in enumerate(alphas) for rep in range(reps)]
    return pd.DataFrame(map_replicates(_coverage_task, tasks, jobs))


def means_ci_replicate(n_tasks: int, n: int, delta: float, rng: np.random.Generator) -> Dict[str, float]:
    """Gaussian tasks with known means; joint coverage of the data-driven and the union-bound intervals."""
    mu = rng.standard_normal(n_tasks)
    sigma = rng.uniform(0.5, 2.0, size=n_tasks)
    def_samples = mu[:, None] + sigma[:, None] * rng.standard_normal((n_tasks, n))
    err_samples = mu[:, None] + sigma[:, None] * rng.standard_normal((n_tasks, n))
    theta_def, sigma_def = _batch_stats(def_samples)
    theta_err, sigma_err = _batch_stats(err_samples)

    xi, intervals = _cis_from_arrays(theta_def, sigma_def, theta_err, sigma_err, n, delta)
    union_z = union_bound_adjustment(n_tasks, delta, two_sided=True)
    union_half = sigma_def * union_z / math.sqrt(n)
    return {
        "xi": xi,
        "half_width": float(np.mean(intervals[:, 1] - theta_def)),
        "covered": bool(np.all((intervals[:, 0] <= mu) & (mu <= intervals[:, 1]))),
        "union_z": union_z,
        "union_half_width": float(np.mean(union_half)),
        "union_covered": bool(np.all(np.abs(theta_def - mu) <= union_half)),
    }


def _means_ci_task(rep, n_tasks, n, delta, seed):
    return {"tasks": n_tasks, "rep": rep, **means_ci_replicate(n_tasks, n, delta, make_rng(seed, rep))}


def means_ci_experiment(n_tasks: int, n: int, reps: int, delta: DeltaLike, seed: int, jobs: int = 1) -> pd.DataFrame:
    _check_reps(reps)
    tasks = [(rep, n_tasks, n, as_delta(delta), seed) for rep in range(reps)]
    return pd.DataFrame(map_replicates(_means_ci_task, tasks, jobs))


def subgroup_patterns(n_attributes: int) -> List[Tuple[Optional[int], ...]]:
    """Every pattern in {0, 1, free}^q, the free-everywhere pattern (whole population) included."""
    return list(itertools.product((0, 1, None), repeat=n_attributes))


def subgroup_replicate(
    n_attributes: int, n: int, delta: float, rng: np.random.Generator, effects: Optional[np.ndarray] = None
) -> Dict[str, float]:
    """Subgroup averages of a Gaussian score whose mean is linear in binary attributes."""
    if effects is None:
        effects = np.array([(-1.0) ** j / (j + 1) for j in range(n_attributes)])

    specs = [SubgroupSpec.from_pattern(pattern) for pattern in subgroup_patterns(n_attributes)]
    truth = np.array(
        [
            sum(effects[j] * (0.5 if value is None else value) for j, value in enumerate(pattern))
            for pattern in subgroup_patterns(n_attributes)
        ]
    )

    X = rng.integers(0, 2, size=(2 * n, n_attributes))
    T = X @ effects + rng.standard_normal(2 * n)
    Y = np.stack([subgroup_values(T, X, spec) for spec in specs])
    theta_def, sigma_def = _batch_stats(Y[:, :n])
    theta_err, sigma_err = _batch_stats(Y[:, n:])

    keep = sigma_def > 0
    if not np.all(keep):
        logger.warning(f"Dropping {int(np.sum(~keep))} subgroups with no defining-set members.")

    xi, intervals = _cis_from_arrays(theta_def[keep], sigma_def[keep], theta_err[keep], sigma_err[keep], n, delta)
    covered = (intervals[:, 0] <= truth[keep]) & (truth[keep] <= intervals[:, 1])
    return {
        "xi": xi,
        "half_width": float(np.mean(intervals[:, 1] - theta_def[keep])),
        "covered": bool(np.all(covered)),
        "n_subgroups": int(np.sum(keep)),
    }


def _subgroup_task(rep, n_attributes, n, delta, seed):
    return {"rep": rep, **subgroup_replicate(n_attributes, n, delta, make_rng(seed, rep))}


def subgroup_experiment(
    n_attributes: int, n: int, reps: int, delta: DeltaLike, seed: int, jobs: int = 1
) -> pd.DataFrame:
    _check_reps(reps)
    tasks = [(rep, n_attributes, n, as_delta(delta), seed) for rep in range(reps)]
    return pd.DataFrame(map_replicates(_subgroup_task, tasks, jobs))
