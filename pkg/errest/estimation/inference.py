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
Multiple testing through a weighted maximum error, and cross-fitting (dataset switching, min over resplits).
"""

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from ..utils.parallel import map_replicates
from ..utils.seeding import make_rng
from .concentration import DeltaLike, as_delta, normal_quantile
from .core_algos import FiniteTaskClass, GapOrientation, PointwiseBound, SplitOrdering, max_error_bound, split_sample
from .means import MeanTaskStats, _batch_stats, _standardized_bound, union_bound_adjustment


@dataclass
class WeightPair:
    """iota screens tasks in or out, b rescales their bounds; both are built from S_def alone."""

    iota: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.iota = np.asarray(self.iota, dtype=bool)
        self.b = np.asarray(self.b, dtype=np.float64)
        assert self.iota.shape == self.b.shape, "iota and b must cover the same tasks."
        if np.any(self.b[self.iota] <= 0):
            raise ValueError("b must be positive wherever iota is 1.")

    def scaled(self, factor: float) -> "WeightPair":
        return WeightPair(self.iota.copy(), self.b * factor)


def uniform_weights(n_tasks: int) -> WeightPair:
    return WeightPair(np.ones(n_tasks, dtype=bool), np.ones(n_tasks))


def default_weights(def_stats: Sequence[MeanTaskStats], delta: DeltaLike) -> WeightPair:
    """iota(h) = 1(theta_h > sigma_h z_delta / sqrt(n)), b(h) = sigma_h min(1, 1/|theta_h|)."""
    delta = as_delta(delta)
    theta = np.array([stats.theta_hat for stats in def_stats])
    sigma = np.array([stats.sigma_hat for stats in def_stats])
    n = np.array([stats.n for stats in def_stats])
    iota = theta > sigma * normal_quantile(1.0 - delta) / np.sqrt(n)
    abs_theta = np.abs(theta)
    inverse = np.divide(1.0, abs_theta, out=np.full_like(abs_theta, np.inf), where=abs_theta > 0)
    return WeightPair(iota=iota, b=sigma * np.minimum(1.0, inverse))


def _reject_from_arrays(
    theta_def, sigma_def, theta_err, sigma_err, n: int, weights: WeightPair, delta: float
) -> Tuple[Optional[float], Set[int]]:
    active = np.flatnonzero(weights.iota)
    if active.size == 0:
        return None, set()

    b = weights.b[active]
    base = _standardized_bound(theta_def[active], sigma_def[active], theta_err[active], sigma_err[active], n)
    width = base.b_width(np.arange(active.size), delta)
    # b(h) >= 0 commutes with the absolute gap, so b * û is again a pointwise bound
    weighted = PointwiseBound.from_arrays(
        theta_def=b * base.theta_def(np.arange(active.size)),
        theta_err=b * base.theta_err(np.arange(active.size)),
        b=b * width,
        orientation=GapOrientation.ABSOLUTE,
    )
    xi_w, _ = max_error_bound(FiniteTaskClass(active.size), weighted, delta)
    thresholds = sigma_def[active] * xi_w / (b * math.sqrt(n))
    return xi_w, {int(h) for h in active[theta_def[active] > thresholds]}


def reject_set(
    tasks: Sequence[Tuple[MeanTaskStats, MeanTaskStats]], weights: WeightPair, delta: DeltaLike
) -> Tuple[Optional[float], Set[int]]:
    """Reject h iff iota(h) = 1 and theta_h > sigma_h xi_w / (b(h) sqrt(n)), xi_w = max over iota = 1 of b û.

    Returns:
        xi_w (None when no task is screened in) and the set of rejected task indices.
    """
    n_values = {stats.n for pair in tasks for stats in pair}
    if len(n_values) > 1:
        raise ValueError(f"all task statistics must share n, got {sorted(n_values)}.")

    theta_def = np.array([pair[0].theta_hat for pair in tasks])
    sigma_def = np.array([pair[0].sigma_hat for pair in tasks])
    theta_err = np.array([pair[1].theta_hat for pair in tasks])
    sigma_err = np.array([pair[1].sigma_hat for pair in tasks])
    n = n_values.pop() if n_values else 2
    return _reject_from_arrays(theta_def, sigma_def, theta_err, sigma_err, n, weights, as_delta(delta))


@dataclass(frozen=True)
class SwitchedBound:
    xi_12: float
    xi_21: float
    xi_min: float

    def __post_init__(self):
        assert self.xi_min == min(self.xi_12, self.xi_21), "xi_min must be the smaller directional bound."


BoundBuilder = Callable[[Any, Any, float], float]


def switched_bound(fold1, fold2, bound_builder: BoundBuilder, delta: DeltaLike) -> SwitchedBound:
    """Run the builder in both directions at delta / 2 and keep the smaller bound."""
    delta = as_delta(delta)
    if len(fold1) == 0 or len(fold2) == 0:
        raise ValueError("both folds must be nonempty.")

    xi_12 = float(bound_builder(fold1, fold2, delta / 2.0))
    xi_21 = float(bound_builder(fold2, fold1, delta / 2.0))
    return SwitchedBound(xi_12=xi_12, xi_21=xi_21, xi_min=min(xi_12, xi_21))


def kfold_bounds(m: int, builder: Callable[[int, float], float], delta: DeltaLike) -> List[float]:
    delta = as_delta(delta)
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}.")

    return [float(builder(j, delta / m)) for j in range(m)]


def kfold_bound(m: int, builder: Callable[[int, float], float], delta: DeltaLike) -> float:
    """min over j < m of builder(j, delta / m)."""
    return min(kfold_bounds(m, builder, delta))


def random_resplit_builder(
    samples: np.ndarray, bound_builder: BoundBuilder, seed: int
) -> Callable[[int, float], float]:
    """Resplit j halves the rows of ``samples`` with its own random permutation and runs the bound builder."""
    samples = np.asarray(samples)

    def builder(j: int, delta: float) -> float:
        split = split_sample(samples.shape[0], 0.5, SplitOrdering.RANDOM, make_rng(seed, j))
        fold_def, fold_err = split.take(samples)
        return bound_builder(fold_def, fold_err, delta)

    return builder


def multitest_replicate(
    n_tasks: int, n: int, delta: float, rng: np.random.Generator, alt_fraction: float = 0.0, effect: float = 0.5
) -> Dict[str, Any]:
    """Gaussian tasks, a fraction of them with mean ``effect`` and the rest null; one row per weight choice."""
    n_alt = int(round(alt_fraction * n_tasks))
    theta = np.zeros(n_tasks)
    theta[:n_alt] = effect
    def_samples = theta[:, None] + rng.standard_normal((n_tasks, n))
    err_samples = theta[:, None] + rng.standard_normal((n_tasks, n))
    theta_def, sigma_def = _batch_stats(def_samples)
    theta_err, sigma_err = _batch_stats(err_samples)
    is_null = theta == 0

    def_stats = [MeanTaskStats(t, s, n) for t, s in zip(theta_def, sigma_def)]
    choices = {"uniform": uniform_weights(n_tasks), "default": default_weights(def_stats, delta)}
    rows = {}
    for name, weights in choices.items():
        xi_w, rejected = _reject_from_arrays(theta_def, sigma_def, theta_err, sigma_err, n, weights, delta)
        rejected = np.array(sorted(rejected), dtype=np.int64)
        rows[name] = {
            "xi_w": np.nan if xi_w is None else xi_w,
            "n_rejected": int(rejected.size),
            "fwer_indicator": bool(np.any(is_null[rejected])) if rejected.size else False,
            "n_true_rejected": int(np.sum(~is_null[rejected])) if rejected.size else 0,
        }

    z_bonferroni = union_bound_adjustment(n_tasks, delta)
    bonferroni = theta_def * math.sqrt(n) / sigma_def > z_bonferroni
    rows["bonferroni"] = {
        "xi_w": z_bonferroni,
        "n_rejected": int(np.sum(bonferroni)),
        "fwer_indicator": bool(np.any(bonferroni & is_null)),
        "n_true_rejected": int(np.sum(bonferroni & ~is_null)),
    }
    return rows


def _multitest_task(rep, n_tasks, n, delta, seed, alt_fraction, effect):
    rows = multitest_replicate(n_tasks, n, delta, make_rng(seed, rep), alt_fraction, effect)
    return [{"weights": name, "rep": rep, **row} for name, row in rows.items()]


def multitest_experiment(
    n_tasks: int,
    n: int,
    reps: int,
    delta: DeltaLike,
    seed: int,
    alt_fraction: float = 0.0,
    effect: float = 0.5,
    jobs: int = 1,
) -> pd.DataFrame:
    """Rows (weights, rep, xi_w, n_rejected, fwer_indicator, n_true_rejected)."""
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}.")
    if not (0.0 <= alt_fraction <= 1.0):
        raise ValueError(f"alt_fraction must lie in [0, 1], got {alt_fraction}.")

    tasks = [(rep, n_tasks, n, as_delta(delta), seed, alt_fraction, effect) for rep in range(reps)]
    results = map_replicates(_multitest_task, tasks, jobs)
    return pd.DataFrame([row for rows in results for row in rows])


def _directional_bound(estimate_errors: np.ndarray, err_errors: np.ndarray, delta: float) -> float:
    """Standardized one-sided bound z_{1-delta} + max_h (e_h - e_err,h) through the engine."""
    pb = PointwiseBound.from_arrays(
        theta_def=-np.asarray(estimate_errors),
        theta_err=-np.asarray(err_errors),
        b=normal_quantile(1.0 - delta),
        orientation=GapOrientation.ERR_MINUS_DEF,
    )
    xi, _ = max_error_bound(FiniteTaskClass(len(estimate_errors)), pb, delta)
    return xi


def _sample_bound(fold_def: np.ndarray, fold_err: np.ndarray, delta: float) -> float:
    """Unit-variance raw samples (rows = observations, columns = tasks) with true means 0."""
    n = fold_def.shape[0]
    errors = -math.sqrt(n) * fold_def.mean(axis=0)
    err_errors = -math.sqrt(fold_err.shape[0]) * fold_err.mean(axis=0)
    return _directional_bound(errors, err_errors, delta)


def crossfit_replicate(
    alpha: float, n_tasks: int, delta: float, rng: np.random.Generator, m: int = 4, n: int = 100, seed: int = 0
) -> Dict[str, Any]:
    """Dataset switching on correlated standard normal errors plus a min-over-resplits bound on raw samples.

    The switched bound certifies the estimates of the direction that attains it, so ``true_max`` is that
    direction's realized maximum error.
    """
    points = rng.standard_normal(n_tasks)
    err_points = alpha * points + math.sqrt(max(1.0 - alpha**2, 0.0)) * rng.standard_normal(n_tasks)
    switched = switched_bound(points, err_points, _directional_bound, delta)
    true_max = float(np.max(points)) if switched.xi_12 <= switched.xi_21 else float(np.max(err_points))

    # raw observations with cross-task correlation alpha, true means 0
    shared = rng.standard_normal((2 * n, 1))
    samples = math.sqrt(alpha) * shared + math.sqrt(1.0 - alpha) * rng.standard_normal((2 * n, n_tasks))
    builder = random_resplit_builder(samples, _sample_bound, seed)
    bounds = kfold_bounds(m, builder, delta)
    best = int(np.argmin(bounds))
    split = split_sample(2 * n, 0.5, SplitOrdering.RANDOM, make_rng(seed, best))
    fold_def, _ = split.take(samples)
    kfold_true_max = float(np.max(-math.sqrt(fold_def.shape[0]) * fold_def.mean(axis=0)))
    xi_kfold = bounds[best]
    return {
        "xi_12": switched.xi_12,
        "xi_21": switched.xi_21,
        "xi_min": switched.xi_min,
        "true_max": true_max,
        "covered": bool(switched.xi_min >= true_max),
        "xi_kfold": xi_kfold,
        "kfold_true_max": kfold_true_max,
        "kfold_covered": bool(xi_kfold >= kfold_true_max),
    }


def _crossfit_task(alpha, alpha_index, rep, n_tasks, delta, seed, m, n):
    rng = make_rng(seed, alpha_index, rep)
    resplit_seed = int(rng.integers(0, 2**63 - 1))
    return {"alpha": alpha, "rep": rep, **crossfit_replicate(alpha, n_tasks, delta, rng, m, n, resplit_seed)}


def crossfit_experiment(
    alphas: Sequence[float],
    n_tasks: int,
    reps: int,
    delta: DeltaLike,
    seed: int,
    m: int = 4,
    n: int = 100,
    jobs: int = 1,
) -> pd.DataFrame:
    """Rows (alpha, rep, xi_12, xi_21, xi_min, true_max, covered, xi_kfold, kfold_true_max, kfold_covered)."""
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}.")

    tasks = [
        (alpha, i, rep, n_tasks, as_delta(delta), seed, m, n) for i, alpha in enumerate(alphas) for rep in range(reps)
    ]
    return pd.DataFrame(map_replicates(_crossfit_task, tasks, jobs))
