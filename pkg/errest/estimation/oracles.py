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
Brute-force reference computations: exact Rademacher complexities, a bisection normal quantile
and exact maxima of finite error lists.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np
import pandas as pd

from ..utils.parallel import map_replicates
from ..utils.seeding import make_rng
from .errors import EmptyClassError


MAX_SIGN_COLUMNS = 20
MAX_COMPOSITIONS = 500_000

_lgamma = np.vectorize(math.lgamma, otypes=[np.float64])


@dataclass
class FunctionTable:
    """Values f(X_i) of a finite function class, one row per function and one column per sample point."""

    values: np.ndarray
    bound: float = 1.0

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"function table needs at least one row and one column, got {self.values.shape}.")
        if np.any(np.abs(self.values) > self.bound + 1e-12):
            raise ValueError(f"function values must lie in [-{self.bound}, {self.bound}].")

    @property
    def n_points(self) -> int:
        return self.values.shape[1]


def _sign_matrix(n: int) -> np.ndarray:
    codes = np.arange(2**n, dtype=np.int64)[:, None]
    bits = (codes >> np.arange(n, dtype=np.int64)[None, :]) & 1
    return (2 * bits - 1).astype(np.float64)


def exact_rademacher(table: FunctionTable, chunk_size: int = 65536) -> float:
    """E_eps sup_f |(1/n) sum_i eps_i f(X_i)| by enumerating all 2^n sign vectors."""
    n = table.n_points
    if n > MAX_SIGN_COLUMNS:
        raise ValueError(f"exact enumeration supports at most {MAX_SIGN_COLUMNS} points, got {n}.")

    signs = _sign_matrix(n)
    total = 0.0
    for start in range(0, signs.shape[0], chunk_size):
        block = signs[start : start + chunk_size]
        sums = np.abs(block @ table.values.T) / n
        total += float(np.sum(np.max(sums, axis=1)))

    return total / signs.shape[0]


def exact_population_rademacher(values: np.ndarray, probs: np.ndarray, n: int) -> float:
    """R_n(F) = E_{X, eps} sup_f |(1/n) sum_i eps_i f(X_i)| for X drawn from a finite domain.

    Each (sign, point) pair is a category with probability probs[d] / 2; the supremum only depends on the
    category counts, so the expectation is an exact sum over multinomial count vectors.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    probs = np.asarray(probs, dtype=np.float64)
    n_domain = probs.shape[0]
    assert values.shape[1] == n_domain, f"values have {values.shape[1]} columns for {n_domain} domain points."
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}.")
    if np.any(probs < 0) or not math.isclose(float(np.sum(probs)), 1.0, abs_tol=1e-9):
        raise ValueError("probs must be a probability vector.")

    n_categories = 2 * n_domain
    n_compositions = math.comb(n + n_categories - 1, n_categories - 1)
    if n_compositions > MAX_COMPOSITIONS:
        raise ValueError(f"{n_compositions} count vectors exceed the enumeration limit of {MAX_COMPOSITIONS}.")

    combos = itertools.combinations_with_replacement(range(n_categories), n)
    counts = np.array([np.bincount(combo, minlength=n_categories) for combo in combos], dtype=np.float64)
    category_probs = np.concatenate([probs, probs]) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_q = np.log(category_probs)
        log_mass = np.where(counts > 0, counts * log_q[None, :], 0.0).sum(axis=1)

    log_coef = math.lgamma(n + 1) - np.sum(_lgamma(counts + 1.0), axis=1)
    weights = np.exp(log_coef + log_mass)
    net = counts[:, :n_domain] - counts[:, n_domain:]
    sup_abs = np.max(np.abs(net @ values.T), axis=1) / n
    return float(np.sum(weights * sup_abs))


def _erf_series(z: float) -> float:
    """erf via the positive-term series 2/sqrt(pi) * exp(-z^2) * sum 2^k z^(2k+1) / (2k+1)!!."""
    if z < 0:
        return -_erf_series(-z)

    term = z
    total = z
    k = 0
    while k < 2000:
        k += 1
        term *= 2.0 * z * z / (2 * k + 1)
        total += term
        if term < 1e-17 * total:
            break

    return 2.0 / math.sqrt(math.pi) * math.exp(-z * z) * total


def erf_series_cdf(x: float) -> float:
    return 0.5 * (1.0 + _erf_series(x / math.sqrt(2.0)))


def quantile_oracle(p: float, width: float = 1e-12) -> float:
    """Bisection on the erf-series normal CDF down to an interval of the given width."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be in (0, 1), got {p}.")

    if p == 0.5:
        return 0.0

    lo, hi = -40.0, 40.0
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if erf_series_cdf(mid) < p:
            lo = mid
        else:
            hi = mid

    return 0.5 * (lo + hi)


def brute_max_error(errors: Sequence[float]) -> Tuple[float, int]:
    """Exact maximum by linear scan; ties go to the lowest index."""
    if len(errors) == 0:
        raise EmptyClassError("cannot take the maximum of an empty error list.")

    best_index = 0
    best_value = float(errors[0])
    for index in range(1, len(errors)):
        value = float(errors[index])
        if value > best_value:
            best_value, best_index = value, index

    return best_value, best_index


def rademacher_check_replicate(
    n: int, n_functions: int, rng: np.random.Generator, n_domain: int = 4, delta: float = 0.5, bound: float = 1.0
) -> Dict[str, Any]:
    """Compare the split discrepancy sup_f |avg_def f - avg_err f| + delta with 2 R_n(F) + 2 delta.

    The domain is finite with Dirichlet point probabilities, so the population complexity is exact; the
    empirical complexity on the defining sample is reported alongside.
    """
    probs = rng.dirichlet(np.ones(n_domain))
    values = rng.uniform(-bound, bound, size=(n_functions, n_domain))
    def_points = rng.choice(n_domain, size=n, p=probs)
    err_points = rng.choice(n_domain, size=n, p=probs)

    ee_bound = float(np.max(np.abs(values[:, def_points].mean(axis=1) - values[:, err_points].mean(axis=1)))) + delta
    population = exact_population_rademacher(values, probs, n)
    empirical = exact_rademacher(FunctionTable(values[:, def_points], bound=bound))
    return {
        "ee_bound": ee_bound,
        "rademacher_bound": 2.0 * population + 2.0 * delta,
        "empirical_bound": 2.0 * empirical + 2.0 * delta,
        "holds": bool(ee_bound <= 2.0 * population + 2.0 * delta),
        "holds_empirical": bool(ee_bound <= 2.0 * empirical + 2.0 * delta),
        "target_frequency": 1.0 - math.exp(-(delta**2) * n / (4.0 * bound**2)),
    }


def _rademacher_task(rep, seed, max_points, max_functions, n_domain, delta, bound):
    rng = make_rng(seed, rep)
    n = int(rng.integers(1, max_points + 1))
    n_functions = int(rng.integers(1, max_functions + 1))
    row = rademacher_check_replicate(n, n_functions, rng, n_domain, delta, bound)
    return {"rep": rep, "n": n, "n_functions": n_functions, **row}


def rademacher_check_experiment(
    reps: int,
    seed: int,
    max_points: int = 10,
    max_functions: int = 8,
    n_domain: int = 4,
    delta: float = 0.5,
    bound: float = 1.0,
    jobs: int = 1,
) -> pd.DataFrame:
    """Rows (rep, n, n_functions, ee_bound, rademacher_bound, empirical_bound, holds, ...)."""
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}.")
    if max_points > MAX_SIGN_COLUMNS:
        raise ValueError(f"max_points must be at most {MAX_SIGN_COLUMNS}, got {max_points}.")

    tasks = [(rep, seed, max_points, max_functions, n_domain, delta, bound) for rep in range(reps)]
    return pd.DataFrame(map_replicates(_rademacher_task, tasks, jobs))
