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
Core functions of data-driven error estimation.
A pointwise bound u(h) is built from a defining estimate, an error-set estimate and a single-task width;
the uniform bound is its maximum over the class, optionally localized with an a-priori lower bound c.
"""

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .concentration import DeltaLike, as_delta
from .config import LocalizationConfig, SolverConfig
from .errors import EmptyClassError, EmptyLocalizationError, InfeasibleConstraintError, SolverTimeoutError


logger = logging.getLogger(__name__)

Handle = Union[int, np.ndarray]
BatchFn = Callable[[np.ndarray], np.ndarray]


class GapOrientation(str, Enum):
    """
    Using an enumeration class to avoid spelling errors in gap orientations
    """

    DEF_MINUS_ERR = "def_minus_err"
    ERR_MINUS_DEF = "err_minus_def"
    ABSOLUTE = "absolute"

    def gap(self, theta_def: np.ndarray, theta_err: np.ndarray) -> np.ndarray:
        if self is GapOrientation.DEF_MINUS_ERR:
            return theta_def - theta_err
        elif self is GapOrientation.ERR_MINUS_DEF:
            return theta_err - theta_def
        else:
            return np.abs(theta_def - theta_err)


class SplitOrdering(str, Enum):
    """
    Using an enumeration class to avoid spelling errors in split orderings
    """

    SEQUENTIAL = "sequential"
    RANDOM = "random"


@dataclass(frozen=True)
class SplitData:
    """Disjoint defining / error index sets of one source sample."""

    def_index: np.ndarray
    err_index: np.ndarray
    fraction: float
    ordering: SplitOrdering = SplitOrdering.SEQUENTIAL

    def __post_init__(self):
        if len(self.err_index) == 0:
            raise ValueError("the error part of a split must be nonempty.")
        if np.intersect1d(self.def_index, self.err_index).size > 0:
            raise ValueError("defining and error parts must be disjoint.")

    def take(self, data: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return data[self.def_index], data[self.err_index]


def split_sample(
    n: int, fraction: float = 0.5, ordering: SplitOrdering = SplitOrdering.SEQUENTIAL, rng=None
) -> SplitData:
    """Split n items so that the error part holds round(fraction * n) of them (at least one)."""
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}.")
    if n < 2:
        raise ValueError(f"need at least two items to split, got {n}.")

    ordering = SplitOrdering(ordering)
    n_err = min(max(int(round(fraction * n)), 1), n - 1)
    if ordering is SplitOrdering.RANDOM:
        assert rng is not None, "a random split needs an rng."
        order = rng.permutation(n)
    else:
        order = np.arange(n)

    return SplitData(
        def_index=np.sort(order[: n - n_err]),
        err_index=np.sort(order[n - n_err :]),
        fraction=fraction,
        ordering=ordering,
    )


class TaskClass(ABC):
    @abstractmethod
    def contains(self, handles: np.ndarray) -> np.ndarray: ...


class FiniteTaskClass(TaskClass):
    """Tasks indexed 0..size-1, with optional display labels."""

    def __init__(self, size: int, labels: Optional[Sequence] = None):
        if size < 1:
            raise EmptyClassError("a finite task class needs at least one task.")

        self.size = size
        self.labels = list(labels) if labels is not None else list(range(size))
        assert len(self.labels) == size, f"got {len(self.labels)} labels for {size} tasks."

    @property
    def handles(self) -> np.ndarray:
        return np.arange(self.size)

    def contains(self, handles: np.ndarray) -> np.ndarray:
        handles = np.asarray(handles)
        return (handles >= 0) & (handles < self.size) & (handles == np.floor(handles))

    def __len__(self):
        return self.size


class ParametricTaskClass(TaskClass):
    """A box of parameters, optionally cut by a membership predicate on (m, p) batches."""

    def __init__(
        self,
        lower: Sequence[float],
        upper: Sequence[float],
        constraint: Optional[BatchFn] = None,
        evaluator: Optional[Callable[[np.ndarray], object]] = None,
    ):
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1 or self.lower.size == 0:
            raise ValueError("box bounds must be nonempty vectors of equal length.")
        if np.any(self.lower >= self.upper):
            raise ValueError("every coordinate needs lower < upper.")

        self.constraint = constraint
        self.evaluator = evaluator

    @property
    def dim(self) -> int:
        return self.lower.size

    def handle(self, point: np.ndarray):
        return self.evaluator(point) if self.evaluator is not None else point

    def contains(self, handles: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(handles, dtype=np.float64))
        inside = np.all((points >= self.lower - 1e-12) & (points <= self.upper + 1e-12), axis=1)
        if self.constraint is not None:
            inside &= np.asarray(self.constraint(points), dtype=bool)

        return inside


@dataclass
class PointwiseBound:
    """u(h) = b(h, delta) + gap(theta_def(h), theta_err(h)), all callables vectorized over handle batches."""

    theta_def: BatchFn
    theta_err: BatchFn
    b_width: Callable[[np.ndarray, float], Union[float, np.ndarray]]
    orientation: GapOrientation = GapOrientation.DEF_MINUS_ERR

    @classmethod
    def from_arrays(
        cls,
        theta_def: Sequence[float],
        theta_err: Sequence[float],
        b: Union[float, Sequence[float], Callable[[float], Union[float, np.ndarray]]],
        orientation: GapOrientation = GapOrientation.DEF_MINUS_ERR,
    ) -> "PointwiseBound":
        """Finite class given by per-task arrays; b may depend on delta through a callable."""
        theta_def = np.asarray(theta_def, dtype=np.float64)
        theta_err = np.asarray(theta_err, dtype=np.float64)
        assert theta_def.shape == theta_err.shape, "theta arrays must have the same shape."

        if callable(b):
            width_fn = b
        else:
            width = np.broadcast_to(np.asarray(b, dtype=np.float64), theta_def.shape)

            def width_fn(delta):
                return width

        def b_width(handles, delta):
            return np.broadcast_to(width_fn(delta), theta_def.shape)[handles]

        return cls(
            theta_def=lambda handles: theta_def[handles],
            theta_err=lambda handles: theta_err[handles],
            b_width=b_width,
            orientation=GapOrientation(orientation),
        )

    def u(self, handles: np.ndarray, delta: float) -> np.ndarray:
        theta_def = np.asarray(self.theta_def(handles), dtype=np.float64)
        theta_err = np.asarray(self.theta_err(handles), dtype=np.float64)
        width = np.asarray(self.b_width(handles, delta), dtype=np.float64)
        assert np.all(width >= 0), "pointwise widths must be non-negative."
        return width + self.orientation.gap(theta_def, theta_err)


def pointwise_u(pb: PointwiseBound, h: Handle, delta: DeltaLike, task_class: Optional[TaskClass] = None) -> float:
    delta = as_delta(delta)
    if isinstance(task_class, FiniteTaskClass):
        handles = np.asarray([h])
    else:
        handles = np.atleast_2d(np.asarray(h, dtype=np.float64)) if task_class is not None else np.asarray([h])

    if task_class is not None and not bool(task_class.contains(handles)[0]):
        raise ValueError(f"Task handle {h} is outside the class domain.")

    return float(pb.u(handles, delta)[0])


def pointwise_u_vector(pb: PointwiseBound, handles: np.ndarray, delta: DeltaLike) -> np.ndarray:
    return pb.u(handles, as_delta(delta))


@dataclass
class SolverDiagnostics:
    restart_points: np.ndarray
    restart_values: np.ndarray
    n_evaluations: int = 0
    n_iterations: int = 0
    n_probes: int = 0
    n_feasible_probes: int = 0
    elapsed: float = 0.0


@dataclass
class SupResult:
    value: float
    point: np.ndarray
    diagnostics: SolverDiagnostics


def _as_batched(fn: Optional[Callable], batched: bool) -> Optional[BatchFn]:
    if fn is None or batched:
        return fn

    def batched_fn(points: np.ndarray) -> np.ndarray:
        return np.array([fn(point) for point in points])

    return batched_fn


def _probe_points(lower: np.ndarray, upper: np.ndarray, config: SolverConfig, rng) -> np.ndarray:
    dim = lower.size
    if dim == 1:
        return np.linspace(lower[0], upper[0], config.grid_resolution)[:, None]
    elif dim == 2:
        axes = [np.linspace(lower[i], upper[i], config.grid_resolution_2d) for i in range(2)]
        return np.stack([grid.ravel() for grid in np.meshgrid(*axes, indexing="ij")], axis=1)
    else:
        random_points = lower + (upper - lower) * rng.random((config.n_random_probes, dim))
        return np.vstack([0.5 * (lower + upper)[None, :], random_points])


class _CountingObjective:
    def __init__(self, objective: BatchFn, constraint: Optional[BatchFn]):
        self.objective = objective
        self.constraint = constraint
        self.n_evaluations = 0

    def values(self, points: np.ndarray) -> np.ndarray:
        self.n_evaluations += points.shape[0]
        values = np.asarray(self.objective(points), dtype=np.float64).reshape(points.shape[0])
        return np.where(np.isfinite(values), values, -np.inf)

    def feasible(self, points: np.ndarray) -> np.ndarray:
        if self.constraint is None:
            return np.ones(points.shape[0], dtype=bool)

        return np.asarray(self.constraint(points), dtype=bool).reshape(points.shape[0])


def _fd_gradient(fn: _CountingObjective, x: np.ndarray, lower: np.ndarray, upper: np.ndarray, scale: float):
    dim = x.size
    steps = scale * (1.0 + np.abs(x))
    plus = np.minimum(x + steps, upper)
    minus = np.maximum(x - steps, lower)
    stencil = np.repeat(x[None, :], 2 * dim, axis=0)
    stencil[np.arange(dim), np.arange(dim)] = plus
    stencil[dim + np.arange(dim), np.arange(dim)] = minus
    values = fn.values(stencil)
    span = plus - minus
    with np.errstate(invalid="ignore"):
        grad = np.where(span > 0, (values[:dim] - values[dim:]) / np.where(span > 0, span, 1.0), 0.0)

    return np.where(np.isfinite(grad), grad, 0.0)


def sup_parametric(
    objective: Callable,
    lower: Sequence[float],
    upper: Sequence[float],
    constraint: Optional[Callable] = None,
    config: Optional[SolverConfig] = None,
    seeds: Optional[Sequence[np.ndarray]] = None,
    rng: Optional[np.random.Generator] = None,
    batched: bool = False,
) -> SupResult:
    """Best feasible value of an objective over a box.

    A coarse scan (grid in one or two dimensions, random probes otherwise) selects the starting points of
    projected gradient ascent with central finite differences and backtracking. Seeds are always tried first.

    Args:
        objective: maps a point (p,) to a float, or a batch (m, p) to (m,) when ``batched`` is set.
        constraint: membership predicate with the same calling convention, returning booleans.
        seeds: extra starting points, typically earlier maximizers.

    Returns:
        the best value found, its point and per-restart diagnostics. The value is a lower bound on the supremum.
    """
    config = config or SolverConfig()
    lower = np.asarray(lower, dtype=np.float64).ravel()
    upper = np.asarray(upper, dtype=np.float64).ravel()
    if lower.size == 0 or np.any(lower > upper):
        raise ValueError("the solver domain must be a nonempty box.")

    rng = rng if rng is not None else np.random.default_rng(config.seed)
    fn = _CountingObjective(_as_batched(objective, batched), _as_batched(constraint, batched))
    width = np.where(upper > lower, upper - lower, 1.0)
    start_time = time.perf_counter()

    probes = _probe_points(lower, upper, config, rng)
    if seeds is not None and len(seeds) > 0:
        seed_points = np.clip(np.atleast_2d(np.asarray(seeds, dtype=np.float64)), lower, upper)
        probes = np.vstack([seed_points, probes])
        n_seeds = seed_points.shape[0]
    else:
        n_seeds = 0

    feasible = fn.feasible(probes)
    if not np.any(feasible):
        raise InfeasibleConstraintError(f"constraint is infeasible at all {probes.shape[0]} probe points.")

    probe_values = np.full(probes.shape[0], -np.inf)
    probe_values[feasible] = fn.values(probes[feasible])

    order = [i for i in range(n_seeds) if feasible[i]]
    ranked = np.argsort(-probe_values[n_seeds:], kind="stable") + n_seeds
    order += [int(i) for i in ranked if feasible[i]]
    starts: List[int] = []
    seen = set()
    for index in order:
        key = probes[index].tobytes()
        if key in seen:
            continue

        seen.add(key)
        starts.append(index)
        if len(starts) >= config.n_restarts:
            break

    restart_points, restart_values = [], []
    n_iterations = 0
    for index in starts:
        x, value = probes[index].copy(), probe_values[index]
        step = config.initial_step
        for _ in range(config.max_iterations):
            if config.time_limit is not None and time.perf_counter() - start_time > config.time_limit:
                raise SolverTimeoutError(f"solver exceeded its time limit of {config.time_limit} seconds.")

            n_iterations += 1
            grad = _fd_gradient(fn, x, lower, upper, config.fd_scale) * width
            norm = np.linalg.norm(grad)
            if norm == 0.0:
                break

            direction = grad / norm
            improved = False
            while step >= config.min_step:
                candidate = np.clip(x + step * direction * width, lower, upper)
                if fn.feasible(candidate[None, :])[0]:
                    candidate_value = fn.values(candidate[None, :])[0]
                    if candidate_value > value:
                        improved = True
                        break

                step *= 0.5

            if not improved:
                break

            gain = candidate_value - value
            x, value = candidate, candidate_value
            step = min(2.0 * step, 1.0)
            if gain < config.value_tolerance:
                break

        restart_points.append(x)
        restart_values.append(value)

    restart_points = np.asarray(restart_points)
    restart_values = np.asarray(restart_values)
    best_restart = int(np.argmax(restart_values))
    best_probe = int(np.argmax(probe_values))
    if probe_values[best_probe] > restart_values[best_restart]:
        best_value, best_point = float(probe_values[best_probe]), probes[best_probe].copy()
    else:
        best_value, best_point = float(restart_values[best_restart]), restart_points[best_restart].copy()

    diagnostics = SolverDiagnostics(
        restart_points=restart_points,
        restart_values=restart_values,
        n_evaluations=fn.n_evaluations,
        n_iterations=n_iterations,
        n_probes=probes.shape[0],
        n_feasible_probes=int(np.sum(feasible)),
        elapsed=time.perf_counter() - start_time,
    )
    return SupResult(value=best_value, point=best_point, diagnostics=diagnostics)


@dataclass
class MaxErrorResult:
    xi: float
    argmax: Handle
    diagnostics: Optional[SolverDiagnostics] = None


def solve_max_error(
    task_class: TaskClass,
    pb: PointwiseBound,
    delta: DeltaLike,
    constraint: Optional[BatchFn] = None,
    solver: Optional[SolverConfig] = None,
    seeds: Optional[Sequence[np.ndarray]] = None,
    rng: Optional[np.random.Generator] = None,
) -> MaxErrorResult:
    """Maximum of u over the class (restricted by ``constraint``), with solver diagnostics for parametric classes."""
    delta = as_delta(delta)
    if isinstance(task_class, FiniteTaskClass):
        handles = task_class.handles
        if constraint is not None:
            handles = handles[np.asarray(constraint(handles), dtype=bool)]

        if handles.size == 0:
            raise EmptyClassError("no task satisfies the class constraint.")

        values = pb.u(handles, delta)
        best = int(np.argmax(values))
        return MaxErrorResult(xi=float(values[best]), argmax=int(handles[best]))

    assert isinstance(task_class, ParametricTaskClass), f"Unknown task class: {type(task_class).__name__}."

    def membership(points):
        mask = task_class.contains(points)
        if constraint is not None:
            mask &= np.asarray(constraint(points), dtype=bool)

        return mask

    result = sup_parametric(
        lambda points: pb.u(points, delta),
        task_class.lower,
        task_class.upper,
        constraint=membership,
        config=solver,
        seeds=seeds,
        rng=rng,
        batched=True,
    )
    return MaxErrorResult(xi=result.value, argmax=result.point, diagnostics=result.diagnostics)


def max_error_bound(
    task_class: TaskClass, pb: PointwiseBound, delta: DeltaLike, solver: Optional[SolverConfig] = None
) -> Tuple[float, Handle]:
    """xi = max_h u(h); exact for finite classes (lowest index on ties), a solver lower bound otherwise."""
    result = solve_max_error(task_class, pb, delta, solver=solver)
    return result.xi, result.argmax


class StopReason(str, Enum):
    """
    Using an enumeration class to avoid spelling errors in stop reasons
    """

    NON_DECREASING = "non_decreasing"
    TOLERANCE = "tolerance"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class LocalizationConstraint:
    """Membership predicate of H_k: -theta_def(h) <= xi_j - c for every earlier bound xi_j."""

    theta_def: BatchFn
    c: float
    thresholds: Tuple[float, ...] = ()

    def __call__(self, handles: np.ndarray) -> np.ndarray:
        if len(self.thresholds) == 0:
            return np.ones(len(handles), dtype=bool)

        bound = min(self.thresholds) - self.c
        return -np.asarray(self.theta_def(handles), dtype=np.float64) <= bound

    def tighten(self, xi: float) -> "LocalizationConstraint":
        return LocalizationConstraint(self.theta_def, self.c, self.thresholds + (float(xi),))


@dataclass
class LocalizationTrace:
    xi_sequence: List[float] = field(default_factory=list)
    class_sequence: List[LocalizationConstraint] = field(default_factory=list)
    stop_reason: StopReason = StopReason.MAX_ITERATIONS
    raw_xi_sequence: List[float] = field(default_factory=list)
    argmax_sequence: List[Handle] = field(default_factory=list)
    diagnostics: List[Optional[SolverDiagnostics]] = field(default_factory=list)

    @property
    def final(self) -> float:
        return min(self.xi_sequence)

    @property
    def iterations(self) -> int:
        return len(self.xi_sequence) - 1

    @property
    def final_constraint(self) -> LocalizationConstraint:
        return self.class_sequence[-1]

    def contains(self, handles: np.ndarray) -> np.ndarray:
        return self.final_constraint(handles)


def localize(
    task_class: TaskClass,
    pb: PointwiseBound,
    c: float,
    delta: DeltaLike,
    config: Optional[LocalizationConfig] = None,
    seeds: Optional[Sequence[np.ndarray]] = None,
    rng: Optional[np.random.Generator] = None,
) -> LocalizationTrace:
    """Iterate H_{k+1} = H_k intersected with {h : -theta_def(h) <= xi_k - c}.

    Stops when xi_k >= xi_{k-1}, when the decrease falls below the tolerance, or after max_iterations.
    The recorded sequence is clamped to be non-increasing; raw solver values are kept alongside.
    """
    config = config or LocalizationConfig()
    delta = as_delta(delta)
    seeds = [np.asarray(seed, dtype=np.float64) for seed in seeds] if seeds is not None else []
    constraint = LocalizationConstraint(pb.theta_def, float(c))

    result = solve_max_error(task_class, pb, delta, solver=config.solver, seeds=seeds or None, rng=rng)
    trace = LocalizationTrace(
        xi_sequence=[result.xi],
        class_sequence=[constraint],
        raw_xi_sequence=[result.xi],
        argmax_sequence=[result.argmax],
        diagnostics=[result.diagnostics],
    )
    for iteration in range(1, config.max_iterations + 1):
        previous = trace.xi_sequence[-1]
        constraint = constraint.tighten(previous)
        if isinstance(task_class, ParametricTaskClass):
            seeds = seeds + [np.asarray(result.argmax, dtype=np.float64)]

        try:
            result = solve_max_error(
                task_class, pb, delta, constraint=constraint, solver=config.solver, seeds=seeds or None, rng=rng
            )
        except (EmptyClassError, InfeasibleConstraintError):
            raise EmptyLocalizationError(iteration, previous - c) from None

        trace.class_sequence.append(constraint)
        trace.raw_xi_sequence.append(result.xi)
        trace.argmax_sequence.append(result.argmax)
        trace.diagnostics.append(result.diagnostics)
        if result.xi >= previous:
            trace.xi_sequence.append(previous)
            trace.stop_reason = StopReason.NON_DECREASING
            break

        trace.xi_sequence.append(result.xi)
        if previous - result.xi < config.tolerance:
            trace.stop_reason = StopReason.TOLERANCE
            break
    else:
        logger.warning(f"Localization hit max_iterations={config.max_iterations} before converging.")

    return trace
