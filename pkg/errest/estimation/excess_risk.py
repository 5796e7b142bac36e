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
Excess-risk error estimation for supervised learning.

For a model g and a reference g_def, theta_g is the defining-set loss advantage of g over g_def and
theta_err,g the same average on the error set. With a Hoeffding width the pointwise bound is
û(g) = theta_err,g - theta_g + 2M sqrt(log(1/delta) / 2n), localized with c = 0. The normal-quantile width scales
with the S_err spread of the loss difference to g_def instead of the a-priori range M.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from ..utils.parallel import map_replicates
from ..utils.seeding import make_rng
from .concentration import DeltaLike, WidthKind, as_delta, hoeffding_excess_width, normal_quantile
from .config import LocalizationConfig
from .core_algos import (
    FiniteTaskClass,
    GapOrientation,
    LocalizationTrace,
    ParametricTaskClass,
    PointwiseBound,
    SplitData,
    localize,
    split_sample,
    sup_parametric,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: float


class ModelClass(ABC):
    """A box-parameterized family of predictors with a squared loss clipped to [0, M]."""

    def __init__(self, lower: np.ndarray, upper: np.ndarray, M: float):
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        if M <= 0:
            raise ValueError(f"loss range M must be positive, got {M}.")

        self.M = float(M)

    @property
    def dim(self) -> int:
        return self.lower.size

    @abstractmethod
    def predict(self, params: np.ndarray, features: np.ndarray) -> np.ndarray:
        """(m, p) parameters and (n, q) features to (m, n) predictions."""
        ...

    def loss(self, params: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        residual = self.predict(np.atleast_2d(params), features) - np.asarray(labels)[None, :]
        return np.clip(residual**2, 0.0, self.M)

    def task_class(self) -> ParametricTaskClass:
        return ParametricTaskClass(self.lower, self.upper)


class LinearModelClass(ModelClass):
    """g(x) = clip(x . beta, -clip, clip) with beta in [-bound, bound]^d."""

    def __init__(
        self,
        d: int,
        bound: float = 1.0,
        clip: float = 1.0,
        label_bound: float = 1.0,
        loss_range: Optional[float] = None,
    ):
        self.d = d
        self.clip = clip
        self.label_bound = label_bound
        M = (clip + label_bound) ** 2 if loss_range is None else loss_range
        super().__init__(np.full(d, -bound), np.full(d, bound), M=M)

    def predict(self, params: np.ndarray, features: np.ndarray) -> np.ndarray:
        return np.clip(np.atleast_2d(params) @ np.asarray(features).T, -self.clip, self.clip)


class PerArmLinearModelClass(LinearModelClass):
    """Reward model f(x, a) = x . theta_a, i.e. a linear model on the block feature e_a (x) x."""

    def __init__(
        self,
        d: int,
        n_arms: int,
        bound: float = 2.0,
        clip: float = 1.0,
        label_bound: Optional[float] = None,
        loss_range: Optional[float] = None,
    ):
        self.n_arms = n_arms
        label_bound = clip if label_bound is None else label_bound
        super().__init__(d * n_arms, bound=bound, clip=clip, label_bound=label_bound, loss_range=loss_range)
        self.context_dim = d

    def featurize(self, contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(contexts)
        features = np.zeros((contexts.shape[0], self.n_arms, self.context_dim))
        features[np.arange(contexts.shape[0]), np.asarray(actions, dtype=np.int64)] = contexts
        return features.reshape(contexts.shape[0], -1)


@dataclass
class SupervisedSplit:
    features_def: np.ndarray
    labels_def: np.ndarray
    features_err: np.ndarray
    labels_err: np.ndarray

    def __post_init__(self):
        if len(self.labels_def) == 0 or len(self.labels_err) == 0:
            raise ValueError("both parts of the split must be nonempty.")

    @classmethod
    def from_split(cls, features: np.ndarray, labels: np.ndarray, split: SplitData) -> "SupervisedSplit":
        (features_def, features_err), (labels_def, labels_err) = split.take(features), split.take(labels)
        return cls(features_def, labels_def, features_err, labels_err)

    @property
    def n(self) -> int:
        if len(self.labels_def) != len(self.labels_err):
            raise ValueError(
                f"the excess-risk width needs |S_def| = |S_err|, "
                f"got {len(self.labels_def)} and {len(self.labels_err)}."
            )

        return len(self.labels_def)

    @property
    def n_err(self) -> int:
        return len(self.labels_err)


def theta_hats_batch(
    model_class: ModelClass, params: np.ndarray, g_def: np.ndarray, data: SupervisedSplit
) -> Tuple[np.ndarray, np.ndarray]:
    params = np.atleast_2d(params)
    ref_def = model_class.loss(g_def, data.features_def, data.labels_def).mean()
    ref_err = model_class.loss(g_def, data.features_err, data.labels_err).mean()
    theta_def = ref_def - model_class.loss(params, data.features_def, data.labels_def).mean(axis=1)
    theta_err = ref_err - model_class.loss(params, data.features_err, data.labels_err).mean(axis=1)
    return theta_def, theta_err


def theta_hats(
    model_class: ModelClass, g: np.ndarray, g_def: np.ndarray, data: SupervisedSplit
) -> Tuple[float, float]:
    """Average loss advantage of g over g_def on the defining and on the error part."""
    theta_def, theta_err = theta_hats_batch(model_class, g, g_def, data)
    return float(theta_def[0]), float(theta_err[0])


def excess_pointwise_bound(
    model_class: ModelClass,
    g_def: np.ndarray,
    data: SupervisedSplit,
    candidates: Optional[np.ndarray] = None,
    equal_split: bool = True,
    width: WidthKind = WidthKind.HOEFFDING,
) -> PointwiseBound:
    """û over parameter points, or over rows of ``candidates`` when handles are indices of a finite class.

    With ``equal_split=False`` the parts may differ in size and the width uses |S_err|. A normal-quantile
    ``width`` replaces the Hoeffding term by z_{1-delta} times the S_err standard deviation of the per-sample
    loss difference to g_def, over sqrt(|S_err|); it vanishes at g_def and falls back to Hoeffding below two
    error samples.
    """
    width = WidthKind(width)
    if width not in (WidthKind.HOEFFDING, WidthKind.NORMAL_QUANTILE):
        raise ValueError(f"excess-risk width must be hoeffding or normal_quantile, got {width.value}.")

    n = data.n if equal_split else data.n_err
    ref_err = model_class.loss(g_def, data.features_err, data.labels_err)[0]

    def lookup(handles):
        return candidates[np.asarray(handles, dtype=np.int64)] if candidates is not None else handles

    def b_width(handles, delta):
        if width is WidthKind.HOEFFDING or data.n_err < 2:
            return hoeffding_excess_width(model_class.M, n, delta).value

        diffs = model_class.loss(lookup(handles), data.features_err, data.labels_err) - ref_err[None, :]
        return normal_quantile(1.0 - delta) * diffs.std(axis=1, ddof=1) / math.sqrt(data.n_err)

    return PointwiseBound(
        theta_def=lambda handles: theta_hats_batch(model_class, lookup(handles), g_def, data)[0],
        theta_err=lambda handles: theta_hats_batch(model_class, lookup(handles), g_def, data)[1],
        b_width=b_width,
        orientation=GapOrientation.ERR_MINUS_DEF,
    )


def u_excess(
    model_class: ModelClass, g: np.ndarray, g_def: np.ndarray, data: SupervisedSplit, delta: DeltaLike
) -> float:
    pb = excess_pointwise_bound(model_class, g_def, data)
    return float(pb.u(np.atleast_2d(g), as_delta(delta))[0])


def vc_baseline(d: int, n_def: int, delta: DeltaLike) -> float:
    """2 (d + log(1/delta)) / n_def."""
    delta = as_delta(delta)
    if n_def < 1:
        raise ValueError(f"n_def must be at least 1, got {n_def}.")

    return 2.0 * (d + math.log(1.0 / delta)) / n_def


@dataclass
class ExcessRiskReport:
    g_def: np.ndarray
    trace: LocalizationTrace
    bound_uniform: float
    bound_erm: float
    vc_baseline: float
    max_theta_def: float
    erm_valid: bool
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def excess_risk_bound(
    model_class: ModelClass,
    g_def: np.ndarray,
    data: SupervisedSplit,
    delta: DeltaLike,
    config: Optional[LocalizationConfig] = None,
    candidates: Optional[np.ndarray] = None,
    erm_tolerance: float = 1e-9,
    rng: Optional[np.random.Generator] = None,
    equal_split: bool = True,
    width: WidthKind = WidthKind.HOEFFDING,
) -> ExcessRiskReport:
    """Localized excess-risk bound of g_def with c = 0.

    Over a finite ``candidates`` matrix the maxima are exact; otherwise the model class box is searched with the
    multi-start solver, seeded at g_def. ``bound_erm`` (the last localized bound) is only a valid report when
    g_def minimizes the defining-set loss over the final class, which ``erm_valid`` records.
    """
    config = config or LocalizationConfig()
    delta = as_delta(delta)
    g_def = np.asarray(g_def, dtype=np.float64)
    pb = excess_pointwise_bound(model_class, g_def, data, candidates, equal_split=equal_split, width=width)

    if candidates is not None:
        candidates = np.atleast_2d(candidates)
        task_class = FiniteTaskClass(candidates.shape[0])
        trace = localize(task_class, pb, 0.0, delta, config)
        members = task_class.handles[trace.contains(task_class.handles)]
        max_theta_def = float(np.max(pb.theta_def(members)))
        diagnostics: Dict[str, Any] = {}
    else:
        task_class = model_class.task_class()
        seed = np.clip(g_def, model_class.lower, model_class.upper)
        trace = localize(task_class, pb, 0.0, delta, config, seeds=[seed], rng=rng)
        result = sup_parametric(
            pb.theta_def,
            model_class.lower,
            model_class.upper,
            constraint=trace.final_constraint,
            config=config.solver,
            seeds=[seed] + [np.asarray(point) for point in trace.argmax_sequence],
            rng=rng,
            batched=True,
        )
        max_theta_def = result.value
        diagnostics = {
            "n_evaluations": sum(d.n_evaluations for d in trace.diagnostics if d is not None),
            "restart_values": [d.restart_values for d in trace.diagnostics if d is not None],
        }

    erm_valid = max_theta_def <= erm_tolerance
    if not erm_valid:
        logger.debug(f"g_def does not minimize the defining loss on the final class ({max_theta_def:.3g}).")

    return ExcessRiskReport(
        g_def=g_def,
        trace=trace,
        bound_uniform=max_theta_def + trace.final,
        bound_erm=trace.final,
        vc_baseline=vc_baseline(model_class.dim, len(data.labels_def), delta),
        max_theta_def=max_theta_def,
        erm_valid=erm_valid,
        diagnostics=diagnostics,
    )


def fit_erm_linear(features: np.ndarray, labels: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Solve (X^T X + ridge I) beta = X^T y."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64)
    if ridge < 0:
        raise ValueError(f"ridge must be non-negative, got {ridge}.")

    gram = features.T @ features + ridge * np.eye(features.shape[1])
    if ridge == 0 and np.linalg.matrix_rank(features) < features.shape[1]:
        raise ValueError("normal equations are singular; use ridge > 0 or more samples.")

    return np.linalg.solve(gram, features.T @ labels)


def sample_unit_sphere(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def linear_dgp(
    n: int, beta: np.ndarray, rng: np.random.Generator, noise_half_width: float = 0.5
) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-norm contexts and labels x . beta + Unif[-w, w]."""
    features = sample_unit_sphere(n, beta.size, rng)
    return features, features @ beta + rng.uniform(-noise_half_width, noise_half_width, size=n)


def true_excess_risk(
    beta_hat: np.ndarray,
    beta: np.ndarray,
    model_class: Optional[LinearModelClass] = None,
    rng: Optional[np.random.Generator] = None,
    mc_draws: int = 200_000,
    noise_half_width: float = 0.5,
) -> float:
    """R(beta_hat) - R(beta) for the unit-sphere linear DGP.

    Unclipped predictions give E[(x . (beta_hat - beta))^2] = |beta_hat - beta|^2 / d; otherwise Monte-Carlo.
    """
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    model_class = model_class or LinearModelClass(beta.size)
    if np.linalg.norm(beta_hat) <= model_class.clip and np.linalg.norm(beta) <= model_class.clip:
        return float(np.sum((beta_hat - beta) ** 2) / beta.size)

    rng = rng if rng is not None else np.random.default_rng(0)
    features, labels = linear_dgp(mc_draws, beta, rng, noise_half_width)
    losses = model_class.loss(np.stack([beta_hat, beta]), features, labels).mean(axis=1)
    return float(losses[0] - losses[1])


def linear_risk_replicate(
    n: int,
    d: int,
    delta: float,
    rng: np.random.Generator,
    config: Optional[LocalizationConfig] = None,
    ridge: float = 0.0,
    beta_norm: float = 0.5,
    width: WidthKind = WidthKind.HOEFFDING,
) -> Dict[str, Any]:
    """One draw of the linear-regression protocol; n is the total size, split evenly."""
    beta = rng.standard_normal(d)
    beta *= beta_norm / np.linalg.norm(beta)
    n_def = n // 2
    features, labels = linear_dgp(2 * n_def, beta, rng)
    data = SupervisedSplit.from_split(features, labels, split_sample(2 * n_def, 0.5))

    model_class = LinearModelClass(d)
    g_def = fit_erm_linear(data.features_def, data.labels_def, ridge)
    report = excess_risk_bound(model_class, g_def, data, delta, config, rng=rng, width=width)
    true_excess = true_excess_risk(g_def, beta, model_class, rng=rng)
    xi = report.trace.xi_sequence
    return {
        "n_def": n_def,
        "true_excess": true_excess,
        "ee_bound_erm": report.bound_erm,
        "ee_bound_uniform": report.bound_uniform,
        "vc_bound": report.vc_baseline,
        "vc_ratio": report.bound_erm / report.vc_baseline,
        "k_iterations": report.trace.iterations,
        "covered": bool(report.bound_erm >= true_excess),
        "erm_valid": report.erm_valid,
        "monotone": bool(all(b <= a for a, b in zip(xi, xi[1:]))),
    }


def _linear_risk_task(n, rep, n_index, d, delta, seed, config, ridge, width):
    row = linear_risk_replicate(n, d, delta, make_rng(seed, n_index, rep), config, ridge, width=width)
    return {"n": n, "rep": rep, **row}


def linear_risk_experiment(
    ns,
    reps: int,
    delta: DeltaLike,
    seed: int,
    d: int = 10,
    config: Optional[LocalizationConfig] = None,
    ridge: float = 0.0,
    jobs: int = 1,
    width: WidthKind = WidthKind.HOEFFDING,
) -> pd.DataFrame:
    """Rows (n, rep, n_def, true_excess, ee_bound_erm, ee_bound_uniform, vc_bound, vc_ratio, k_iterations, ...).

    ``vc_ratio`` is ee_bound_erm over the VC baseline at the same n_def.
    """
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}.")
    for n in ns:
        if n < 4:
            raise ValueError(f"dataset sizes must be at least 4, got {n}.")

    delta = as_delta(delta)
    width = WidthKind(width)
    tasks = [(n, rep, i, d, delta, seed, config, ridge, width) for i, n in enumerate(ns) for rep in range(reps)]
    return pd.DataFrame(map_replicates(_linear_risk_task, tasks, jobs))
