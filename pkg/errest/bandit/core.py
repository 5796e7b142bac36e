# Copyright 2024 Bytedance Ltd. and/or its affiliates
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
Stochastic contextual bandit substrate: linear environments, action kernels, finite policy classes,
a columnar interaction log, IPS estimates, covers and the possibly-optimal policy filter.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..estimation.errors import ZeroPropensityError


class RewardModel(str, Enum):
    """
    Using an enumeration class to avoid spelling errors in reward models
    """

    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"


def sample_contexts(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """N(0, I_d) draws normalized to unit norm."""
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class LinearBanditEnv:
    """Linear rewards x . theta_a with per-arm norms in [0.5, 2.0].

    Gaussian rewards add N(0, noise_sd^2); Bernoulli rewards have mean (1 + x . theta_a / max_a |theta_a|) / 2.
    """

    def __init__(
        self,
        theta: np.ndarray,
        noise_sd: float = 0.1,
        reward_model: RewardModel = RewardModel.GAUSSIAN,
        rng: Optional[np.random.Generator] = None,
    ):
        self.theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if noise_sd < 0:
            raise ValueError(f"noise_sd must be non-negative, got {noise_sd}.")

        self.noise_sd = noise_sd
        self.reward_model = RewardModel(reward_model)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.max_norm = float(np.max(np.linalg.norm(self.theta, axis=1)))

    @classmethod
    def random(
        cls,
        d: int,
        n_arms: int,
        rng: np.random.Generator,
        noise_sd: float = 0.1,
        reward_model: RewardModel = RewardModel.GAUSSIAN,
        norm_range: Tuple[float, float] = (0.5, 2.0),
    ) -> "LinearBanditEnv":
        directions = rng.standard_normal((n_arms, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        norms = rng.uniform(norm_range[0], norm_range[1], size=(n_arms, 1))
        return cls(directions * norms, noise_sd=noise_sd, reward_model=reward_model, rng=rng)

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    @property
    def n_arms(self) -> int:
        return self.theta.shape[0]

    def sample_contexts(self, n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return sample_contexts(n, self.d, rng if rng is not None else self.rng)

    def mean_rewards(self, contexts: np.ndarray) -> np.ndarray:
        """(n, K) expected rewards f*(x, a)."""
        linear = np.atleast_2d(contexts) @ self.theta.T
        if self.reward_model is RewardModel.BERNOULLI:
            return 0.5 * (1.0 + linear / self.max_norm)

        return linear

    def sample_reward_table(self, contexts: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Realized rewards of every arm, drawn before any action is chosen."""
        rng = rng if rng is not None else self.rng
        means = self.mean_rewards(contexts)
        if self.reward_model is RewardModel.BERNOULLI:
            return (rng.random(means.shape) < means).astype(np.float64)

        return means + self.noise_sd * rng.standard_normal(means.shape)

    def policy_value(self, actions: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        """Expected reward of (P, n) or (n,) action arrays on the given contexts, averaged over contexts."""
        means = self.mean_rewards(contexts)
        actions = np.asarray(actions, dtype=np.int64)
        return means[np.arange(means.shape[0]), actions].mean(axis=-1)


class ActionKernel(ABC):
    """A randomized policy p(a | x)."""

    n_arms: int

    @abstractmethod
    def probs(self, contexts: np.ndarray) -> np.ndarray:
        """(n, K) action probabilities."""
        ...


class UniformKernel(ActionKernel):
    def __init__(self, n_arms: int):
        self.n_arms = n_arms

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        return np.full((np.atleast_2d(contexts).shape[0], self.n_arms), 1.0 / self.n_arms)


class FunctionKernel(ActionKernel):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n_arms: int):
        self.fn = fn
        self.n_arms = n_arms

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(contexts)), dtype=np.float64)


def sample_actions(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling with pre-drawn uniforms, one per row."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return np.argmax(cdf > np.asarray(uniforms)[:, None], axis=1)


class LinearPolicy:
    """pi(x) = argmax_a x . w_a."""

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)

    def actions(self, contexts: np.ndarray) -> np.ndarray:
        return np.argmax(np.atleast_2d(contexts) @ self.weights.T, axis=1)


Policy = Union[LinearPolicy, Callable[[np.ndarray], np.ndarray]]


def policy_actions(pi: Policy, contexts: np.ndarray) -> np.ndarray:
    if hasattr(pi, "actions"):
        return np.asarray(pi.actions(contexts), dtype=np.int64)

    return np.asarray(pi(contexts), dtype=np.int64)


class LinearPolicyClass:
    """Finite class of argmax-linear policies; ``index`` keeps ids into the class they were filtered from."""

    def __init__(self, weights: np.ndarray, index: Optional[np.ndarray] = None):
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1, *np.shape(weights)[-2:])
        self.index = np.arange(self.weights.shape[0]) if index is None else np.asarray(index, dtype=np.int64)
        assert self.index.shape[0] == self.weights.shape[0], "one index per policy."

    @classmethod
    def random(cls, n_policies: int, d: int, n_arms: int, rng: np.random.Generator, grid_step: float = 0.25):
        """Scorer weights drawn from N(0, 1) and snapped to a grid of the given step."""
        if n_policies < 1:
            raise ValueError(f"a policy class needs at least one policy, got {n_policies}.")

        weights = np.round(rng.standard_normal((n_policies, n_arms, d)) / grid_step) * grid_step
        return cls(weights)

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, item: int) -> LinearPolicy:
        return LinearPolicy(self.weights[item])

    @property
    def n_arms(self) -> int:
        return self.weights.shape[1]

    def actions(self, contexts: np.ndarray) -> np.ndarray:
        """(P, n) chosen arms."""
        scores = np.einsum("pkd,nd->pnk", self.weights, np.atleast_2d(contexts))
        return np.argmax(scores, axis=2)

    def subset(self, mask: np.ndarray) -> "LinearPolicyClass":
        mask = np.asarray(mask)
        return LinearPolicyClass(self.weights[mask], self.index[mask])


@dataclass
class InteractionRecord:
    x: np.ndarray
    a: int
    r: float
    p_of_a: float
    epoch_id: int
    alpha_t: float
    M_t: float


LOG_KEYS = ("contexts", "actions", "rewards", "propensities", "epochs", "alpha", "M")


@dataclass
class InteractionLog:
    """
    Columnar bandit log. ``batch`` holds one array per key in LOG_KEYS with equal leading size;
    ``meta_info["kernels"]`` maps epoch ids to the kernel that logged them.
    """

    batch: Dict[str, np.ndarray] = field(default_factory=dict)
    meta_info: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.meta_info.setdefault("kernels", {})
        self.check_consistency()

    @classmethod
    def empty(cls, d: int) -> "InteractionLog":
        batch = {key: np.zeros(0) for key in LOG_KEYS}
        batch["contexts"] = np.zeros((0, d))
        batch["actions"] = np.zeros(0, dtype=np.int64)
        batch["epochs"] = np.zeros(0, dtype=np.int64)
        return cls(batch=batch)

    @classmethod
    def from_arrays(
        cls,
        contexts: np.ndarray,
        actions: np.ndarray,
        rewards: np.ndarray,
        propensities: np.ndarray,
        epoch: int,
        alpha: float,
        M: float,
        kernel: Optional[ActionKernel] = None,
    ) -> "InteractionLog":
        """One epoch of rounds logged under a single kernel."""
        n = len(actions)
        batch = {
            "contexts": np.atleast_2d(np.asarray(contexts, dtype=np.float64)),
            "actions": np.asarray(actions, dtype=np.int64),
            "rewards": np.asarray(rewards, dtype=np.float64),
            "propensities": np.asarray(propensities, dtype=np.float64),
            "epochs": np.full(n, epoch, dtype=np.int64),
            "alpha": np.full(n, float(alpha)),
            "M": np.full(n, float(M)),
        }
        meta_info = {"kernels": {epoch: kernel}} if kernel is not None else {}
        return cls(batch=batch, meta_info=meta_info)

    def check_consistency(self):
        missing = [key for key in LOG_KEYS if key not in self.batch]
        assert not missing, f"log is missing keys {missing}."
        size = len(self)
        for key, value in self.batch.items():
            assert len(value) == size, f"key {key} length {len(value)} is not equal to batch size {size}."

        if size > 0:
            propensities = self.batch["propensities"]
            if np.any(propensities <= 0) or np.any(propensities > 1):
                raise ValueError("logged propensities must lie in (0, 1].")
            if np.any(self.batch["alpha"] < 1) or np.any(self.batch["M"] < 1):
                raise ValueError("logged alpha_t and M_t must be at least 1.")

    def __len__(self):
        return self.batch["actions"].shape[0]

    def __getitem__(self, item):
        if isinstance(item, (int, np.integer)):
            return InteractionRecord(
                x=self.batch["contexts"][item],
                a=int(self.batch["actions"][item]),
                r=float(self.batch["rewards"][item]),
                p_of_a=float(self.batch["propensities"][item]),
                epoch_id=int(self.batch["epochs"][item]),
                alpha_t=float(self.batch["alpha"][item]),
                M_t=float(self.batch["M"][item]),
            )

        batch = {key: value[item] for key, value in self.batch.items()}
        epochs = set(np.unique(batch["epochs"]).tolist())
        kernels = {epoch: kernel for epoch, kernel in self.meta_info["kernels"].items() if epoch in epochs}
        return InteractionLog(batch=batch, meta_info={**self.meta_info, "kernels": kernels})

    def select_epochs(self, epochs: Sequence[int]) -> "InteractionLog":
        return self[np.isin(self.batch["epochs"], np.asarray(list(epochs)))]

    @staticmethod
    def concat(data: List["InteractionLog"]) -> "InteractionLog":
        """Concat logs among the round axis; kernel maps are merged and must agree on shared epochs."""
        data = [log for log in data if log is not None]
        assert len(data) > 0, "nothing to concat."
        batch = {key: np.concatenate([log.batch[key] for log in data], axis=0) for key in LOG_KEYS}
        kernels: Dict[int, ActionKernel] = {}
        for log in data:
            for epoch, kernel in log.meta_info["kernels"].items():
                if epoch in kernels and kernels[epoch] is not kernel:
                    raise ValueError(f"epoch {epoch} is logged under two different kernels.")
                kernels[epoch] = kernel

        return InteractionLog(batch=batch, meta_info={**data[0].meta_info, "kernels": kernels})

    @property
    def contexts(self) -> np.ndarray:
        return self.batch["contexts"]

    @property
    def epoch_ids(self) -> List[int]:
        return sorted(np.unique(self.batch["epochs"]).tolist())

    def epoch_M(self) -> Dict[int, float]:
        return {epoch: float(self.batch["M"][self.batch["epochs"] == epoch][0]) for epoch in self.epoch_ids}

    def epoch_kernels(self) -> Dict[int, ActionKernel]:
        return {epoch: self.meta_info["kernels"][epoch] for epoch in self.epoch_ids}


def epoch_schedule(T: int, base: float = 2.0) -> List[int]:
    """Epoch ends {ceil(base^k) : k >= 1} within [1, T], ending at T."""
    if T < 2:
        raise ValueError(f"horizon T must be at least 2, got {T}.")
    if base <= 1:
        raise ValueError(f"base must exceed 1, got {base}.")

    boundaries = []
    k = 1
    while True:
        boundary = math.ceil(base**k)
        if boundary >= T:
            break
        if not boundaries or boundary > boundaries[-1]:
            boundaries.append(boundary)

        k += 1

    boundaries.append(T)
    return boundaries


def _check_propensities(propensities: np.ndarray):
    if np.any(propensities <= 0):
        raise ZeroPropensityError("IPS estimate needs strictly positive logged propensities.")


def ips_values(actions: np.ndarray, log: InteractionLog) -> np.ndarray:
    """IPS estimates of R(pi) for (P, n) or (n,) action arrays evaluated on the log contexts."""
    _check_propensities(log.batch["propensities"])
    match = np.asarray(actions) == log.batch["actions"]
    return np.mean(match * (log.batch["rewards"] / log.batch["propensities"]), axis=-1)


def ips_policy_diff(pi: Policy, pi_ref: Policy, log: InteractionLog) -> float:
    """Average of r (1{pi(x) = a} - 1{pi_ref(x) = a}) / p over the log, an unbiased estimate of R(pi) - R(pi_ref)."""
    if len(log) == 0:
        raise ValueError("IPS needs a nonempty log.")

    _check_propensities(log.batch["propensities"])
    actions = log.batch["actions"]
    weight = log.batch["rewards"] / log.batch["propensities"]
    diff = (policy_actions(pi, log.contexts) == actions).astype(np.float64) - (
        policy_actions(pi_ref, log.contexts) == actions
    ).astype(np.float64)
    return float(np.mean(diff * weight))


def cover_batch(kernel: ActionKernel, actions: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    """V(p, pi) = mean_x 1 / p(pi(x) | x) for (P, n) or (n,) action arrays."""
    probs = kernel.probs(contexts)
    chosen = probs[np.arange(probs.shape[0]), np.asarray(actions, dtype=np.int64)]
    if np.any(chosen <= 0):
        raise ZeroPropensityError("policy chooses an arm with zero probability under the kernel.")

    return np.mean(1.0 / chosen, axis=-1)


def cover(kernel: ActionKernel, pi: Policy, contexts: np.ndarray) -> float:
    return float(cover_batch(kernel, policy_actions(pi, contexts), contexts))


def filter_pi_tilde(
    policies: LinearPolicyClass,
    log: InteractionLog,
    per_epoch_M: Optional[Dict[int, float]] = None,
    per_epoch_kernel: Optional[Dict[int, ActionKernel]] = None,
    probe_contexts: Optional[np.ndarray] = None,
) -> LinearPolicyClass:
    """Policies sampled with probability >= 1/M_t by every past kernel, on logged plus probe contexts."""
    per_epoch_M = per_epoch_M if per_epoch_M is not None else log.epoch_M()
    per_epoch_kernel = per_epoch_kernel if per_epoch_kernel is not None else log.epoch_kernels()
    contexts = log.contexts
    if probe_contexts is not None:
        contexts = np.concatenate([contexts, probe_contexts], axis=0)

    actions = policies.actions(contexts)
    keep = np.ones(len(policies), dtype=bool)
    for epoch, M in per_epoch_M.items():
        probs = per_epoch_kernel[epoch].probs(contexts)
        chosen = probs[np.arange(probs.shape[0]), actions]
        keep &= np.all(chosen >= 1.0 / M - 1e-12, axis=1)

    return policies.subset(keep)


class RidgeArmRegressor:
    """Per-arm ridge regression f(x, a) = x . theta_a with leverage widths for UCB-style sets."""

    def __init__(self, d: int, n_arms: int, ridge: float = 1.0):
        if ridge <= 0:
            raise ValueError(f"ridge must be positive, got {ridge}.")

        self.d = d
        self.n_arms = n_arms
        self.ridge = ridge
        self.gram = np.tile(ridge * np.eye(d), (n_arms, 1, 1))
        self.theta = np.zeros((n_arms, d))
        self.sigma = 1.0

    def fit(self, contexts: np.ndarray, actions: np.ndarray, rewards: np.ndarray) -> "RidgeArmRegressor":
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64)).reshape(-1, self.d)
        actions = np.asarray(actions, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=np.float64)
        for a in range(self.n_arms):
            x_a = contexts[actions == a]
            self.gram[a] = self.ridge * np.eye(self.d) + x_a.T @ x_a
            self.theta[a] = np.linalg.solve(self.gram[a], x_a.T @ rewards[actions == a])

        if len(rewards) > 1:
            residual = rewards - np.einsum("nd,nd->n", contexts, self.theta[actions])
            self.sigma = float(np.sqrt(np.sum(residual**2) / (len(rewards) - 1)))

        return self

    @classmethod
    def from_log(cls, log: InteractionLog, n_arms: int, ridge: float = 1.0) -> "RidgeArmRegressor":
        regressor = cls(log.contexts.shape[1], n_arms, ridge)
        return regressor.fit(log.contexts, log.batch["actions"], log.batch["rewards"])

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        """(n, K) predicted rewards."""
        return np.atleast_2d(contexts) @ self.theta.T

    def width(self, contexts: np.ndarray) -> np.ndarray:
        """(n, K) sigma * sqrt(x^T A_a^{-1} x)."""
        contexts = np.atleast_2d(contexts)
        leverage = np.einsum("nd,kde,ne->nk", contexts, np.linalg.inv(self.gram), contexts)
        return self.sigma * np.sqrt(np.maximum(leverage, 0.0))

    @property
    def params(self) -> np.ndarray:
        """Flattened (K d,) parameters in the block layout of the joint per-arm feature map."""
        return self.theta.reshape(-1)


@dataclass
class TrialStream:
    """Contexts, full reward tables and action uniforms drawn up front so paired runs see identical randomness."""

    contexts: np.ndarray
    reward_table: np.ndarray
    uniforms: np.ndarray

    @classmethod
    def draw(cls, env: LinearBanditEnv, T: int, rng: np.random.Generator) -> "TrialStream":
        contexts = env.sample_contexts(T, rng)
        reward_table = env.sample_reward_table(contexts, rng)
        return cls(contexts=contexts, reward_table=reward_table, uniforms=rng.random(T))

    def __len__(self):
        return self.contexts.shape[0]
