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
Bandit experiment config
"""

from dataclasses import dataclass, field
from typing import Optional

from ..estimation.config import LocalizationConfig, SolverConfig


def _falcon_localization() -> LocalizationConfig:
    return LocalizationConfig(
        max_iterations=50, solver=SolverConfig(n_restarts=3, max_iterations=200, n_random_probes=64, time_limit=60.0)
    )


@dataclass
class FalconConfig:
    d: int = 10
    n_arms: int = 5
    horizon: int = 2000
    trials: int = 10
    delta: float = 0.05
    epsilon_scale: float = 2.0
    """C in the theoretical rate C (dK + log(1/delta)) / n"""
    gamma_scale: float = 1.0
    """c in gamma = c sqrt(K / max(epsilon, floor))"""
    epsilon_floor: float = 1e-3
    epoch_base: float = 2.0
    noise_sd: float = 0.1
    ridge: float = 1.0
    param_bound: float = 2.0
    label_bound: Optional[float] = None
    """None clips labels and predictions to the largest realized |reward| on S_def and S_err"""
    loss_range: Optional[float] = None
    """None uses (2 y_max)^2 with y_max the label bound"""
    width: str = "normal_quantile"
    """pointwise width of the excess-risk bound, normal_quantile or hoeffding"""
    solver_retries: int = 2
    gamma_override: Optional[float] = None
    localization: LocalizationConfig = field(default_factory=_falcon_localization)

    def post_init(self):
        assert 0 < self.delta < 1, f"delta must be in (0, 1), got {self.delta}."
        assert self.horizon >= 2, f"horizon must be at least 2, got {self.horizon}."
        assert self.n_arms >= 1, f"n_arms must be positive, got {self.n_arms}."
        assert self.trials >= 1, f"trials must be positive, got {self.trials}."
        if self.epsilon_floor <= 0:
            raise ValueError(f"epsilon_floor must be positive, got {self.epsilon_floor}.")
        if self.width not in ("normal_quantile", "hoeffding"):
            raise ValueError(f"width must be normal_quantile or hoeffding, got {self.width}.")
        if self.label_bound is not None and self.label_bound <= 0:
            raise ValueError(f"label_bound must be positive, got {self.label_bound}.")


@dataclass
class PipelineConfig:
    d: int = 3
    n_arms: int = 3
    n_policies: int = 32
    horizon: int = 512
    trials: int = 20
    delta: float = 0.05
    error_fraction: float = 0.5
    """lambda, the share of the last rounds used as the error set"""
    beta_max: float = 0.5
    epoch_base: float = 2.0
    grid_step: float = 0.25
    ridge: float = 1.0
    n_probe_contexts: int = 512
    n_cover_contexts: int = 4096
    min_part_size: int = 4
    """epochs whose error parts are smaller keep exploring uniformly"""
    max_gamma_doublings: int = 60
    eta: Optional[float] = None
    """None searches eta over {1, ..., K}"""
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)

    def post_init(self):
        assert 0 < self.delta < 1, f"delta must be in (0, 1), got {self.delta}."
        assert 0 < self.error_fraction < 1, f"error_fraction must be in (0, 1), got {self.error_fraction}."
        assert 0 < self.beta_max < 1, f"beta_max must be in (0, 1), got {self.beta_max}."
        assert self.horizon >= 4, f"horizon must be at least 4, got {self.horizon}."
        assert self.n_policies >= 1, f"n_policies must be positive, got {self.n_policies}."
        if self.eta is not None and not 1 <= self.eta <= self.n_arms:
            raise ValueError(f"eta must be in [1, K], got {self.eta}.")
