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
Engine config
"""

from dataclasses import dataclass, field
from typing import Optional


@dataclass
class SolverConfig:
    n_restarts: int = 10
    max_iterations: int = 500
    grid_resolution: int = 101
    """probes per coordinate when the domain has one dimension"""
    grid_resolution_2d: int = 41
    n_random_probes: int = 256
    """probes used when the domain has more than two dimensions"""
    initial_step: float = 0.1
    """first ascent step, as a fraction of the box width"""
    min_step: float = 1e-10
    fd_scale: float = 1e-5
    value_tolerance: float = 1e-12
    time_limit: Optional[float] = None
    """seconds per call, None disables the check"""
    seed: int = 0

    def post_init(self):
        assert self.n_restarts >= 1, f"n_restarts must be positive, got {self.n_restarts}."
        assert self.max_iterations >= 1, f"max_iterations must be positive, got {self.max_iterations}."
        assert self.grid_resolution >= 2, f"grid_resolution must be at least 2, got {self.grid_resolution}."
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError(f"time_limit must be positive, got {self.time_limit}.")


@dataclass
class LocalizationConfig:
    max_iterations: int = 50
    tolerance: float = 1e-6
    solver: SolverConfig = field(default_factory=SolverConfig)

    def post_init(self):
        assert self.max_iterations >= 1, f"max_iterations must be positive, got {self.max_iterations}."
        assert self.tolerance >= 0, f"tolerance must be non-negative, got {self.tolerance}."
