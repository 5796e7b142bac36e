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
Experiment config
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from enum import Enum
from typing import List, Optional

from ..bandit.config import FalconConfig, PipelineConfig
from ..estimation.config import LocalizationConfig, SolverConfig


def recursive_post_init(dataclass_obj):
    if hasattr(dataclass_obj, "post_init"):
        dataclass_obj.post_init()

    for attr in fields(dataclass_obj):
        if is_dataclass(getattr(dataclass_obj, attr.name)):
            recursive_post_init(getattr(dataclass_obj, attr.name))


class Command(str, Enum):
    """
    Using an enumeration class to avoid spelling errors in command names
    """

    FINITE_SIM = "finite-sim"
    MEANS_CI = "means-ci"
    EXCESS_RISK = "excess-risk"
    MULTITEST = "multitest"
    CROSSFIT = "crossfit"
    FALCON = "falcon"
    PIPELINE = "pipeline"
    RADEMACHER_CHECK = "rademacher-check"
    SUMMARIZE = "summarize"

    @property
    def section(self) -> str:
        return self.value.replace("-", "_")


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}.")


def _check_reps(reps: int):
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}.")


@dataclass
class FiniteSimConfig:
    mode: str = "correlated"
    """correlated compares the EE and union bounds; coverage records how often the EE bound covers the maximum"""
    alphas: List[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    tasks: int = 500
    reps: int = 100
    delta: float = 0.1

    def post_init(self):
        if self.mode not in ("correlated", "coverage"):
            raise ValueError(f"Unknown finite-sim mode: {self.mode}.")

        _check_delta(self.delta)
        _check_reps(self.reps)
        for alpha in self.alphas:
            if not 0 <= alpha <= 1:
                raise ValueError(f"alpha must be in [0, 1], got {alpha}.")

    def smoke(self):
        self.tasks, self.reps = 50, 3


@dataclass
class MeansCIConfig:
    mode: str = "gaussian"
    tasks: int = 100
    n: int = 50
    attributes: int = 3
    """binary attributes defining the subgroups in subgroup mode"""
    reps: int = 200
    delta: float = 0.05

    def post_init(self):
        if self.mode not in ("gaussian", "subgroup"):
            raise ValueError(f"Unknown means-ci mode: {self.mode}.")

        _check_delta(self.delta)
        _check_reps(self.reps)
        assert self.n >= 2, f"n must be at least 2, got {self.n}."

    def smoke(self):
        self.tasks, self.n, self.attributes, self.reps = 10, 20, 2, 3


def _excess_risk_localization() -> LocalizationConfig:
    return LocalizationConfig(max_iterations=20, solver=SolverConfig(n_restarts=5, max_iterations=300))


@dataclass
class ExcessRiskConfig:
    d: int = 10
    ns: List[int] = field(default_factory=lambda: [100, 400, 1000])
    """total sample sizes, split evenly into the defining and error parts"""
    reps: int = 200
    delta: float = 0.05
    ridge: float = 0.0
    width: str = "hoeffding"
    """pointwise width, hoeffding or normal_quantile"""
    localization: LocalizationConfig = field(default_factory=_excess_risk_localization)

    def post_init(self):
        _check_delta(self.delta)
        _check_reps(self.reps)
        for n in self.ns:
            if n < 2 * self.d:
                raise ValueError(f"n must be at least 2d = {2 * self.d}, got {n}.")
        if self.width not in ("hoeffding", "normal_quantile"):
            raise ValueError(f"width must be hoeffding or normal_quantile, got {self.width}.")

    def smoke(self):
        self.d, self.ns, self.reps = 3, [40], 2
        self.localization.max_iterations = 5
        self.localization.solver.n_restarts = 2
        self.localization.solver.max_iterations = 50
        self.localization.solver.n_random_probes = 32


@dataclass
class MultitestConfig:
    tasks: int = 200
    n: int = 50
    reps: int = 1000
    delta: float = 0.05
    alt_fraction: float = 0.0
    effect: float = 0.5

    def post_init(self):
        _check_delta(self.delta)
        _check_reps(self.reps)
        assert 0 <= self.alt_fraction <= 1, f"alt_fraction must be in [0, 1], got {self.alt_fraction}."

    def smoke(self):
        self.tasks, self.n, self.reps = 20, 10, 5


@dataclass
class CrossfitConfig:
    alphas: List[float] = field(default_factory=lambda: [0.5])
    tasks: int = 500
    reps: int = 500
    delta: float = 0.1
    folds: int = 4
    n: int = 100
    """raw samples per task used by the random-resplit bound"""

    def post_init(self):
        _check_delta(self.delta)
        _check_reps(self.reps)
        assert self.folds >= 1, f"folds must be positive, got {self.folds}."

    def smoke(self):
        self.tasks, self.reps, self.folds, self.n = 20, 3, 2, 20


@dataclass
class RademacherConfig:
    reps: int = 500
    max_points: int = 10
    max_functions: int = 8
    domain: int = 4
    delta: float = 0.5
    bound: float = 1.0

    def post_init(self):
        _check_reps(self.reps)
        assert self.delta > 0, f"delta must be positive, got {self.delta}."
        assert self.bound > 0, f"bound must be positive, got {self.bound}."

    def smoke(self):
        self.reps, self.max_points, self.max_functions = 5, 4, 3


@dataclass
class SummarizeConfig:
    input: str = ""

    def post_init(self):
        pass

    def smoke(self):
        pass


def _falcon_smoke(config: FalconConfig):
    config.d, config.n_arms, config.horizon, config.trials = 3, 3, 64, 1
    config.localization.max_iterations = 3
    config.localization.solver.n_restarts = 1
    config.localization.solver.max_iterations = 20
    config.localization.solver.n_random_probes = 16


def _pipeline_smoke(config: PipelineConfig):
    config.n_policies, config.horizon, config.trials = 8, 64, 1
    config.n_probe_contexts, config.n_cover_contexts = 64, 256


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    jobs: int = 1
    format: str = "csv"
    out: Optional[str] = None
    smoke: bool = False
    project: str = "errest"
    name: Optional[str] = None
    logger: List[str] = field(default_factory=lambda: ["console"])
    finite_sim: FiniteSimConfig = field(default_factory=FiniteSimConfig)
    means_ci: MeansCIConfig = field(default_factory=MeansCIConfig)
    excess_risk: ExcessRiskConfig = field(default_factory=ExcessRiskConfig)
    multitest: MultitestConfig = field(default_factory=MultitestConfig)
    crossfit: CrossfitConfig = field(default_factory=CrossfitConfig)
    falcon: FalconConfig = field(default_factory=FalconConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    rademacher_check: RademacherConfig = field(default_factory=RademacherConfig)
    summarize: SummarizeConfig = field(default_factory=SummarizeConfig)

    def post_init(self):
        if self.command not in {command.value for command in Command}:
            raise ValueError(f"Unknown command: {self.command}.")

        command = Command(self.command)
        if self.format not in ("csv", "json"):
            raise ValueError(f"Unknown output format: {self.format}.")
        if self.jobs < 1:
            raise ValueError(f"jobs must be at least 1, got {self.jobs}.")
        if self.name is None:
            self.name = command.value

        if self.smoke:
            if command is Command.FALCON:
                _falcon_smoke(self.falcon)
            elif command is Command.PIPELINE:
                _pipeline_smoke(self.pipeline)
            else:
                self.command_config.smoke()

    @property
    def command_config(self):
        return getattr(self, Command(self.command).section)

    def deep_post_init(self):
        recursive_post_init(self)

    def to_dict(self):
        return asdict(self)
