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
Runs one experiment command: simulate, reduce, log and write the table.
"""

import csv
import json
import math
import sys
from contextlib import contextmanager
from typing import Any, Callable, Dict, Optional

import pandas as pd
from codetiming import Timer

from ..bandit.falcon import falcon_experiment
from ..bandit.pipeline import pipeline_experiment
from ..estimation.excess_risk import linear_risk_experiment
from ..estimation.inference import crossfit_experiment, multitest_experiment
from ..estimation.means import correlated_max_experiment, coverage_experiment, means_ci_experiment, subgroup_experiment
from ..estimation.oracles import rademacher_check_experiment
from ..utils.tracking import Tracking
from .config import Command, RunConfig
from .metrics import compute_table_metrics, compute_timing_metrics, summarize


@contextmanager
def _timer(name: str, timing_raw: Dict[str, float]):
    with Timer(name=name, logger=None) as timer:
        yield

    timing_raw[name] = timer.last


def _format_float(value: Any) -> Any:
    if isinstance(value, float):
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"

        return float(f"{value:.9g}")

    return value


def write_table(frame: pd.DataFrame, path: Optional[str], fmt: str = "csv") -> None:
    """CSV with RFC-4180 quoting, CRLF rows and 9 significant digits, or JSON records with the same precision."""
    target = path if path is not None else sys.stdout
    if fmt == "csv":
        frame.to_csv(target, index=False, float_format="%.9g", lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    elif fmt == "json":
        records = [{key: _format_float(value) for key, value in row.items()} for row in frame.to_dict("records")]
        text = json.dumps(records, indent=2)
        if path is None:
            print(text)
        else:
            with open(path, "w") as f:
                f.write(text + "\n")
    else:
        raise ValueError(f"Unknown output format: {fmt}.")


def read_table(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ValueError(f"malformed table {path}: {exc}") from exc


class ExperimentRunner:
    """Dispatches a RunConfig to its experiment and reports through the configured tracking backends."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.command = Command(config.command)
        self.tracker: Optional[Tracking] = None

    def _experiments(self) -> Dict[Command, Callable[[], pd.DataFrame]]:
        config, seed, jobs = self.config, self.config.seed, self.config.jobs

        def finite_sim():
            cfg = config.finite_sim
            experiment = correlated_max_experiment if cfg.mode == "correlated" else coverage_experiment
            frame = experiment(cfg.alphas, cfg.tasks, cfg.reps, cfg.delta, seed, jobs)
            frame.insert(0, "mode", cfg.mode)
            return frame

        def means_ci():
            cfg = config.means_ci
            if cfg.mode == "subgroup":
                frame = subgroup_experiment(cfg.attributes, cfg.n, cfg.reps, cfg.delta, seed, jobs)
            else:
                frame = means_ci_experiment(cfg.tasks, cfg.n, cfg.reps, cfg.delta, seed, jobs)

            frame.insert(0, "mode", cfg.mode)
            return frame

        def excess_risk():
            cfg = config.excess_risk
            return linear_risk_experiment(
                cfg.ns,
                cfg.reps,
                cfg.delta,
                seed,
                d=cfg.d,
                config=cfg.localization,
                ridge=cfg.ridge,
                jobs=jobs,
                width=cfg.width,
            )

        def multitest():
            cfg = config.multitest
            return multitest_experiment(
                cfg.tasks,
                cfg.n,
                cfg.reps,
                cfg.delta,
                seed,
                alt_fraction=cfg.alt_fraction,
                effect=cfg.effect,
                jobs=jobs,
            )

        def crossfit():
            cfg = config.crossfit
            return crossfit_experiment(
                cfg.alphas, cfg.tasks, cfg.reps, cfg.delta, seed, m=cfg.folds, n=cfg.n, jobs=jobs
            )

        def rademacher_check():
            cfg = config.rademacher_check
            return rademacher_check_experiment(
                cfg.reps,
                seed,
                max_points=cfg.max_points,
                max_functions=cfg.max_functions,
                n_domain=cfg.domain,
                delta=cfg.delta,
                bound=cfg.bound,
                jobs=jobs,
            )

        return {
            Command.FINITE_SIM: finite_sim,
            Command.MEANS_CI: means_ci,
            Command.EXCESS_RISK: excess_risk,
            Command.MULTITEST: multitest,
            Command.CROSSFIT: crossfit,
            Command.FALCON: lambda: falcon_experiment(config.falcon, seed, jobs),
            Command.PIPELINE: lambda: pipeline_experiment(config.pipeline, seed, jobs),
            Command.RADEMACHER_CHECK: rademacher_check,
            Command.SUMMARIZE: lambda: summarize(read_table(config.summarize.input)),
        }

    def run(self) -> pd.DataFrame:
        self.tracker = Tracking(
            project_name=self.config.project,
            experiment_name=self.config.name,
            default_backend=list(self.config.logger),
            config=self.config.to_dict(),
        )
        timing_raw: Dict[str, float] = {}
        with _timer("simulate", timing_raw):
            frame = self._experiments()[self.command]()

        with _timer("write", timing_raw):
            write_table(frame, self.config.out, self.config.format)

        metrics = compute_table_metrics(self.command.value, frame)
        metrics.update(compute_timing_metrics(timing_raw))
        self.tracker.log(data=metrics, step=0)
        if "wandb" in self.config.logger:
            summary = frame if self.command is Command.SUMMARIZE else summarize(frame)
            self.tracker.log_table(f"{self.command.value}/summary", summary, step=0)

        self.tracker.finish()
        return frame