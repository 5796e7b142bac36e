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
Console logger for experiment summaries. Writes to stderr so that tables sent to stdout stay clean.

Metric keys of the form ``"<command>/<name>"`` are grouped by command so one line shows one experiment.
"""

import numbers
import sys
from typing import Any, Dict, List, Optional, TextIO

import numpy as np


def format_experiment_metrics(data: Dict[str, Any], step: int, precision: int = 3) -> str:
    """Render numeric metrics grouped by command prefix; booleans print as 0/1 and other values are dropped."""
    groups: Dict[str, List[str]] = {}
    for key, value in data.items():
        if isinstance(value, (bool, np.bool_)):
            value = int(value)
        elif isinstance(value, numbers.Integral):
            pass
        elif isinstance(value, numbers.Real):
            value = f"{value:.{precision}f}"
        else:
            continue

        command, _, name = key.rpartition("/")
        groups.setdefault(command, []).append(f"{name}={value}")

    parts = [f"step {step}"]
    for command, metrics in groups.items():
        parts.append(f"{command}: {' '.join(metrics)}" if command else " ".join(metrics))

    return " | ".join(parts)


class LocalLogger:
    def __init__(self, stream: Optional[TextIO] = None, precision: int = 3):
        self.stream = stream
        self.precision = precision

    def flush(self):
        (self.stream or sys.stderr).flush()

    def log(self, data: Dict[str, Any], step: int) -> None:
        line = format_experiment_metrics(data, step=step, precision=self.precision)
        print(line, file=self.stream or sys.stderr, flush=True)
