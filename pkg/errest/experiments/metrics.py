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
Metric reduction and the summarize aggregation for experiment tables
"""

from typing import Any, Dict, List

import numpy as np
import pandas as pd
from pandas.api.types import is_bool_dtype, is_numeric_dtype


KEY_COLUMNS = ("mode", "alpha", "n", "n_def", "tasks", "weights", "variant", "epoch", "t")
REPLICATE_COLUMNS = ("rep", "trial")


def reduce_metrics(metrics: Dict[str, List[Any]]) -> Dict[str, Any]:
    return {key: np.mean(value) for key, value in metrics.items()}


def compute_timing_metrics(timing_raw: Dict[str, float]) -> Dict[str, Any]:
    return {f"timing_s/{name}": value for name, value in timing_raw.items()}


def _value_columns(frame: pd.DataFrame, keys: List[str]) -> List[str]:
    return [
        column
        for column in frame.columns
        if column not in keys
        and column not in REPLICATE_COLUMNS
        and (is_numeric_dtype(frame[column]) or is_bool_dtype(frame[column]))
    ]


def compute_table_metrics(command: str, frame: pd.DataFrame) -> Dict[str, Any]:
    """Means of every value column over all rows, keyed ``command/column``; infinities are dropped."""
    metrics: Dict[str, List[Any]] = {}
    for column in _value_columns(frame, []):
        if column in KEY_COLUMNS:
            continue

        values = frame[column].astype(np.float64).to_numpy()
        values = values[np.isfinite(values)]
        if values.size > 0:
            metrics[f"{command}/{column}"] = values.tolist()

    return {**reduce_metrics(metrics), f"{command}/rows": len(frame)}


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-group mean, standard error and mean +- 1.96 SE band of every value column.

    Groups are the key columns present in the table; replicate identifiers are dropped. The standard error of a
    single-row group is undefined and left as NaN.
    """
    if frame.empty:
        raise ValueError("cannot summarize an empty table.")

    keys = [column for column in KEY_COLUMNS if column in frame.columns]
    values = _value_columns(frame, keys)
    if not values:
        raise ValueError("the table has no numeric columns to summarize.")

    long = frame.melt(id_vars=keys, value_vars=values, var_name="column", value_name="value")
    long["value"] = long["value"].astype(np.float64)
    grouped = long.groupby(keys + ["column"], sort=True)["value"]
    out = grouped.agg(mean="mean", sd="std", count="count").reset_index()
    out["se"] = out["sd"] / np.sqrt(out["count"])
    out["lo"] = out["mean"] - 1.96 * out["se"]
    out["hi"] = out["mean"] + 1.96 * out["se"]
    return out[keys + ["column", "mean", "se", "lo", "hi", "count"]]
