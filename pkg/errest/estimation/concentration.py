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
Single-task high-probability widths: normal quantiles, Hoeffding and Freedman-style IPS widths.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union


class WidthKind(str, Enum):
    """
    Using an enumeration class to avoid spelling errors in width kinds
    """

    NORMAL_QUANTILE = "normal_quantile"
    HOEFFDING = "hoeffding"
    FREEDMAN_IPS = "freedman_ips"


@dataclass(frozen=True)
class ConfidenceLevel:
    delta: float

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must be in (0, 1), got {self.delta}.")

    def __float__(self) -> float:
        return float(self.delta)


@dataclass(frozen=True)
class Width:
    value: float
    kind: WidthKind

    def __post_init__(self):
        assert math.isfinite(self.value) and self.value >= 0, f"width must be finite and >= 0, got {self.value}."

    def __float__(self) -> float:
        return float(self.value)


DeltaLike = Union[float, ConfidenceLevel]


def as_delta(delta: DeltaLike) -> float:
    """Validate a confidence parameter and return it as a float."""
    if isinstance(delta, ConfidenceLevel):
        return delta.delta

    return ConfidenceLevel(float(delta)).delta


# rational approximation of the inverse normal CDF (P. J. Acklam)
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _acklam_lower(p: float) -> float:
    """Initial guess for p <= 0.5."""
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den

    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def _lower_quantile(p: float) -> float:
    x = _acklam_lower(p)
    # one Halley refinement against the erfc-based CDF
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF.

    Args:
        p: probability in the open interval (0, 1).

    Returns:
        x with Phi(x) = p. Computed on the lower half and mirrored, so
        ``normal_quantile(1 - p) == -normal_quantile(p)`` up to rounding of ``1 - p``.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be in (0, 1), got {p}.")

    if p == 0.5:
        return 0.0

    if p < 0.5:
        return _lower_quantile(p)

    return -_lower_quantile(1.0 - p)


def hoeffding_excess_width(M: float, n: int, delta: DeltaLike) -> Width:
    """2M * sqrt(log(1/delta) / (2n)), the width for an average of differences with range 2M."""
    delta = as_delta(delta)
    if M < 0:
        raise ValueError(f"M must be non-negative, got {M}.")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}.")

    value = 2.0 * M * math.sqrt(math.log(1.0 / delta) / (2.0 * n))
    return Width(value=value, kind=WidthKind.HOEFFDING)


def freedman_ips_width(delta: DeltaLike, n: int, cover_a: float, cover_b: float) -> Width:
    """sqrt(log(1/delta) / n) * (sqrt(cover_a) + sqrt(cover_b)) for IPS policy differences."""
    delta = as_delta(delta)
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}.")
    if cover_a < 1 or cover_b < 1:
        raise ValueError(f"covers must be at least 1, got {cover_a} and {cover_b}.")

    value = math.sqrt(math.log(1.0 / delta) / n) * (math.sqrt(cover_a) + math.sqrt(cover_b))
    return Width(value=value, kind=WidthKind.FREEDMAN_IPS)


def hoeffding_mean_width(n: int, delta: DeltaLike, value_range: float = 1.0) -> float:
    """One-sided Hoeffding width for a mean of variables with the given range: range * sqrt(log(1/delta) / (2n))."""
    delta = as_delta(delta)
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}.")

    return value_range * math.sqrt(math.log(1.0 / delta) / (2.0 * n))


def normal_mean_width(sd: float, n: int, delta: DeltaLike) -> Width:
    """z_{1-delta} * sd / sqrt(n), the one-sided CLT width for a sample mean."""
    delta = as_delta(delta)
    if sd < 0:
        raise ValueError(f"sd must be non-negative, got {sd}.")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}.")

    return Width(value=normal_quantile(1.0 - delta) * sd / math.sqrt(n), kind=WidthKind.NORMAL_QUANTILE)
