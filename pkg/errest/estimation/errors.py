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
Exceptions raised by the estimation engine and the bandit pipeline.
"""


class EmptyClassError(ValueError):
    """The task class (or error list) has no members."""


class EmptyLocalizationError(ValueError):
    """A localization step removed every task: the lower bound c is inconsistent with the data."""

    def __init__(self, iteration: int, threshold: float):
        self.iteration = iteration
        self.threshold = threshold
        super().__init__(
            f"Localized class became empty at iteration {iteration} (threshold {threshold:.6g}). "
            "The lower bound c is inconsistent with the observed estimates."
        )


class InfeasibleConstraintError(ValueError):
    """No probe point of the solver satisfies the membership constraint."""


class SolverTimeoutError(RuntimeError):
    """The supremum solver exceeded its time limit."""


class ZeroPropensityError(ValueError):
    """A policy chose an arm that the logging kernel never samples."""


class UndefinedBoundError(ValueError):
    """A bound is undefined for the given inputs (e.g. M_next with a zero conformal error)."""


class MixedKernelError(ValueError):
    """The error split spans rounds logged under different exploration kernels."""
