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
Counter-based random streams: every replicate owns a generator derived from (base seed, indices).
"""

import numpy as np


def make_rng(seed: int, *indices: int) -> np.random.Generator:
    """Philox stream keyed by the base seed and any number of non-negative stream indices."""
    entropy = [int(seed)] + [int(index) for index in indices]
    assert all(value >= 0 for value in entropy), f"seeds and stream indices must be non-negative, got {entropy}."
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
