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
Fan replicates out to ray tasks. Results always come back in submission order.
"""

from typing import Any, Callable, List, Sequence, Tuple

import ray


def _call(fn: Callable, args: Tuple) -> Any:
    return fn(*args)


_remote_call = ray.remote(num_cpus=1)(_call)


def map_replicates(fn: Callable, tasks: Sequence[Tuple], jobs: int = 1) -> List[Any]:
    """Apply ``fn(*args)`` to every task tuple, in-process when jobs <= 1."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*args) for args in tasks]

    if not ray.is_initialized():
        # this is for local ray cluster
        ray.init(num_cpus=jobs, include_dashboard=False, log_to_driver=False)

    return ray.get([_remote_call.remote(fn, tuple(args)) for args in tasks])
