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
A unified tracking interface that supports logging experiment summaries to different backends
"""

from typing import Any, Dict, List, Optional, Union

from .logger.aggregate_logger import LocalLogger


class Tracking:
    supported_backend = ["wandb", "console"]

    def __init__(
        self,
        project_name: str,
        experiment_name: str,
        default_backend: Union[str, List[str]] = "console",
        config: Optional[Dict[str, Any]] = None,
    ):
        if isinstance(default_backend, str):
            default_backend = [default_backend]

        for backend in default_backend:
            if backend not in self.supported_backend:
                raise ValueError(f"Unknown logger backend: {backend}.")

        self.logger = {}

        if "wandb" in default_backend:
            import wandb  # type: ignore

            wandb.init(project=project_name, name=experiment_name, config=config)
            self.logger["wandb"] = wandb

        if "console" in default_backend:
            self.console_logger = LocalLogger()
            self.logger["console"] = self.console_logger

    def log(self, data: Dict[str, Any], step: int, backend: Optional[List[str]] = None):
        for default_backend, logger_instance in self.logger.items():
            if backend is None or default_backend in backend:
                logger_instance.log(data=data, step=step)

    def log_table(self, name: str, frame: Any, step: int) -> None:
        """Send a pandas table to the backends that can store one; the console prints only scalars."""
        if "wandb" in self.logger:
            wandb = self.logger["wandb"]
            wandb.log({name: wandb.Table(dataframe=frame)}, step=step)

    def finish(self):
        if "wandb" in self.logger:
            self.logger.pop("wandb").finish(exit_code=0)

    def __del__(self):
        if "wandb" in getattr(self, "logger", {}):
            self.logger["wandb"].finish(exit_code=0)
