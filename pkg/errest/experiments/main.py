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
Command-line entry point: ``errest COMMAND [--flag value ...] [section.key=value ...]``.
"""

import json
import sys
from typing import List, Optional, Tuple

import ray
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .config import Command, RunConfig
from .runner import ExperimentRunner


USAGE = """usage: errest COMMAND [--flag value ...] [section.key=value ...]

commands: finite-sim, means-ci, excess-risk, multitest, crossfit, falcon, pipeline, rademacher-check, summarize
global flags: --seed N --jobs N --format csv|json --out PATH --smoke --config PATH
              --logger console[,wandb] --project NAME --name NAME
command flags map onto the command's config section, e.g. finite-sim --alphas 0,0.5,1 --tasks 500;
summarize takes the input table as its positional argument."""

GLOBAL_FLAGS = ("seed", "jobs", "format", "out", "smoke", "project", "name", "logger")
FLAG_ALIASES = {
    "falcon": {"K": "n_arms", "T": "horizon", "C": "epsilon_scale", "c": "gamma_scale"},
    "pipeline": {"K": "n_arms", "T": "horizon", "lambda": "error_fraction"},
}


class UsageError(ValueError):
    pass


def _is_list_field(section: Optional[str], key: str) -> bool:
    node = RunConfig()
    if section is not None:
        node = getattr(node, section)

    return isinstance(getattr(node, key, None), list)


def _dotlist_entry(section: str, flag: str, value: str) -> str:
    key = FLAG_ALIASES.get(section, {}).get(flag, flag).replace("-", "_")
    scope = None if key in GLOBAL_FLAGS else section
    if _is_list_field(scope, key) and not value.startswith("["):
        value = f"[{value}]"

    return f"{key}={value}" if scope is None else f"{scope}.{key}={value}"


def parse_args(argv: List[str]) -> Tuple[Command, Optional[str], List[str]]:
    """Translate flags into OmegaConf dotlist entries; returns (command, config file, dotlist)."""
    if not argv:
        raise UsageError("missing command.")
    if argv[0] not in {command.value for command in Command}:
        raise UsageError(f"Unknown command: {argv[0]}.")

    command = Command(argv[0])
    dotlist = [f"command={command.value}"]
    config_path = None
    i = 1
    while i < len(argv):
        arg = argv[i]
        if arg.startswith("--"):
            flag, sep, value = arg[2:].partition("=")
            i += 1
            if not sep:
                if flag == "smoke":
                    value = "true"
                elif i < len(argv):
                    value = argv[i]
                    i += 1
                else:
                    raise UsageError(f"flag --{flag} needs a value.")

            if flag == "config":
                config_path = value
            else:
                dotlist.append(_dotlist_entry(command.section, flag, value))
        elif "=" in arg:
            dotlist.append(arg)
            i += 1
        elif command is Command.SUMMARIZE:
            dotlist.append(f"summarize.input={arg}")
            i += 1
        else:
            raise UsageError(f"unexpected argument: {arg}.")

    return command, config_path, dotlist


def load_config(argv: List[str]) -> RunConfig:
    _, config_path, dotlist = parse_args(argv)
    default_config = OmegaConf.structured(RunConfig())
    file_config = OmegaConf.load(config_path) if config_path is not None else OmegaConf.create()
    cli_args = OmegaConf.from_dotlist(dotlist)
    run_config = OmegaConf.merge(default_config, file_config, cli_args)
    run_config: RunConfig = OmegaConf.to_object(run_config)
    run_config.deep_post_init()
    return run_config


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = load_config(argv)
    except (ValueError, AssertionError, OmegaConfBaseException) as exc:
        print(f"errest: {exc}", file=sys.stderr)
        print(USAGE, file=sys.stderr)
        return 2

    print(json.dumps(config.to_dict(), indent=2), file=sys.stderr)
    try:
        ExperimentRunner(config).run()
    finally:
        if ray.is_initialized():
            ray.shutdown()

    return 0


if __name__ == "__main__":
    sys.exit(main())
