#!/usr/bin/env python3
# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

import logging
from pathlib import Path
from typing import Optional, Tuple

import click

from .cli_lib import commands, common_options
from .config import BenchmarkConfig
from .context import Context
from .decorators import exit_on_discovery_error

LOG: logging.Logger = logging.getLogger("hyperdisc")


@common_options
@click.pass_context
def cli(
    ctx: click.Context,
    config_path: Optional[str],
    out: str,
    seed: Optional[int],
    jobs: Optional[int],
    overrides: Tuple[str, ...],
) -> None:
    with exit_on_discovery_error():
        config = (
            BenchmarkConfig.from_file(config_path)
            if config_path is not None
            else BenchmarkConfig()
        )
        config = config.with_overrides(overrides)
        if seed is not None:
            config = config.replace(seed=seed)
        if jobs is not None:
            config = config.replace(jobs=jobs)
    ctx.obj = Context(config=config, out=Path(out), jobs=config.jobs)
    LOG.debug(f"Context: {ctx.obj}")


for command in commands:
    cli.add_command(command)

if __name__ == "__main__":
    logging.basicConfig(format="%(asctime)s [%(levelname)s] %(message)s")
    cli()
