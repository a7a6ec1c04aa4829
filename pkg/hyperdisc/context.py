# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

from pathlib import Path
from typing import NamedTuple

import click

from .config import BenchmarkConfig


class Context(NamedTuple):
    config: BenchmarkConfig
    out: Path
    jobs: int = 1


pass_context = click.make_pass_decorator(Context, ensure=True)
