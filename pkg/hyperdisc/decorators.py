# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

import datetime
import logging
import sys
import time
from contextlib import contextmanager
from functools import wraps
from typing import Any, Callable, Iterator

import click

from .errors import DiscoveryError

log: logging.Logger = logging.getLogger("hyperdisc")


def _since(start: float) -> datetime.timedelta:
    return datetime.timedelta(seconds=int(time.time() - start))


def log_time(func: Callable[..., Any]) -> Callable[..., Any]:
    """Log start and wall time of a long-running stage. A stage that fails
    with a DiscoveryError is logged as failed before the error propagates.
    """
    label = func.__name__.title()

    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        start = time.time()
        log.info("%s starting...", label)
        try:
            result = func(*args, **kwargs)
        except DiscoveryError as error:
            log.warning("%s failed after %s: %s", label, _since(start), error)
            raise
        log.info("%s finished (%s)", label, _since(start))
        return result

    return wrapper


@contextmanager
def exit_on_discovery_error() -> Iterator[None]:
    """Turn a DiscoveryError into a diagnostic and its exit status."""
    try:
        yield
    except DiscoveryError as error:
        log.debug("Exiting with status %d", error.exit_code, exc_info=True)
        click.echo(f"Error: {error}", err=True)
        sys.exit(error.exit_code)


@contextmanager
def catch_keyboard_interrupt() -> Iterator[None]:
    try:
        yield
    except KeyboardInterrupt:
        click.echo("\nAborted by user.", err=True)
