from __future__ import annotations

import logging
import os

from rich.console import Console
from rich.logging import RichHandler

from lensbench.errors import ConfigError

LOG_ENV_VAR = "LENSBENCH_LOG"
ROOT_LOGGER = "lensbench"

_LEVELS = {
    "trace": logging.DEBUG,
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "off": logging.CRITICAL + 1,
}


def parse_log_filter(spec: str) -> dict[str, int]:
    """Parse an env-filter string into ``{logger_name: level}``.

    Directives are comma separated; a bare level applies to the ``lensbench`` root,
    ``name=level`` targets one logger, e.g. ``info,lensbench.bench=debug``.
    """
    directives: dict[str, int] = {}
    for raw in spec.split(","):
        item = raw.strip()
        if not item:
            continue
        target, _, level_name = item.rpartition("=")
        level = _LEVELS.get(level_name.strip().lower())
        if level is None:
            raise ConfigError("log", f"unknown log level {level_name!r} in {LOG_ENV_VAR}")
        directives[target.strip() or ROOT_LOGGER] = level
    return directives


def setup_logging(verbose: bool = False) -> None:
    handler = RichHandler(
        console=Console(stderr=True),
        show_time=False,
        show_path=verbose,
        rich_tracebacks=True,
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))

    root = logging.getLogger(ROOT_LOGGER)
    root.handlers[:] = [handler]
    root.propagate = False
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)

    env = os.environ.get(LOG_ENV_VAR)
    if env:
        for name, level in parse_log_filter(env).items():
            logging.getLogger(name).setLevel(level)
