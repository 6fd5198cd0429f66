#!/usr/bin/env python3
"""Command line entry point: configure logging, merge settings, run a pipeline stage."""

from __future__ import annotations

import logging
import sys

from rich.logging import RichHandler

from gaitscale.config import ConfigManager
from gaitscale.const import __version__
from gaitscale.errors import ConfigInvalid
from gaitscale.high_level import run_pipeline

logger = logging.getLogger(__name__)

EXIT_CONFIG_INVALID = 2


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, handlers=[RichHandler()])
    for name in ("matplotlib", "PIL"):
        logging.getLogger(name).setLevel(logging.WARNING)

    try:
        command, settings = ConfigManager().initialize_config(argv)
    except ConfigInvalid as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG_INVALID
    if settings.basic.debug:
        logging.getLogger().setLevel(logging.DEBUG)
    logger.debug(f"settings: {settings}")

    if settings.basic.version:
        print(f"gaitscale version: {__version__}")
        return 0

    return run_pipeline(settings, command)


def cli():
    sys.exit(main())


if __name__ == "__main__":
    cli()
