# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)

"""Logging tools for stormsim.

Every module logs through the ``stormsim`` logger. Libraries using stormsim
decide where messages go; the command line attaches a stderr handler with
:func:`configure`.
"""

import logging
import sys
from typing import TextIO

LOGGER_NAME = 'stormsim'
LOG_FORMAT = '%(levelname)s %(name)s: %(message)s'


class _StderrHandler(logging.StreamHandler):  # type: ignore[type-arg]
    """Writes to the current ``sys.stderr``, even if it was replaced."""

    @property  # type: ignore[override]
    def stream(self) -> TextIO:
        return sys.stderr

    @stream.setter
    def stream(self, _: TextIO) -> None:
        pass


def get_logger() -> logging.Logger:
    """Return the logger for stormsim.

    Returns
    -------
    :
        The requested logger.
    """
    return logging.getLogger(LOGGER_NAME)


def configure(*, verbose: bool = False, debug: bool = False) -> logging.Logger:
    """Send stormsim messages to stderr.

    Only warnings and errors are shown unless ``verbose`` or ``debug`` is set.
    Calling this again replaces the handler installed before.
    """
    logger = get_logger()
    for handler in list(logger.handlers):
        if isinstance(handler, _StderrHandler):
            logger.removeHandler(handler)
    handler = _StderrHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(
        logging.DEBUG if debug else logging.INFO if verbose else logging.WARNING
    )
    return logger
