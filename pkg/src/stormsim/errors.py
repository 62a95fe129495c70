# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Exceptions shared across subpackages."""

from __future__ import annotations

from os import PathLike


class ConfigError(ValueError):
    """A configuration, preset or input file is malformed.

    The message is prefixed with ``path:lineno:`` when the location is known.
    """

    def __init__(
        self,
        message: str,
        *,
        path: str | PathLike[str] | None = None,
        lineno: int | None = None,
    ) -> None:
        self.path = None if path is None else str(path)
        self.lineno = lineno
        self.reason = message
        if self.path is not None and lineno is not None:
            message = f'{self.path}:{lineno}: {message}'
        elif self.path is not None:
            message = f'{self.path}: {message}'
        super().__init__(message)
