# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
# ruff: noqa: E402, F401

import importlib.metadata

from . import dataplane, harness, kvstore, nic, oracle, txengine, verbs, workloads
from .engine import Engine, SeededRng
from .errors import ConfigError

try:
    __version__ = importlib.metadata.version("stormsim")
except importlib.metadata.PackageNotFoundError:
    __version__ = "0.0.0"

del importlib

__all__ = [
    'ConfigError',
    'Engine',
    'SeededRng',
    'dataplane',
    'harness',
    'kvstore',
    'nic',
    'oracle',
    'txengine',
    'verbs',
    'workloads',
]
