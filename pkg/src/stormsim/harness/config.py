# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Experiment config files.

An experiment config is an INI file with the sections ``[experiment]``,
``[topology]``, ``[table]``, ``[workload]`` and ``[output]``::

    [experiment]
    id = kv-8
    preset = cx4roce
    seed = 1
    mode = storm

    [topology]
    n_nodes = 8
    threads_per_node = 2

    [workload]
    kind = kv_lookups
    key_count = 20000

Every section and key is checked against a schema before anything runs.
Errors name the file and line.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from os import PathLike
from pathlib import Path
from typing import Any, TypeVar

from sciline.typing import Key

from ..dataplane import DEFAULT_MESSAGE_BYTES, MAX_NODES, DataplaneConfig, LookupMode
from ..errors import ConfigError
from ..kvstore import MAX_LINK_OFFSET, check_value_fits, configure_table
from ..nic import load_preset, shipped_presets
from ..txengine import CommitOrdering
from ..workloads import TableOptions, WorkloadKind
from .types import (
    ExperimentId,
    LookupSettings,
    PresetSource,
    Seed,
    Topology,
    WorkloadParams,
)
from .workflow import build_workload

__all__ = ['ConfigError', 'ExperimentConfig', 'load_config', 'parse_config']

E = TypeVar('E', bound=Enum)


def _int(minimum: int, maximum: int | None = None) -> Callable[[str], int]:
    def parse(text: str) -> int:
        value = int(text)
        if value < minimum:
            raise ValueError(f"must be at least {minimum}")
        if maximum is not None and value > maximum:
            raise ValueError(f"must be at most {maximum}")
        return value

    return parse


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise ValueError("must be positive")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise ValueError("must lie in (0, 1]")
    return value


def _boolean(text: str) -> bool:
    states = configparser.ConfigParser.BOOLEAN_STATES
    if text.lower() not in states:
        raise ValueError("expected a boolean such as 'true' or 'false'")
    return states[text.lower()]


def _int_list(text: str) -> tuple[int, ...]:
    values = tuple(int(v) for v in re.split(r'[,\s]+', text.strip()) if v)
    if any(v < 1 for v in values):
        raise ValueError("values must be positive")
    return values


def _choice(*choices: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}")
        return text

    return parse


def _enum(enum: type[E]) -> Callable[[str], E]:
    def parse(text: str) -> E:
        try:
            return enum[text.upper()]
        except KeyError:
            names = ', '.join(m.name.lower() for m in enum)
            raise ValueError(f"expected one of {names}") from None

    return parse


_SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    'experiment': {
        'id': str,
        'preset': str,
        'seed': _int(0),
        'mode': _enum(LookupMode),
        'rr_fallback_after': _int(1),
        'commit_ordering': _enum(CommitOrdering),
    },
    'topology': {
        'n_nodes': _int(1),
        'threads_per_node': _int(1),
        'coroutines_per_thread': _int(1),
        'virtual_nodes': _int_list,
    },
    'table': {
        'n_buckets': _int(1),
        'bucket_width': _int(1),
        'value_bytes': _int(8),
        'occupancy_target': _fraction,
        'chunk_bytes': _int(1, MAX_LINK_OFFSET),
        'physical_segments': _boolean,
    },
    'workload': {
        'kind': _enum(WorkloadKind),
        'key_count': _int(1),
        'key_distribution': _choice('uniform', 'zipf'),
        'zipf_theta': _positive_float,
        'op_count': _int(0),
        'message_cachelines': _int_list,
        'connections': _int_list,
        'depth': _int(1),
    },
    'output': {'results': str, 'transactions': str},
}
_REQUIRED = (('experiment', 'preset'), ('workload', 'kind'))
# Config keys whose field name differs.
_RENAMED = {('table', 'occupancy_target'): 'target_occupancy'}


@dataclass(frozen=True, kw_only=True)
class ExperimentConfig:
    """A validated experiment config."""

    experiment_id: str
    preset: str
    """Bundled preset name or preset file path."""
    seed: int = 0
    lookup: LookupSettings = field(default_factory=LookupSettings)
    topology: Topology = field(default_factory=Topology)
    table: TableOptions = field(default_factory=TableOptions)
    workload: WorkloadParams = field(default_factory=WorkloadParams)
    results: Path | None = None
    transactions: Path | None = None

    def with_overrides(
        self,
        *,
        seed: int | None = None,
        preset: str | None = None,
        results: str | PathLike[str] | None = None,
    ) -> ExperimentConfig:
        """Copy with command-line overrides applied where given."""
        changes: dict[str, Any] = {}
        if seed is not None:
            changes['seed'] = seed
        if preset is not None:
            changes['preset'] = preset
        if results is not None:
            changes['results'] = Path(results)
        return dataclasses.replace(self, **changes)

    def parameters(self) -> dict[Key, Any]:
        """Values of the experiment pipeline parameters."""
        return {
            ExperimentId: ExperimentId(self.experiment_id),
            PresetSource: PresetSource(self.preset),
            Seed: Seed(self.seed),
            LookupSettings: self.lookup,
            Topology: self.topology,
            TableOptions: self.table,
            WorkloadParams: self.workload,
        }

    def validate(
        self,
        *,
        path: str | None = None,
        lines: Mapping[tuple[str, str | None], int] | None = None,
    ) -> None:
        """Check preset, dataplane, table and workload without running anything.

        Parameters
        ----------
        path:
            Name of the config file used in error messages.
        lines:
            Line of every section and key, so that errors point at the key
            holding the offending value.

        Raises
        ------
        ConfigError
            If the preset is missing or malformed or a setting cannot run.
        """
        load_preset(self.preset)
        lines = lines or {}
        for (section, key), check in self._checks():
            try:
                check()
            except ValueError as err:
                raise ConfigError(
                    str(err), path=path, lineno=lines.get((section, key))
                ) from None

    def _checks(self) -> list[tuple[tuple[str, str], Callable[[], object]]]:
        topology, table = self.topology, self.table
        checks: list[tuple[tuple[str, str], Callable[[], object]]] = [
            (
                ('topology', 'threads_per_node'),
                lambda: DataplaneConfig(threads_per_node=topology.threads_per_node),
            ),
            (
                ('topology', 'coroutines_per_thread'),
                lambda: DataplaneConfig(
                    coroutines_per_thread=topology.coroutines_per_thread
                ),
            ),
            (
                ('experiment', 'rr_fallback_after'),
                lambda: DataplaneConfig(
                    rr_fallback_after=self.lookup.rr_fallback_after
                ),
            ),
            (
                ('workload', 'kind'),
                lambda: build_workload(self.workload, topology, Seed(self.seed)),
            ),
        ]
        if self.workload.kind not in (WorkloadKind.KV_LOOKUPS, WorkloadKind.TATP_LITE):
            return checks
        buckets_key = 'n_buckets' if table.n_buckets is not None else 'occupancy_target'
        return [
            *checks,
            (('topology', 'n_nodes'), lambda: _check_node_count(topology.n_nodes)),
            (
                ('table', 'value_bytes'),
                lambda: check_value_fits(table.value_bytes, DEFAULT_MESSAGE_BYTES),
            ),
            (
                ('table', buckets_key),
                lambda: configure_table(
                    math.ceil(self.workload.key_count / topology.n_nodes),
                    table.bucket_width,
                    table.target_occupancy,
                    value_bytes=table.value_bytes,
                    n_buckets=table.n_buckets,
                ),
            ),
        ]


def _check_node_count(n_nodes: int) -> None:
    if n_nodes > MAX_NODES:
        raise ValueError(f"n_nodes must be at most {MAX_NODES}.")


def _locate(text: str) -> dict[tuple[str, str | None], int]:
    """Line of every section header and key, as configparser reads them."""
    lines: dict[tuple[str, str | None], int] = {}
    section = ''
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in '#;' or raw[0].isspace():
            continue
        if line.startswith('[') and line.endswith(']'):
            section = line[1:-1].strip()
            lines.setdefault((section, None), lineno)
        else:
            key = re.split(r'[=:]', line, maxsplit=1)[0].strip().lower()
            lines.setdefault((section, key), lineno)
    return lines


def _read(text: str, path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(
        interpolation=None, strict=True, empty_lines_in_values=False
    )
    try:
        parser.read_string(text, source=path)
    except configparser.MissingSectionHeaderError as err:
        raise ConfigError(
            "key outside of any section", path=path, lineno=err.lineno
        ) from None
    except configparser.ParsingError as err:
        lineno, line = err.errors[0]
        raise ConfigError(f"cannot parse {line}", path=path, lineno=lineno) from None
    except configparser.Error as err:
        raise ConfigError(
            err.message, path=path, lineno=getattr(err, 'lineno', None)
        ) from None
    return parser


def parse_config(
    text: str,
    *,
    path: str | PathLike[str] = '<config>',
    base_dir: Path | None = None,
) -> ExperimentConfig:
    """Parse and validate the contents of an experiment config file.

    Parameters
    ----------
    text:
        File contents.
    path:
        Name used in error messages.
    base_dir:
        Directory that relative preset paths are resolved against.

    Raises
    ------
    ConfigError
        On unknown sections or keys, missing required keys, malformed values
        and invalid presets or workloads.
    """
    path = str(path)
    lines = _locate(text)
    parser = _read(text, path)
    values: dict[str, dict[str, Any]] = {section: {} for section in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"unknown section [{section}]",
                path=path,
                lineno=lines.get((section, None)),
            )
        for key, raw in parser.items(section):
            lineno = lines.get((section, key))
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"unknown key '{key}' in [{section}]", path=path, lineno=lineno
                )
            try:
                value = _SCHEMA[section][key](raw.strip())
            except ValueError as err:
                raise ConfigError(
                    f"invalid value {raw.strip()!r} for '{key}': {err}",
                    path=path,
                    lineno=lineno,
                ) from None
            values[section][_RENAMED.get((section, key), key)] = value
    for section, key in _REQUIRED:
        if key not in values[section]:
            raise ConfigError(f"missing required key '{key}' in [{section}]", path=path)
    experiment = values['experiment']
    preset = experiment['preset']
    if base_dir is not None and preset not in shipped_presets():
        preset = str(base_dir / preset)
    output = values['output']
    config = ExperimentConfig(
        experiment_id=experiment.get('id', Path(path).stem),
        preset=preset,
        seed=experiment.get('seed', 0),
        lookup=LookupSettings(
            **{k: v for k, v in experiment.items() if k not in ('id', 'preset', 'seed')}
        ),
        topology=Topology(**values['topology']),
        table=TableOptions(**values['table']),
        workload=WorkloadParams(**values['workload']),
        results=Path(output['results']) if 'results' in output else None,
        transactions=(
            Path(output['transactions']) if 'transactions' in output else None
        ),
    )
    try:
        config.validate(path=path, lines=lines)
    except ConfigError as err:
        if err.path is None:
            raise ConfigError(err.reason, path=path) from None
        raise
    return config


def load_config(path: str | PathLike[str]) -> ExperimentConfig:
    """Load an experiment config file.

    Relative preset paths are resolved against the directory of the file.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("no such config file", path=path)
    return parse_config(path.read_text(), path=path, base_dir=path.parent)
