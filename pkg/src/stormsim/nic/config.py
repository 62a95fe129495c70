# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""NIC parameters and preset files.

A preset is a flat text file with one ``key = value`` pair per line. Blank
lines and lines starting with ``#`` are ignored. Every key must name a field
of :class:`NicConfig`; fields missing from the file keep their defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib.resources import files
from os import PathLike
from pathlib import Path

from ..errors import ConfigError
from ..logging import get_logger

CACHELINE_BYTES = 64
QP_STATE_BYTES = 375
"""Transport state of one RC connection, congestion-control state included."""

_LATENCY_FIELDS = (
    'pu_service_ns',
    'cache_hit_ns',
    'cache_miss_ns',
    'pcie_write_ns',
    'pcie_dma_rt_ns',
    'pcie_per_byte_ns',
    'wire_prop_ns',
    'wire_per_byte_ns',
    'host_rpc_ns',
    'host_repost_ns',
    'post_ns',
    'coroutine_switch_ns',
    'kernel_crossing_ns',
)


class PresetError(ConfigError):
    """A preset file names an unknown key or holds a malformed value."""


@dataclass(frozen=True, kw_only=True)
class NicConfig:
    """Parameters of one simulated RNIC and its host.

    Defaults correspond to a ConnectX-4 class NIC on Infiniband with the
    full 2 MiB SRAM available to transport state.
    """

    name: str = 'custom'
    cache_capacity_bytes: int = 2 * 2**20
    """Bytes of SRAM available to QP and receive-WQE state."""
    translation_cache_bytes: int = 0
    """Bytes of SRAM holding MTT and MPT entries, 0 to share the context cache."""
    num_pus: int = 8
    pu_service_ns: float = 112.0
    cache_hit_ns: float = 10.0
    cache_miss_ns: float = 450.0
    pcie_write_ns: float = 400.0
    pcie_dma_rt_ns: float = 350.0
    pcie_per_byte_ns: float = 0.075
    wire_prop_ns: float = 175.0
    wire_per_byte_ns: float = 0.1
    miss_overlap_factor: float = 1.0
    mtt_entry_bytes: int = 16
    mpt_entry_bytes: int = 32
    recv_wqe_bytes: int = 64
    host_rpc_ns: float = 250.0
    """Host CPU time to handle one inbound RPC, reply post included."""
    host_repost_ns: float = 150.0
    """Host CPU time to repost one UD receive buffer."""
    post_ns: float = 50.0
    coroutine_switch_ns: float = 20.0
    kernel_crossing_ns: float = 1550.0

    def __post_init__(self) -> None:
        for name in _LATENCY_FIELDS:
            if getattr(self, name) <= 0:
                raise ValueError(f"NIC latency '{name}' must be positive.")
        if self.cache_miss_ns <= self.cache_hit_ns:
            raise ValueError("cache_miss_ns must exceed cache_hit_ns.")
        if not 0 < self.miss_overlap_factor <= 1:
            raise ValueError("miss_overlap_factor must lie in (0, 1].")
        if self.cache_capacity_bytes < QP_STATE_BYTES:
            raise ValueError("cache_capacity_bytes cannot hold a single QP.")
        if self.translation_cache_bytes < 0:
            raise ValueError("translation_cache_bytes must not be negative.")
        if self.num_pus < 1:
            raise ValueError("num_pus must be at least 1.")
        for name in ('mtt_entry_bytes', 'mpt_entry_bytes', 'recv_wqe_bytes'):
            if getattr(self, name) <= 0:
                raise ValueError(f"'{name}' must be positive.")

    def replace(self, **changes: float | int | str) -> NicConfig:
        return dataclasses.replace(self, **changes)  # type: ignore[arg-type]

    def to_preset(self) -> str:
        """Serialize to the preset file format."""
        lines = [f'# NIC preset {self.name}']
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.type == 'float':
                value = repr(float(value))
            lines.append(f'{f.name} = {value}')
        return '\n'.join(lines) + '\n'


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(NicConfig)}
_PARSERS = {'int': int, 'float': float, 'str': str}


def parse_preset(text: str, *, path: str | PathLike[str] = '<preset>') -> NicConfig:
    """Parse the contents of a preset file.

    Raises
    ------
    PresetError
        On unknown or repeated keys, malformed lines or values, and parameter
        combinations rejected by :class:`NicConfig`.
    """
    values: dict[str, float | int | str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key = key.strip()
        if not sep:
            raise PresetError(
                f"expected 'key = value', got {raw!r}", path=path, lineno=lineno
            )
        if key not in _FIELD_TYPES:
            raise PresetError(f"unknown preset key '{key}'", path=path, lineno=lineno)
        if key in values:
            raise PresetError(f"repeated preset key '{key}'", path=path, lineno=lineno)
        try:
            values[key] = _PARSERS[str(_FIELD_TYPES[key])](value.strip())
        except ValueError:
            raise PresetError(
                f"invalid value {value.strip()!r} for '{key}'", path=path, lineno=lineno
            ) from None
    try:
        return NicConfig(**values)  # type: ignore[arg-type]
    except ValueError as err:
        raise PresetError(str(err), path=path) from None


def shipped_presets() -> tuple[str, ...]:
    """Names of the presets bundled with stormsim."""
    data = files('stormsim') / 'data'
    return tuple(
        sorted(
            p.name.removesuffix('.preset')
            for p in data.iterdir()
            if p.name.endswith('.preset')
        )
    )


def load_preset(name_or_path: str | PathLike[str]) -> NicConfig:
    """Load a bundled preset by name, or a preset file by path."""
    name = str(name_or_path)
    if name in shipped_presets():
        resource = files('stormsim') / 'data' / f'{name}.preset'
        get_logger().info("Loading bundled NIC preset '%s'", name)
        return parse_preset(resource.read_text(), path=f'{name}.preset')
    path = Path(name_or_path)
    if not path.is_file():
        raise PresetError(
            f"no such preset file; bundled presets are {', '.join(shipped_presets())}",
            path=path,
        )
    get_logger().info("Loading NIC preset from '%s'", path)
    return parse_preset(path.read_text(), path=path)
