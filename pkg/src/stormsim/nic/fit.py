# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Least-squares calibration of NIC presets against measured anchors.

Anchor files are CSV with columns ``kind,payload_bytes,target``. ``kind`` is
one of :data:`stormsim.nic.model.BASELINE_KINDS` with ``target`` in
nanoseconds, or ``drop`` with ``target`` the relative throughput loss when
connection state stops fitting in the NIC cache.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from importlib.resources import files
from os import PathLike
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..logging import get_logger
from .config import NicConfig
from .model import BASELINE_KINDS, predict_latency_ns

DEFAULT_FREE_PARAMETERS = ('wire_prop_ns', 'host_rpc_ns', 'wire_per_byte_ns')
DROP_KIND = 'drop'
_ANCHOR_COLUMNS = ('kind', 'payload_bytes', 'target')


class UnderdeterminedFit(ValueError):
    """The anchors do not determine every free parameter."""


@dataclass(frozen=True, slots=True)
class Anchor:
    kind: str
    payload_bytes: int
    target: float


@dataclass(frozen=True, slots=True)
class AnchorResidual:
    anchor: Anchor
    predicted: float

    @property
    def relative(self) -> float:
        return (self.predicted - self.anchor.target) / self.anchor.target


@dataclass(frozen=True)
class FitResult:
    config: NicConfig
    residuals: tuple[AnchorResidual, ...]

    @property
    def max_relative_residual(self) -> float:
        return max((abs(r.relative) for r in self.residuals), default=0.0)

    def report(self) -> str:
        """One line per anchor plus the worst residual."""
        lines = [f'{"kind":<10}{"payload":>9}{"target":>11}{"predicted":>11}  residual']
        for r in self.residuals:
            a = r.anchor
            lines.append(
                f'{a.kind:<10}{a.payload_bytes:>9}{a.target:>11.4g}'
                f'{r.predicted:>11.4g}  {r.relative:+.2%}'
            )
        lines.append(f'max |residual| = {self.max_relative_residual:.2%}')
        return '\n'.join(lines)


def parse_anchors(
    text: str, *, path: str | PathLike[str] = '<anchors>'
) -> list[Anchor]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != _ANCHOR_COLUMNS:
        raise ConfigError(
            f"expected columns {','.join(_ANCHOR_COLUMNS)}", path=path, lineno=1
        )
    anchors = []
    for row in reader:
        lineno = reader.line_num
        kind = row['kind'].strip()
        if kind != DROP_KIND and kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown anchor kind '{kind}'", path=path, lineno=lineno)
        try:
            anchor = Anchor(
                kind=kind,
                payload_bytes=int(row['payload_bytes']),
                target=float(row['target']),
            )
        except (TypeError, ValueError):
            raise ConfigError(
                "malformed anchor row", path=path, lineno=lineno
            ) from None
        if anchor.target <= 0 or (kind == DROP_KIND and anchor.target >= 1):
            raise ConfigError("anchor target out of range", path=path, lineno=lineno)
        anchors.append(anchor)
    return anchors


def load_anchors(name_or_path: str | PathLike[str]) -> list[Anchor]:
    """Load a bundled anchor set (``ib``, ``roce``) or an anchor CSV file."""
    name = str(name_or_path)
    resource = files('stormsim') / 'data' / 'anchors' / f'{name}.csv'
    if resource.is_file():
        return parse_anchors(resource.read_text(), path=f'{name}.csv')
    path = Path(name_or_path)
    if not path.is_file():
        raise ConfigError("no such anchor file", path=path)
    return parse_anchors(path.read_text(), path=path)


def throughput_drop(config: NicConfig) -> float:
    """Relative throughput loss when every QP lookup misses.

    With the PU as bottleneck, each WQE occupies it for ``pu_service_ns`` when
    its QP context hits and ``miss_overlap_factor * cache_miss_ns`` longer
    when it misses.
    """
    stall = config.miss_overlap_factor * config.cache_miss_ns
    return stall / (config.pu_service_ns + stall)


def _params(config: NicConfig) -> dict[str, float]:
    return {
        f.name: float(getattr(config, f.name))
        for f in dataclasses.fields(config)
        if f.name != 'name'
    }


def fit_preset(
    anchors: Iterable[Anchor],
    base: NicConfig,
    free: Sequence[str] = DEFAULT_FREE_PARAMETERS,
    *,
    name: str | None = None,
) -> FitResult:
    """Fit the free parameters of ``base`` to latency and drop anchors.

    Latency anchors are fitted by linear least squares on relative residuals.
    A ``drop`` anchor then fixes ``miss_overlap_factor``.

    Raises
    ------
    UnderdeterminedFit
        If there are fewer latency anchors than free parameters, or the
        anchors leave some free parameter undetermined.
    """
    anchors = list(anchors)
    latency = [a for a in anchors if a.kind != DROP_KIND]
    drops = [a for a in anchors if a.kind == DROP_KIND]
    params = _params(base)
    unknown = [p for p in free if p not in params]
    if unknown:
        raise ValueError(f"Cannot fit unknown parameters {unknown}.")
    if len(latency) < len(free):
        raise UnderdeterminedFit(
            f"{len(latency)} latency anchors cannot determine {len(free)} parameters."
        )
    fitted = dict(params)
    if free:
        zero = {**params, **{p: 0.0 for p in free}}
        offset = np.array(
            [predict_latency_ns(zero, a.kind, a.payload_bytes) for a in latency]
        )
        design = np.empty((len(latency), len(free)))
        for j, p in enumerate(free):
            unit = {**zero, p: 1.0}
            design[:, j] = [
                predict_latency_ns(unit, a.kind, a.payload_bytes) for a in latency
            ]
        design -= offset[:, None]
        target = np.array([a.target for a in latency])
        weighted = design / target[:, None]
        if np.linalg.matrix_rank(weighted) < len(free):
            raise UnderdeterminedFit(
                f"Anchors do not constrain every free parameter of {list(free)}."
            )
        solution, *_ = np.linalg.lstsq(weighted, (target - offset) / target, rcond=None)
        for p, value in zip(free, solution, strict=True):
            if value <= 0:
                raise ValueError(f"Fitted value of '{p}' is not positive ({value}).")
            fitted[p] = round(float(value), 6)
    for anchor in drops:
        stall = anchor.target * fitted['pu_service_ns'] / (1 - anchor.target)
        fitted['miss_overlap_factor'] = round(stall / fitted['cache_miss_ns'], 6)
    changes = {p: fitted[p] for p in free}
    if drops:
        changes['miss_overlap_factor'] = fitted['miss_overlap_factor']
    config = base.replace(**changes, name=name or base.name)
    residuals = tuple(
        AnchorResidual(a, predict_latency_ns(_params(config), a.kind, a.payload_bytes))
        for a in latency
    ) + tuple(AnchorResidual(a, throughput_drop(config)) for a in drops)
    result = FitResult(config=config, residuals=residuals)
    get_logger().info(
        "Fitted %s to %d anchors, max residual %.3f",
        list(changes),
        len(anchors),
        result.max_relative_residual,
    )
    return result
