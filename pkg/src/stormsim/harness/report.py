# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Human-readable breakdown report of result rows."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from itertools import groupby

from .invariants import InvariantViolation, row_violations
from .types import ResultRow

SCALABILITY_NODES = (8, 64)
DROP_CONNECTIONS = (8, 64)
BASELINE_MODE = 'rpc_only'


def _share(part: int, total: int) -> str:
    return f'{part / total:.0%}'


def _point(row: ResultRow) -> str:
    mode = f'{row.mode} ' if row.mode else ''
    return (
        f'{mode}nodes={row.nodes} connections={row.connections} '
        f'size={row.size_bytes}B'
    )


def _row_lines(row: ResultRow) -> list[str]:
    lines = [f'- {_point(row)}: {row.throughput_per_machine:.3f} ops/us per machine']
    if total := row.total_ns:
        pcie = row.pcie_const + row.pcie_var
        constant = row.pcie_const + row.net_const
        lines.append(
            f'  mean latency {total} ns, PCIe share: {_share(pcie, total)}, '
            f'network share: {_share(total - pcie, total)}'
        )
        lines.append(
            f'  constant share: {_share(constant, total)}, '
            f'variable share: {_share(total - constant, total)}'
        )
    if row.abort_rate is not None:
        lines.append(f'  abort rate: {row.abort_rate:.1%}')
    if row.read_only is not None:
        lines.append(
            f'  lookups: {row.read_only} read-only, {row.read_then_rpc} '
            f'read-then-RPC, {row.rpc_only} RPC-only'
        )
    return lines


def _throughput(rows: Iterable[ResultRow], **match: object) -> float | None:
    for row in rows:
        if all(getattr(row, k) == v for k, v in match.items()):
            return row.throughput_per_machine
    return None


def _headlines(rows: Sequence[ResultRow]) -> list[str]:
    lines = []
    for (kind, mode), members in groupby(
        sorted(rows, key=lambda r: (r.kind, r.mode)), key=lambda r: (r.kind, r.mode)
    ):
        group = list(members)
        low, high = SCALABILITY_NODES
        t_low = _throughput(group, nodes=low)
        t_high = _throughput(group, nodes=high)
        if t_low and t_high is not None:
            lines.append(
                f'{kind} {mode}'.rstrip()
                + f': scalability ratio ({low} -> {high} nodes): '
                f'{1 - t_high / t_low:.3f}'
            )
        low, high = DROP_CONNECTIONS
        t_low = _throughput(group, connections=low)
        t_high = _throughput(group, connections=high)
        if t_low and t_high is not None:
            lines.append(
                f'{kind} {mode}'.rstrip()
                + f': throughput drop ({low} -> {high} connections): '
                f'{1 - t_high / t_low:.0%}'
            )
    for row in rows:
        if not row.mode or row.mode == BASELINE_MODE:
            continue
        base = _throughput(rows, kind=row.kind, mode=BASELINE_MODE, nodes=row.nodes)
        if base:
            lines.append(
                f'{row.kind} at {row.nodes} nodes: {row.mode} / {BASELINE_MODE} '
                f'throughput: {row.throughput_per_machine / base:.2f}x'
            )
    for row in sorted(rows, key=lambda r: r.nodes):
        if row.mode != 'ud':
            continue
        rc = _throughput(rows, kind=row.kind, mode='rc', nodes=row.nodes)
        if rc is not None and row.throughput_per_machine >= rc:
            lines.append(f'UD sustains the RC throughput from {row.nodes} nodes on')
            break
    return lines


def format_report(rows: Sequence[ResultRow]) -> str:
    """Markdown report of per-row latency shares and headline ratios.

    Raises
    ------
    InvariantViolation
        If the latency buckets of a row do not add up to its total.
    """
    violations = row_violations(rows)
    if violations:
        raise InvariantViolation(violations)
    if not rows:
        return ''
    lines = []
    for experiment, members in groupby(rows, key=lambda r: r.experiment):
        group = list(members)
        kinds = ', '.join(dict.fromkeys(r.kind for r in group))
        lines.append(f'## {experiment} ({kinds})')
        lines.append('')
        for row in group:
            lines.extend(_row_lines(row))
        lines.append('')
    headlines = _headlines(rows)
    if headlines:
        lines.append('## Headlines')
        lines.append('')
        lines.extend(f'- {line}' for line in headlines)
        lines.append('')
    return '\n'.join(lines)
