# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Versioned CSV formats of result rows and transaction traces.

Every row carries the schema version in its first column. Floats are written
with three decimals and columns that do not apply to an experiment are left
empty, so equal runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from collections.abc import Iterable
from os import PathLike

from ..errors import ConfigError
from ..txengine import TxRecord
from .types import ResultRow

SCHEMA = 'stormsim-results/1'
TRANSACTION_SCHEMA = 'stormsim-transactions/1'

_FIELDS = {f.name: f for f in dataclasses.fields(ResultRow)}
COLUMNS = ('schema', *_FIELDS)
TRANSACTION_COLUMNS = (
    'schema',
    'tx_id',
    'node',
    'status',
    'abort_kind',
    'n_reads',
    'n_rpcs',
    'n_validation_reads',
    'latency_ns',
    'read_set',
    'write_set',
)


def _format(value: object) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return f'{value:.3f}'
    return str(value)


def _writer(buffer: io.StringIO) -> csv.DictWriter:
    return csv.DictWriter(buffer, fieldnames=COLUMNS, lineterminator='\n')


def format_rows(rows: Iterable[ResultRow]) -> str:
    """CSV text with a header line and one line per row."""
    buffer = io.StringIO()
    writer = _writer(buffer)
    writer.writeheader()
    for row in rows:
        writer.writerow(
            {
                'schema': SCHEMA,
                **{name: _format(getattr(row, name)) for name in _FIELDS},
            }
        )
    return buffer.getvalue()


def _parse_value(name: str, text: str) -> object:
    kind = str(_FIELDS[name].type)
    if kind == 'str':
        return text
    if text == '':
        if 'None' not in kind:
            raise ValueError(f"column '{name}' must not be empty")
        return None
    if kind.startswith('int'):
        return int(text)
    return float(text)


def parse_rows(
    text: str, *, path: str | PathLike[str] = '<results>'
) -> list[ResultRow]:
    """Parse CSV text written by :func:`format_rows`.

    Raises
    ------
    ConfigError
        If the header, the schema version or any value is malformed.
    """
    if not text.strip():
        return []
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != COLUMNS:
        raise ConfigError(f"expected columns {','.join(COLUMNS)}", path=path, lineno=1)
    rows = []
    for record in reader:
        lineno = reader.line_num
        if None in record or None in record.values():
            raise ConfigError("wrong number of columns", path=path, lineno=lineno)
        if record['schema'] != SCHEMA:
            raise ConfigError(
                f"unsupported schema '{record['schema']}', expected '{SCHEMA}'",
                path=path,
                lineno=lineno,
            )
        try:
            values = {name: _parse_value(name, record[name]) for name in _FIELDS}
        except ValueError as err:
            raise ConfigError(str(err), path=path, lineno=lineno) from None
        rows.append(ResultRow(**values))  # type: ignore[arg-type]
    return rows


def format_transactions(trace: Iterable[TxRecord]) -> str:
    """CSV text with one line per finished transaction, ordered by id."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(TRANSACTION_COLUMNS)
    for record in sorted(trace, key=lambda r: r.tx_id):
        writer.writerow(
            (
                TRANSACTION_SCHEMA,
                record.tx_id,
                record.node_id,
                record.status.name.lower(),
                '' if record.abort_kind is None else record.abort_kind.name.lower(),
                record.n_reads,
                record.n_rpcs,
                record.n_validation_reads,
                record.latency_ns,
                ' '.join(f'{key}@{version}' for key, version in record.reads),
                ' '.join(f'{key}@{version}' for key, version, _ in record.writes),
            )
        )
    return buffer.getvalue()
