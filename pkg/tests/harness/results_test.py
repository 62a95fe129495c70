# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
import pytest

from stormsim.errors import ConfigError
from stormsim.harness import (
    COLUMNS,
    SCHEMA,
    ResultRow,
    format_rows,
    format_transactions,
    parse_rows,
)
from stormsim.txengine import AbortKind, TxRecord, TxStatus


@pytest.fixture
def storm_row() -> ResultRow:
    return ResultRow(
        experiment='kv',
        kind='kv_lookups',
        mode='storm',
        nodes=8,
        connections=14,
        size_bytes=128,
        ops=1000,
        throughput_per_machine=2.5,
        p50_ns=2100.0,
        p99_ns=4800.5,
        abort_rate=0.0,
        cache_hit_rate=0.875,
        read_only=900,
        read_then_rpc=60,
        rpc_only=40,
        pcie_const=1200,
        pcie_var=100,
        net_const=700,
        net_var=50,
        total_ns=2050,
    )


@pytest.fixture
def micro_row() -> ResultRow:
    return ResultRow(
        experiment='reads',
        kind='random_reads',
        nodes=2,
        connections=64,
        size_bytes=64,
        ops=3000,
        throughput_per_machine=11.125,
    )


def test_header_starts_with_schema_column(storm_row: ResultRow) -> None:
    header, line = format_rows([storm_row]).splitlines()
    assert header.split(',') == list(COLUMNS)
    assert line.startswith(f'{SCHEMA},kv,kv_lookups,storm,8,14,128,1000,2.500,')


def test_columns_that_do_not_apply_are_empty(micro_row: ResultRow) -> None:
    line = format_rows([micro_row]).splitlines()[1]
    assert line == f'{SCHEMA},reads,random_reads,,2,64,64,3000,11.125,,,,,,,,0,0,0,0,0'


def test_parse_restores_written_rows(
    storm_row: ResultRow, micro_row: ResultRow
) -> None:
    assert parse_rows(format_rows([storm_row, micro_row])) == [storm_row, micro_row]


def test_empty_text_has_no_rows() -> None:
    assert parse_rows('') == []
    assert parse_rows(format_rows([])) == []


def test_parse_rejects_foreign_header() -> None:
    with pytest.raises(ConfigError, match=r'r\.csv:1: expected columns schema,'):
        parse_rows('a,b\n1,2\n', path='r.csv')


def test_parse_rejects_short_rows(micro_row: ResultRow) -> None:
    text = format_rows([micro_row]).rstrip('\n').rsplit(',', 1)[0] + '\n'
    with pytest.raises(ConfigError, match='2: wrong number of columns'):
        parse_rows(text, path='r.csv')


def test_parse_rejects_other_schema_versions(micro_row: ResultRow) -> None:
    text = format_rows([micro_row]).replace(SCHEMA, 'stormsim-results/0')
    with pytest.raises(ConfigError, match="unsupported schema 'stormsim-results/0'"):
        parse_rows(text)


def test_parse_rejects_empty_required_value(micro_row: ResultRow) -> None:
    text = format_rows([micro_row]).replace(',3000,', ',,')
    with pytest.raises(ConfigError, match="column 'ops' must not be empty"):
        parse_rows(text)


def test_transactions_are_ordered_by_id() -> None:
    trace = [
        TxRecord(
            tx_id=2,
            status=TxStatus.ABORTED,
            n_reads=1,
            n_rpcs=1,
            n_validation_reads=0,
            latency_ns=900,
            reads=((5, 1),),
            abort_kind=AbortKind.LOCK_BUSY,
            node_id=1,
        ),
        TxRecord(
            tx_id=1,
            status=TxStatus.COMMITTED,
            n_reads=2,
            n_rpcs=1,
            n_validation_reads=1,
            latency_ns=4000,
            reads=((3, 0), (4, 2)),
            writes=((4, 3, b'x'),),
        ),
    ]
    lines = format_transactions(trace).splitlines()
    assert lines[0].startswith('schema,tx_id,node,status,abort_kind')
    assert lines[1] == 'stormsim-transactions/1,1,0,committed,,2,1,1,4000,3@0 4@2,4@3'
    assert lines[2] == 'stormsim-transactions/1,2,1,aborted,lock_busy,1,1,0,900,5@1,'
