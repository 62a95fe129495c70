# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
import pytest

from stormsim.dataplane import RpcOpcode
from stormsim.kvstore import JournalEntry
from stormsim.oracle import check_serializability, conflict_graph, replay
from stormsim.txengine import TxRecord, TxStatus


def record(
    tx_id: int,
    reads: tuple[tuple[int, int], ...] = (),
    writes: tuple[tuple[int, int, bytes], ...] = (),
    status: TxStatus = TxStatus.COMMITTED,
) -> TxRecord:
    return TxRecord(
        tx_id=tx_id,
        status=status,
        n_reads=len(reads),
        n_rpcs=len(writes),
        n_validation_reads=0,
        latency_ns=1000,
        reads=reads,
        writes=writes,
    )


INITIAL = {1: (0, b'a0'), 2: (0, b'b0')}


def test_serial_chain_is_serializable() -> None:
    trace = [
        record(1, reads=((1, 0),), writes=((1, 1, b'a1'),)),
        record(2, reads=((1, 1),), writes=((1, 2, b'a2'),)),
        record(3, reads=((2, 0),), status=TxStatus.ABORTED),
    ]
    final = {1: (2, b'a2'), 2: (0, b'b0')}
    report = check_serializability(trace, INITIAL, final)
    assert report.ok
    assert report.committed == 2
    assert report.edges == 1


def test_read_only_transaction_orders_before_later_writer() -> None:
    trace = [
        record(1, reads=((1, 0),)),
        record(2, writes=((1, 1, b'a1'),)),
    ]
    graph = conflict_graph(trace)
    assert graph.edges[1, 2]['kind'] == 'rw'


def test_write_skew_is_a_cycle() -> None:
    trace = [
        record(1, reads=((1, 0),), writes=((2, 1, b'b1'),)),
        record(2, reads=((2, 0),), writes=((1, 1, b'a1'),)),
    ]
    final = {1: (1, b'a1'), 2: (1, b'b1')}
    report = check_serializability(trace, INITIAL, final)
    assert not report.ok
    assert sorted(report.cycle) == [(1, 2), (2, 1)]


def test_same_version_installed_twice_is_an_error() -> None:
    trace = [record(1, writes=((1, 1, b'x'),)), record(2, writes=((1, 1, b'y'),))]
    with pytest.raises(ValueError, match='both installed version 1 of key 1'):
        conflict_graph(trace)
    report = check_serializability(trace, INITIAL, INITIAL)
    assert not report.ok
    assert 'both installed' in report.errors[0]


def test_aborted_transaction_with_writes_is_an_error() -> None:
    trace = [record(1, writes=((1, 1, b'x'),), status=TxStatus.ABORTED)]
    report = check_serializability(trace, INITIAL, INITIAL)
    assert any('Aborted transaction 1' in e for e in report.errors)


def test_store_differing_from_replay_is_an_error() -> None:
    trace = [record(1, writes=((1, 1, b'a1'),))]
    report = check_serializability(trace, INITIAL, {1: (1, b'zz'), 2: (0, b'b0')})
    assert any('differs from the store at keys [1]' in e for e in report.errors)


def test_leaked_locks_are_an_error() -> None:
    report = check_serializability([], INITIAL, INITIAL, locked_keys=[2])
    assert report.errors == ['Locks leaked on keys [2].']


def test_journal_is_applied_after_transactions() -> None:
    journal = [
        JournalEntry(0, RpcOpcode.INSERT, 5, b'e0'),
        JournalEntry(1, RpcOpcode.INSERT, 1, b'', applied=False),
        JournalEntry(2, RpcOpcode.DELETE, 2),
    ]
    trace = [record(1, writes=((1, 1, b'a1'),))]
    final = {1: (1, b'a1'), 5: (0, b'e0')}
    report = check_serializability(trace, INITIAL, final, journals=[journal])
    assert report.ok


def test_replay_reports_reads_out_of_serial_order() -> None:
    trace = [
        record(1, writes=((1, 1, b'a1'),)),
        record(2, reads=((1, 1),)),
    ]
    state, errors = replay(trace, INITIAL, [2, 1])
    assert state[1] == (1, b'a1')
    assert errors == [
        'Transaction 2 read version 1 of key 1, serial order has 0.'
    ]
