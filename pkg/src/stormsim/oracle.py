# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Serializability check of a transaction trace against the final store.

Committed transactions become nodes of a conflict graph with an edge for
every write-write, write-read and read-write dependency, derived from the
versions each transaction read and installed. The trace is serializable if
that graph is acyclic and replaying the transactions one at a time in a
topological order reproduces the final contents of the store.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import networkx as nx

from .dataplane import RpcOpcode
from .kvstore import JournalEntry
from .logging import get_logger
from .txengine import TxRecord, TxStatus

StoreState = Mapping[int, tuple[int, bytes]]
"""Version and value of every key."""


@dataclass
class OracleReport:
    committed: int = 0
    edges: int = 0
    cycle: list[tuple[int, int]] | None = None
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.cycle is None and not self.errors


def conflict_graph(trace: Iterable[TxRecord]) -> nx.DiGraph:
    """Dependency graph of the committed transactions in ``trace``.

    Raises
    ------
    ValueError
        If two transactions claim to have installed the same version of a key.
    """
    committed = [r for r in trace if r.status is TxStatus.COMMITTED]
    graph = nx.DiGraph()
    graph.add_nodes_from(r.tx_id for r in committed)
    writer: dict[tuple[int, int], int] = {}
    for record in committed:
        for key, version, _ in record.writes:
            other = writer.setdefault((key, version), record.tx_id)
            if other != record.tx_id:
                raise ValueError(
                    f"Transactions {other} and {record.tx_id} both installed "
                    f"version {version} of key {key}."
                )

    def add(a: int | None, b: int | None, kind: str) -> None:
        if a is not None and b is not None and a != b:
            graph.add_edge(a, b, kind=kind)

    for (key, version), tx_id in writer.items():
        add(writer.get((key, version - 1)), tx_id, 'ww')
    for record in committed:
        for key, version in record.reads:
            add(writer.get((key, version)), record.tx_id, 'wr')
            add(record.tx_id, writer.get((key, version + 1)), 'rw')
    return graph


def _installed_versions(
    trace: Sequence[TxRecord], initial: StoreState, final: StoreState
) -> list[str]:
    errors = []
    installed: dict[int, list[int]] = {}
    for record in trace:
        if record.status is not TxStatus.COMMITTED:
            if record.writes:
                errors.append(f"Aborted transaction {record.tx_id} installed writes.")
            continue
        for key, version, _ in record.writes:
            installed.setdefault(key, []).append(version)
    for key, versions in sorted(installed.items()):
        base = initial[key][0] if key in initial else 0
        expected = list(range(base + 1, base + 1 + len(versions)))
        if sorted(versions) != expected:
            errors.append(
                f"Key {key} has installed versions {sorted(versions)}, "
                f"expected {expected}."
            )
        if key in final and final[key][0] - base != len(versions):
            errors.append(
                f"Key {key} is at version {final[key][0]} after "
                f"{len(versions)} committed writes from version {base}."
            )
    return errors


def replay(
    trace: Sequence[TxRecord],
    initial: StoreState,
    order: Iterable[int],
    journal: Iterable[JournalEntry] = (),
) -> tuple[dict[int, tuple[int, bytes]], list[str]]:
    """Apply committed transactions one at a time in ``order``, then the journal.

    Returns the resulting state and every read that saw a version other
    than the one current at that point of the serial order.
    """
    by_id = {r.tx_id: r for r in trace if r.status is TxStatus.COMMITTED}
    state = dict(initial)
    errors = []
    for tx_id in order:
        record = by_id[tx_id]
        for key, version in record.reads:
            current = state.get(key, (None, b''))[0]
            if current != version:
                errors.append(
                    f"Transaction {tx_id} read version {version} of key {key}, "
                    f"serial order has {current}."
                )
        for key, version, value in record.writes:
            state[key] = (version, value)
    for entry in journal:
        present = entry.key in state
        match entry.opcode:
            case RpcOpcode.INSERT:
                if entry.applied == present:
                    errors.append(f"Insert #{entry.seq} of key {entry.key} conflicts.")
                if entry.applied:
                    state[entry.key] = (0, entry.value)
            case RpcOpcode.DELETE:
                if entry.applied != present:
                    errors.append(f"Delete #{entry.seq} of key {entry.key} conflicts.")
                if entry.applied:
                    del state[entry.key]
    return dict(sorted(state.items())), errors


def check_serializability(
    trace: Sequence[TxRecord],
    initial: StoreState,
    final: StoreState,
    *,
    journals: Iterable[Sequence[JournalEntry]] = (),
    locked_keys: Sequence[int] = (),
) -> OracleReport:
    """Check that a finished run is equivalent to a serial execution.

    Parameters
    ----------
    trace:
        Records of every finished transaction.
    initial:
        Store contents before the run.
    final:
        Store contents after the run.
    journals:
        Insert and delete journal of each partition, in application order.
    locked_keys:
        Keys still locked after the run. Any is an error.
    """
    report = OracleReport()
    report.committed = sum(r.status is TxStatus.COMMITTED for r in trace)
    try:
        graph = conflict_graph(trace)
    except ValueError as err:
        report.errors.append(str(err))
        return report
    report.edges = graph.number_of_edges()
    try:
        cycle = nx.find_cycle(graph, orientation='original')
        report.cycle = [(a, b) for a, b, _ in cycle]
    except nx.NetworkXNoCycle:
        pass
    if report.cycle is not None:
        report.errors.append(f"Conflict graph has a cycle: {report.cycle}")
        return report
    order = nx.lexicographical_topological_sort(graph)
    entries = sorted(
        (entry for journal in journals for entry in journal),
        key=lambda e: (e.key, e.seq),
    )
    replayed, errors = replay(trace, initial, order, entries)
    report.errors.extend(errors)
    report.errors.extend(_installed_versions(trace, initial, final))
    if replayed != dict(final):
        differing = sorted(
            k for k in replayed.keys() | final.keys() if replayed.get(k) != final.get(k)
        )
        report.errors.append(
            f"Serial replay differs from the store at keys {differing[:10]}."
        )
    if locked_keys:
        report.errors.append(f"Locks leaked on keys {list(locked_keys)[:10]}.")
    kinds = Counter(kind for _, _, kind in graph.edges(data='kind'))
    get_logger().info(
        "Checked %d committed transactions: %d ww, %d wr, %d rw edges, %d errors",
        report.committed,
        kinds['ww'],
        kinds['wr'],
        kinds['rw'],
        len(report.errors),
    )
    return report
