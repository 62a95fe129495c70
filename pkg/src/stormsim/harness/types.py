# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Domain types of the experiment pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NewType, TextIO

from ..dataplane import LookupMode
from ..nic import NicConfig
from ..txengine import CommitOrdering, TxRecord
from ..workloads import TableOptions, WorkloadKind, WorkloadSpec

PresetSource = NewType('PresetSource', str)
"""Name of a bundled NIC preset or path to a preset file."""
NicPreset = NewType('NicPreset', NicConfig)
"""NIC model of every simulated node."""
Seed = NewType('Seed', int)
ExperimentId = NewType('ExperimentId', str)
"""Label of an experiment, written to every result row."""
Workload = NewType('Workload', WorkloadSpec)
ResultTable = NewType('ResultTable', str)
"""Result rows as CSV text."""
TransactionTable = NewType('TransactionTable', str)
"""Transaction trace as CSV text."""


@dataclass(frozen=True, kw_only=True)
class Topology:
    n_nodes: int = 2
    threads_per_node: int = 1
    coroutines_per_thread: int = 8
    virtual_nodes: tuple[int, ...] = ()
    """Cluster sizes emulated by ``emulation`` and ``ud_break_even`` runs."""


@dataclass(frozen=True, kw_only=True)
class LookupSettings:
    mode: LookupMode = LookupMode.STORM
    rr_fallback_after: int = 1
    commit_ordering: CommitOrdering = CommitOrdering.LOCK_IN_EXECUTION


@dataclass(frozen=True, kw_only=True)
class WorkloadParams:
    """Workload section of an experiment config.

    Not every field applies to every kind. ``op_count`` is the number of
    operations of a Storm workload, of mirrored writes, or of reads and
    messages per point of a microbenchmark.
    """

    kind: WorkloadKind = WorkloadKind.KV_LOOKUPS
    key_count: int = 10_000
    key_distribution: str = 'uniform'
    zipf_theta: float = 0.99
    op_count: int = 10_000
    message_cachelines: tuple[int, ...] = ()
    """Message sizes of mirrored writes, empty for the skewed default mix."""
    connections: tuple[int, ...] = (8, 16, 32, 64)
    """Connection counts of a random-reads run."""
    depth: int = 256
    """Operations in flight in a microbenchmark."""


@dataclass(frozen=True)
class EventLog:
    """Optional sink of the engine's dispatch log."""

    sink: TextIO | None = None


@dataclass(frozen=True, kw_only=True)
class ResultRow:
    """One measured point of an experiment.

    Columns that do not apply to an experiment kind are ``None``. The four
    latency buckets always add up to ``total_ns``.
    """

    experiment: str
    kind: str
    mode: str = ''
    """Lookup mode of Storm runs, transport of ``ud_break_even`` runs."""
    nodes: int
    connections: int
    size_bytes: int
    ops: int
    throughput_per_machine: float
    """Operations per microsecond and machine."""
    p50_ns: float | None = None
    p99_ns: float | None = None
    abort_rate: float | None = None
    cache_hit_rate: float | None = None
    read_only: int | None = None
    read_then_rpc: int | None = None
    rpc_only: int | None = None
    pcie_const: int = 0
    pcie_var: int = 0
    net_const: int = 0
    net_var: int = 0
    total_ns: int = 0

    @property
    def bucket_sum(self) -> int:
        return self.pcie_const + self.pcie_var + self.net_const + self.net_var


@dataclass
class ExperimentRun:
    """Everything one experiment produced, before invariants are enforced."""

    rows: list[ResultRow] = field(default_factory=list)
    transactions: list[TxRecord] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
