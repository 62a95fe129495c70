# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Key-value lookups and the TATP-lite transaction mix on a Storm cluster."""

from __future__ import annotations

import struct
from collections import Counter
from collections.abc import Callable, Generator
from dataclasses import dataclass, field
from typing import Any, TextIO

import numpy as np

from ..dataplane import (
    CoroutineContext,
    DataplaneConfig,
    DataplaneStats,
    LookupMode,
    ReadPath,
    RpcOpcode,
    StormCluster,
)
from ..dataplane.core import Token
from ..engine import Engine, host_target
from ..kvstore import DEFAULT_CHUNK_BYTES, DEFAULT_VALUE_BYTES, DistributedHashTable
from ..logging import get_logger
from ..nic import LatencyBreakdown, NicConfig
from ..txengine import CommitOrdering, TxContext, TxEngine, TxRecord, TxStatus
from ..verbs import sibling_connection_count
from .spec import Op, OpKind, OpStream, WorkloadKind, WorkloadSpec, generate

TABLE_ID = 1
_U64 = struct.Struct('<Q')


@dataclass(frozen=True, kw_only=True)
class TableOptions:
    """Shape of the distributed hash table used by a workload."""

    bucket_width: int = 1
    target_occupancy: float = 0.6
    value_bytes: int = DEFAULT_VALUE_BYTES
    n_buckets: int | None = None
    chunk_bytes: int = DEFAULT_CHUNK_BYTES
    physical_segments: bool = False
    cache_capacity: int | None = None


def initial_value(key: int, value_bytes: int = DEFAULT_VALUE_BYTES) -> bytes:
    """Value a key holds after preloading."""
    return (_U64.pack(key) * -(-value_bytes // _U64.size))[:value_bytes]


def bumped(value: bytes) -> bytes:
    """``value`` with its leading counter incremented."""
    (counter,) = _U64.unpack_from(value)
    return _U64.pack((counter + 1) % 2**64) + value[_U64.size :]


@dataclass
class WorkloadResult:
    """Measurements of one run of a Storm workload."""

    kind: WorkloadKind
    mode: LookupMode
    n_nodes: int
    connections: int
    """RC connections per node."""
    ops: int
    completed: int = 0
    """Operations that finished, committed transactions included."""
    aborted: int = 0
    elapsed_ns: int = 0
    latencies_ns: list[int] = field(default_factory=list)
    breakdown: LatencyBreakdown = field(default_factory=LatencyBreakdown)
    """Sum over all finished operations."""
    stats: DataplaneStats = field(default_factory=DataplaneStats)
    cache_hit_rate: float = 1.0
    wrong_values: int = 0
    """Lookups that returned a value other than the stored one."""
    trace: list[TxRecord] = field(default_factory=list)

    @property
    def lost(self) -> int:
        return self.ops - self.completed - self.aborted

    @property
    def throughput_per_machine(self) -> float:
        """Finished operations per microsecond and node."""
        if not self.elapsed_ns:
            return 0.0
        return self.completed * 1000.0 / self.elapsed_ns / self.n_nodes

    @property
    def abort_rate(self) -> float:
        done = self.completed + self.aborted
        return self.aborted / done if done else 0.0

    def latency_percentile(self, q: float) -> float:
        if not self.latencies_ns:
            return 0.0
        return float(np.percentile(self.latencies_ns, q))

    def mean_breakdown(self) -> LatencyBreakdown:
        """Mean latency buckets; host CPU time is folded into ``net_const``."""
        n = len(self.latencies_ns)
        if not n:
            return LatencyBreakdown()
        return self.breakdown.mean(n).with_total(round(sum(self.latencies_ns) / n))


class StormExperiment:
    """A Storm cluster with a preloaded table, ready to run a workload.

    Parameters
    ----------
    nic_config:
        NIC model of every node.
    spec:
        Workload to run; ``KV_LOOKUPS`` and ``TATP_LITE`` are supported.
    mode:
        How lookups fetch remote items.
    rr_fallback_after:
        Failed one-sided reads along a chain before falling back to RPC.
    table:
        Shape of the hash table.
    ordering:
        When transactions take their write locks.
    event_log:
        Sink of the engine's dispatch log.
    """

    def __init__(
        self,
        nic_config: NicConfig,
        spec: WorkloadSpec,
        *,
        mode: LookupMode = LookupMode.STORM,
        rr_fallback_after: int = 1,
        table: TableOptions | None = None,
        ordering: CommitOrdering = CommitOrdering.LOCK_IN_EXECUTION,
        event_log: TextIO | None = None,
    ) -> None:
        if spec.kind not in (WorkloadKind.KV_LOOKUPS, WorkloadKind.TATP_LITE):
            raise ValueError(f"{spec.kind.name} does not run on a Storm cluster.")
        table = table or TableOptions()
        self.spec = spec
        self.engine = Engine(seed=spec.seed, event_log=event_log)
        self.cluster = StormCluster(
            self.engine,
            nic_config,
            spec.n_nodes,
            DataplaneConfig(
                threads_per_node=spec.threads_per_node,
                coroutines_per_thread=spec.coroutines_per_thread,
                mode=mode,
                rr_fallback_after=rr_fallback_after,
            ),
        )
        self.table = DistributedHashTable(
            self.cluster,
            TABLE_ID,
            key_count=spec.key_count,
            bucket_width=table.bucket_width,
            target_occupancy=table.target_occupancy,
            value_bytes=table.value_bytes,
            n_buckets=table.n_buckets,
            chunk_bytes=table.chunk_bytes,
            physical_segments=table.physical_segments,
            cache_capacity=table.cache_capacity,
        )
        value_bytes = table.value_bytes
        self.table.preload(
            range(1, spec.key_count + 1), lambda key: initial_value(key, value_bytes)
        )
        self.initial = self.table.snapshot()
        self.tx_engine = TxEngine([self.table], ordering=ordering)
        self.streams: OpStream = generate(spec)
        self.result = WorkloadResult(
            kind=spec.kind,
            mode=mode,
            n_nodes=spec.n_nodes,
            connections=sibling_connection_count(spec.n_nodes, spec.threads_per_node),
            ops=sum(len(ops) for ops in self.streams.values()),
        )
        self._running = 0
        self._relocations = 0

    @property
    def mode(self) -> LookupMode:
        return self.cluster.config.mode

    def schedule_relocations(self, interval_ns: int) -> None:
        """Move a random preloaded key to a fresh slot every ``interval_ns``.

        Relocations invalidate addresses cached by clients and stop once all
        coroutines have finished.
        """
        if interval_ns < 1:
            raise ValueError("interval_ns must be positive.")
        rng = self.engine.rng.fork(1)

        def relocate() -> None:
            if not self._running:
                return
            key = rng.integers(1, self.spec.key_count + 1)
            view = self.table.get(key)
            if view is not None and not view.lock:
                self.table.relocate(key)
                self._relocations += 1
            self.engine.schedule(interval_ns, host_target(0), relocate, kind='relocate')

        self.engine.schedule(interval_ns, host_target(0), relocate, kind='relocate')

    @property
    def relocations(self) -> int:
        return self._relocations

    def run(self) -> WorkloadResult:
        """Run every coroutine's operations to completion."""
        for (n, t, _), ops in self.streams.items():
            thread = self.cluster.dataplanes[n].threads[t]
            thread.spawn(self._body(ops), on_done=self._on_done)
            self._running += 1
        self.cluster.run()
        result = self.result
        result.elapsed_ns = self.engine.now()
        result.stats = self.cluster.stats
        result.trace = self.tx_engine.trace
        hits = sum(node.nic.hits for node in self.cluster.fabric.nodes)
        misses = sum(node.nic.misses for node in self.cluster.fabric.nodes)
        result.cache_hit_rate = hits / (hits + misses) if hits + misses else 1.0
        get_logger().info(
            "%s in %s mode: %d ops, %d aborted, %.3f ops/us per machine",
            result.kind.name,
            result.mode.name,
            result.completed,
            result.aborted,
            result.throughput_per_machine,
        )
        return result

    def _on_done(self, _: object) -> None:
        self._running -= 1

    def _body(
        self, ops: list[Op]
    ) -> Callable[[CoroutineContext], Generator[Token, Any, None]]:
        def body(ctx: CoroutineContext) -> Generator[Token, Any, None]:
            for op in ops:
                started = ctx.now
                if self.spec.kind is WorkloadKind.KV_LOOKUPS:
                    finished = yield from self._lookup(ctx, op)
                else:
                    finished = yield from self._tatp(ctx, op)
                self._account(ctx, started, finished)

        return body

    def _account(self, ctx: CoroutineContext, started: int, finished: bool) -> None:
        breakdown = ctx.take_breakdown()
        if not finished:
            self.result.aborted += 1
            return
        self.result.completed += 1
        self.result.latencies_ns.append(ctx.now - started)
        self.result.breakdown += breakdown

    def _lookup(self, ctx: CoroutineContext, op: Op) -> Generator[Token, Any, bool]:
        client = self.table.clients[ctx.node_id]
        for key in op.keys:
            buffer, path = yield from ctx.process_read_set_item(TABLE_ID, key)
            view = client.parse(buffer, key)
            expected = self.initial[key][1]
            if view is None or view.value != expected:
                self.result.wrong_values += 1
                get_logger().warning(
                    "Lookup of key %d via %s returned a wrong value", key, path.name
                )
        return True

    def _tatp(self, ctx: CoroutineContext, op: Op) -> Generator[Token, Any, bool]:
        engine = self.tx_engine
        match op.kind:
            case OpKind.READ:

                def read_only(tx: TxContext) -> Generator[Token, Any, None]:
                    for key in op.keys:
                        yield from engine.add_to_read_set(ctx, tx, TABLE_ID, key)

                record = yield from engine.run(ctx, read_only)
                return record.status is TxStatus.COMMITTED
            case OpKind.WRITE:
                source, target = op.keys

                def read_write(tx: TxContext) -> Generator[Token, Any, None]:
                    value = yield from engine.add_to_read_set(ctx, tx, TABLE_ID, source)
                    yield from engine.add_to_write_set(
                        ctx, tx, TABLE_ID, target, bumped(value)
                    )

                record = yield from engine.run(ctx, read_write)
                return record.status is TxStatus.COMMITTED
            case OpKind.INSERT:
                (key,) = op.keys
                value = initial_value(key, self.table.layout.value_bytes)
                yield from ctx.rpc_send(
                    self.table.home_node(key),
                    RpcOpcode.INSERT,
                    TABLE_ID,
                    self.table.request_payload(_U64.pack(key), value),
                )
                return True
            case OpKind.DELETE:
                (key,) = op.keys
                yield from ctx.rpc_send(
                    self.table.home_node(key),
                    RpcOpcode.DELETE,
                    TABLE_ID,
                    self.table.request_payload(_U64.pack(key)),
                )
                return True
        raise ValueError(f"Unknown operation {op.kind}.")


def run_workload(
    nic_config: NicConfig,
    spec: WorkloadSpec,
    *,
    mode: LookupMode = LookupMode.STORM,
    rr_fallback_after: int = 1,
    table: TableOptions | None = None,
    ordering: CommitOrdering = CommitOrdering.LOCK_IN_EXECUTION,
    event_log: TextIO | None = None,
) -> WorkloadResult:
    """Build a :class:`StormExperiment` and run it."""
    experiment = StormExperiment(
        nic_config,
        spec,
        mode=mode,
        rr_fallback_after=rr_fallback_after,
        table=table,
        ordering=ordering,
        event_log=event_log,
    )
    return experiment.run()


def path_counts(stats: DataplaneStats) -> Counter[str]:
    """Lookup path counters keyed by result column name."""
    return Counter(
        {
            'read_only': stats.paths[ReadPath.READ_ONLY],
            'read_then_rpc': stats.paths[ReadPath.READ_THEN_RPC],
            'rpc_only': stats.paths[ReadPath.RPC_ONLY],
        }
    )
