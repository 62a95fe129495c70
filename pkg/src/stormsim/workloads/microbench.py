# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Microbenchmarks driving the verbs layer directly.

These experiments need no dataplane: they post verbs in closed loops and
measure what the NICs sustain as connections, registered memory or message
sizes grow.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TextIO

import numpy as np
import scipp as sc

from ..dataplane.core import BufferLayout
from ..engine import Engine, SeededRng, SimTime, host_target
from ..logging import get_logger
from ..nic import CACHELINE_BYTES, LatencyBreakdown, MemoryRegionMeta, NicConfig
from ..verbs import (
    DEFAULT_PAGE_SIZE,
    Completion,
    CompletionQueue,
    Fabric,
    LocalBuffer,
    Node,
    QueuePair,
    RemoteTarget,
    Transport,
    sibling_connection_count,
)
from .spec import MessageSizeDistribution

READ_PAYLOAD_BYTES = 64
LOOKUP_READ_BYTES = 128
RANDOM_READ_MEMORY_BYTES = 20 * 2**30


class _ReadLoop:
    """Closed loop of one-sided reads over a set of queue pairs.

    ``window`` reads are in flight at any time. Each completion reposts a
    read to a random aligned offset of a random target region, on the next
    queue pair in round-robin order.
    """

    def __init__(
        self,
        fabric: Fabric,
        cq: CompletionQueue,
        qps: Sequence[QueuePair],
        local: MemoryRegionMeta,
        targets: Sequence[MemoryRegionMeta],
        *,
        total: int,
        window: int,
        payload_bytes: int,
        rng: SeededRng,
    ) -> None:
        if local.length_bytes < window * payload_bytes:
            raise ValueError("Local buffer cannot hold one payload per window slot.")
        self.fabric = fabric
        self.qps = qps
        self.local = local
        self.targets = targets
        self.total = total
        self.window = window
        self.payload_bytes = payload_bytes
        self.rng = rng
        self.timestamps: list[SimTime] = []
        self.breakdown = LatencyBreakdown()
        """Sum over all completed reads."""
        self._issued = 0
        cq.on_completion = self._on_completion

    def start(self) -> None:
        for slot in range(min(self.window, self.total)):
            self._post(slot)

    def _post(self, slot: int) -> None:
        qp = self.qps[self._issued % len(self.qps)]
        region = self.targets[self.rng.integers(0, len(self.targets))]
        offset = self.rng.integers(0, region.length_bytes // self.payload_bytes)
        self.fabric.post_read(
            qp,
            LocalBuffer(
                self.local.region_id, slot * self.payload_bytes, self.payload_bytes
            ),
            RemoteTarget(region.region_id, offset * self.payload_bytes),
            wr_id=slot,
        )
        self._issued += 1

    def _on_completion(self, cq: CompletionQueue) -> None:
        for completion in cq.poll():
            if not completion.ok:
                raise RuntimeError(f"Read failed with {completion.status.name}.")
            self.timestamps.append(completion.timestamp)
            self.breakdown += completion.breakdown
            if self._issued < self.total:
                self._post(completion.wr_id)


def steady_throughput(timestamps: Sequence[SimTime]) -> float:
    """Completions per microsecond after the first third of a run.

    The first third covers cold caches and the ramp-up of the window.
    """
    stamps = sorted(timestamps)
    start = len(stamps) // 3
    if len(stamps) - start < 2 or stamps[-1] == stamps[start]:
        raise ValueError("Too few completions to measure a throughput.")
    return (len(stamps) - 1 - start) * 1000.0 / (stamps[-1] - stamps[start])


BUCKETS = ('pcie_const', 'pcie_var', 'net_const', 'net_var')
"""Names of the latency buckets, in the order they are reported."""


def _curve(
    dim: str,
    values: Sequence[int],
    throughput: Sequence[float],
    **coords: Sequence | sc.Variable,
) -> sc.DataArray:
    def as_variable(v: Sequence | sc.Variable) -> sc.Variable:
        if isinstance(v, sc.Variable):
            return v
        return sc.array(dims=[dim], values=np.asarray(v), unit=None)

    return sc.DataArray(
        sc.array(dims=[dim], values=np.asarray(throughput, dtype=float), unit='1/us'),
        coords={
            dim: as_variable(values),
            **{name: as_variable(v) for name, v in coords.items()},
        },
    )


def _bucket_coords(
    dim: str, breakdowns: Sequence[LatencyBreakdown]
) -> dict[str, sc.Variable]:
    """Mean latency buckets of each curve point as ``ns`` coordinates."""
    return {
        name: sc.array(
            dims=[dim], values=[getattr(b, name) for b in breakdowns], unit='ns'
        )
        for name in BUCKETS
    }


def _mean_breakdown(loops: Sequence[_ReadLoop]) -> LatencyBreakdown:
    total = LatencyBreakdown()
    for loop in loops:
        total += loop.breakdown
    return total.mean(sum(len(loop.timestamps) for loop in loops))


def _context_hit_rate(nodes: Sequence[Node]) -> float:
    hits = sum(n.nic.context_cache.hits for n in nodes)
    misses = sum(n.nic.context_cache.misses for n in nodes)
    return hits / (hits + misses) if hits + misses else 1.0


def run_random_reads(
    config: NicConfig,
    connections: Sequence[int],
    *,
    reads_per_point: int = 3000,
    window: int = 256,
    payload_bytes: int = READ_PAYLOAD_BYTES,
    memory_bytes: int = RANDOM_READ_MEMORY_BYTES,
    page_size: int = DEFAULT_PAGE_SIZE,
    regions: int = 1,
    physical_segment: bool = False,
    prefetch: bool = True,
    seed: int = 0,
    event_log: TextIO | None = None,
) -> sc.DataArray:
    """Sustained random-read throughput for each connection count.

    One node reads ``payload_bytes`` at random aligned offsets of
    ``memory_bytes`` registered on a second node. The reads are spread
    round-robin over the connections.

    Parameters
    ----------
    config:
        NIC preset of both nodes.
    connections:
        RC connection counts to measure.
    window:
        Reads in flight, summed over all connections.
    page_size:
        Page size of the target memory.
    regions:
        Number of regions the target memory is split into.
    physical_segment:
        Register the target memory as physical segments.
    prefetch:
        Install translation entries of all regions before measuring.

    Returns
    -------
    :
        Throughput in reads per microsecond along ``connections``, with the
        context-cache hit rate and the mean latency buckets as coordinates.
    """
    if not connections or min(connections) < 1:
        raise ValueError("Connection counts must be positive.")
    if regions < 1:
        raise ValueError("regions must be positive.")
    throughput = []
    hit_rates = []
    breakdowns = []
    for c in connections:
        engine = Engine(seed=seed, event_log=event_log)
        fabric = Fabric(engine, config)
        client, server = fabric.add_node(), fabric.add_node()
        local = fabric.register_region(client, window * payload_bytes)
        region_bytes = memory_bytes // regions
        targets = [
            fabric.register_region(server, region_bytes, page_size, physical_segment)
            for _ in range(regions)
        ]
        cq, server_cq = fabric.create_cq(client), fabric.create_cq(server)
        qps = []
        for _ in range(c):
            qp = fabric.create_qp(client, Transport.RC, cq)
            fabric.connect(qp, fabric.create_qp(server, Transport.RC, server_cq))
            qps.append(qp)
        if prefetch:
            client.nic.prefetch_region(local)
            for region in targets:
                server.nic.prefetch_region(region)
        loop = _ReadLoop(
            fabric,
            cq,
            qps,
            local,
            targets,
            total=reads_per_point,
            window=window,
            payload_bytes=payload_bytes,
            rng=SeededRng(seed).fork(c),
        )
        loop.start()
        engine.run()
        throughput.append(steady_throughput(loop.timestamps))
        hit_rates.append(_context_hit_rate([client, server]))
        breakdowns.append(_mean_breakdown([loop]))
        get_logger().info(
            "Random reads with %d connections: %.3f reads/us", c, throughput[-1]
        )
    return _curve(
        'connections',
        connections,
        throughput,
        hit_rate=hit_rates,
        **_bucket_coords('connections', breakdowns),
    )


def throughput_drop(curve: sc.DataArray, low: int, high: int) -> float:
    """Relative throughput loss ``1 - T(high)/T(low)`` between two curve points."""
    dim = curve.dims[0]
    values = list(curve.coords[dim].values)
    if low not in values or high not in values:
        raise KeyError(f"Curve along '{dim}' has no point {low} or {high}.")
    t = curve.values
    return 1.0 - t[values.index(high)] / t[values.index(low)]


@dataclass(frozen=True, slots=True)
class MirroredWrite:
    """One synchronously mirrored write and its latency breakdown."""

    size_bytes: int
    breakdown: LatencyBreakdown

    @property
    def latency_ns(self) -> int:
        return self.breakdown.total


def run_sync_mirroring(
    config: NicConfig,
    sizes: MessageSizeDistribution | None = None,
    *,
    n_messages: int = 1000,
    seed: int = 0,
    event_log: TextIO | None = None,
) -> list[MirroredWrite]:
    """Mirror a stream of writes to a remote node, one at a time.

    Every write is acknowledged before the next one is posted, so each
    record is an unloaded latency.
    """
    if n_messages < 1:
        raise ValueError("n_messages must be positive.")
    sizes = sizes or MessageSizeDistribution()
    lengths = [int(s) for s in sizes.sample(n_messages, SeededRng(seed))]
    engine = Engine(seed=seed, event_log=event_log)
    fabric = Fabric(engine, config)
    host, mirror = fabric.add_node(), fabric.add_node()
    span = max(lengths)
    local = fabric.register_region(host, span)
    remote = fabric.register_region(mirror, span)
    cq = fabric.create_cq(host)
    qp = fabric.create_qp(host, Transport.RC, cq)
    fabric.connect(qp, fabric.create_qp(mirror, Transport.RC, fabric.create_cq(mirror)))
    records: list[MirroredWrite] = []

    def post(index: int) -> None:
        fabric.post_write(
            qp,
            LocalBuffer(local.region_id, 0, lengths[index]),
            RemoteTarget(remote.region_id, 0),
            wr_id=index,
        )

    def on_completion(queue: CompletionQueue) -> None:
        for completion in queue.poll():
            records.append(MirroredWrite(completion.byte_len, completion.breakdown))
            if completion.wr_id + 1 < n_messages:
                post(completion.wr_id + 1)

    cq.on_completion = on_completion
    post(0)
    engine.run()
    return records


def mirroring_summary(records: Sequence[MirroredWrite]) -> sc.Dataset:
    """Mean latency buckets and PCIe share per message size in cachelines."""
    if not records:
        raise ValueError("No mirrored writes to summarize.")
    by_size: dict[int, list[LatencyBreakdown]] = {}
    for record in records:
        by_size.setdefault(record.size_bytes, []).append(record.breakdown)
    sizes = sorted(by_size)
    columns: dict[str, list[float]] = {
        'pcie_const': [],
        'pcie_var': [],
        'net_const': [],
        'net_var': [],
    }
    for size in sizes:
        for name, column in columns.items():
            column.append(float(np.mean([getattr(b, name) for b in by_size[size]])))
    dim = 'cachelines'
    data = {
        name: sc.array(dims=[dim], values=values, unit='ns')
        for name, values in columns.items()
    }
    total = data['pcie_const'] + data['pcie_var'] + data['net_const'] + data['net_var']
    cachelines = [s // CACHELINE_BYTES for s in sizes]
    coords = {dim: sc.array(dims=[dim], values=cachelines, unit=None)}
    return sc.Dataset(
        {
            **data,
            'total': total,
            'pcie_share': (data['pcie_const'] + data['pcie_var']) / total,
            'variable_share': (data['pcie_var'] + data['net_var']) / total,
            'count': sc.array(dims=[dim], values=[len(by_size[s]) for s in sizes]),
        },
        coords=coords,
    )


def _pair_sibling_qps(
    fabric: Fabric, a: Node, b: Node, per_direction: int
) -> tuple[list[QueuePair], list[QueuePair]]:
    """Connect outgoing QPs of each node to incoming QPs of the other.

    Returns the outgoing QPs of ``a`` and of ``b``.
    """
    out_a = _create_qps(fabric, a, per_direction)
    out_b = _create_qps(fabric, b, per_direction)
    for outgoing, peer in ((out_a, b), (out_b, a)):
        for qp, incoming in zip(
            outgoing, _create_qps(fabric, peer, per_direction), strict=True
        ):
            fabric.connect(qp, incoming)
    return out_a, out_b


def _create_qps(fabric: Fabric, node: Node, count: int) -> list[QueuePair]:
    cq = fabric.create_cq(node)
    return [fabric.create_qp(node, Transport.RC, cq) for _ in range(count)]


def emulate_cluster(
    config: NicConfig,
    virtual_nodes: Sequence[int],
    *,
    threads_per_node: int,
    coroutines_per_thread: int = 8,
    reads_per_point: int = 3000,
    window: int = 256,
    message_bytes: int = 128,
    table_bytes: int = 2**30,
    seed: int = 0,
    event_log: TextIO | None = None,
) -> sc.DataArray:
    """Per-machine lookup throughput of a cluster of ``m`` machines.

    Two simulated machines stand in for the cluster. Each holds the
    ``2*m*t`` sibling connections and the message buffers a machine of an
    ``m``-node cluster with ``t`` threads would hold, and both issue
    one-sided lookup reads to each other over all of them.

    Returns
    -------
    :
        Reads per microsecond and machine along ``virtual_nodes``, with the
        connection count, the registered buffer bytes per machine and the
        mean latency buckets.
    """
    if not virtual_nodes or min(virtual_nodes) < 2:
        raise ValueError("Emulated clusters need at least the two simulated nodes.")
    throughput = []
    connections = []
    buffer_bytes = []
    breakdowns = []
    for m in virtual_nodes:
        n_conn = sibling_connection_count(m, threads_per_node)
        engine = Engine(seed=seed, event_log=event_log)
        fabric = Fabric(engine, config)
        a, b = fabric.add_node(), fabric.add_node()
        layout = BufferLayout(
            n_nodes=m,
            slots=coroutines_per_thread,
            message_bytes=message_bytes,
            read_bytes=LOOKUP_READ_BYTES,
        )
        for node in (a, b):
            for _ in range(threads_per_node):
                fabric.register_region(node, layout.total)
        tables = [fabric.register_region(node, table_bytes) for node in (a, b)]
        locals_ = [
            fabric.register_region(node, window * LOOKUP_READ_BYTES) for node in (a, b)
        ]
        for node, region in zip((a, b, a, b), (*tables, *locals_), strict=True):
            node.nic.prefetch_region(region)
        out_a, out_b = _pair_sibling_qps(fabric, a, b, n_conn // 2)
        # Every connection is used before measuring starts.
        total = max(reads_per_point, 2 * n_conn)
        rng = SeededRng(seed).fork(m)
        loops = [
            _ReadLoop(
                fabric,
                qps[0].send_cq,
                qps,
                local,
                [table],
                total=total,
                window=window,
                payload_bytes=LOOKUP_READ_BYTES,
                rng=rng.fork(i),
            )
            for i, (qps, local, table) in enumerate(
                ((out_a, locals_[0], tables[1]), (out_b, locals_[1], tables[0]))
            )
        ]
        for loop in loops:
            loop.start()
        engine.run()
        stamps = [t for loop in loops for t in loop.timestamps]
        throughput.append(steady_throughput(stamps) / 2)
        connections.append(a.nic.qp_count)
        buffer_bytes.append(threads_per_node * layout.total)
        breakdowns.append(_mean_breakdown(loops))
        get_logger().info(
            "Emulated %d nodes x %d threads: %d connections, %.3f reads/us/machine",
            m,
            threads_per_node,
            connections[-1],
            throughput[-1],
        )
    return _curve(
        'nodes',
        virtual_nodes,
        throughput,
        connections=connections,
        buffer_bytes=buffer_bytes,
        **_bucket_coords('nodes', breakdowns),
    )


class _MessageLoop:
    """Closed loop of one-way RPC messages into a receiving host.

    Each receive is handled on the host thread owning its queue pair. When
    the handler finishes, the receive buffer is reposted and the sender
    posts its next message.
    """

    def __init__(
        self,
        fabric: Fabric,
        sender: Node,
        receiver: Node,
        *,
        transport: Transport,
        connections: int,
        threads: int,
        window: int,
        total: int,
        message_bytes: int,
    ) -> None:
        self.fabric = fabric
        self.engine = fabric.engine
        self.receiver = receiver
        self.transport = transport
        self.threads = threads
        self.total = total
        self.message_bytes = message_bytes
        self.timestamps: list[SimTime] = []
        self._issued = 0
        self._busy_until = [0] * threads
        cfg = receiver.config
        self._handler_ns = round(cfg.host_rpc_ns)
        if transport is Transport.UD:
            self._handler_ns += round(cfg.host_repost_ns)
        send_cq, recv_cq = fabric.create_cq(sender), fabric.create_cq(receiver)
        recv_cq.on_completion = self._on_receive
        self.out = [
            fabric.create_qp(sender, transport, send_cq) for _ in range(connections)
        ]
        self.inbound = [
            fabric.create_qp(receiver, transport, recv_cq) for _ in range(connections)
        ]
        if transport is Transport.RC:
            for qp, peer in zip(self.out, self.inbound, strict=True):
                fabric.connect(qp, peer)
        self.local = fabric.register_region(sender, message_bytes)
        depth = math.ceil(window / connections) + 1
        self.inbox = fabric.register_region(
            receiver, connections * depth * message_bytes
        )
        for index, qp in enumerate(self.inbound):
            for slot in range(depth):
                fabric.post_recv(qp, self._slot(index * depth + slot))
        self.depth = depth
        self.window = window

    def _slot(self, slot: int) -> LocalBuffer:
        return LocalBuffer(
            self.inbox.region_id, slot * self.message_bytes, self.message_bytes
        )

    def start(self) -> None:
        for _ in range(min(self.window, self.total)):
            self._send()

    def _send(self) -> None:
        index = self._issued % len(self.out)
        qp = self.out[index]
        local = LocalBuffer(self.local.region_id, 0, self.message_bytes)
        if self.transport is Transport.RC:
            self.fabric.post_write_imm(
                qp,
                local,
                RemoteTarget(
                    self.inbox.region_id, index * self.depth * self.message_bytes
                ),
                imm=index,
                signaled=False,
            )
        else:
            self.fabric.post_send(qp, local, self.inbound[index], signaled=False)
        self._issued += 1

    def _on_receive(self, cq: CompletionQueue) -> None:
        now = self.engine.now()
        for completion in cq.poll():
            if not completion.ok:
                raise RuntimeError(f"Message failed with {completion.status.name}.")
            thread = completion.qp_num % self.threads
            start = max(now, self._busy_until[thread])
            self._busy_until[thread] = start + self._handler_ns
            self.engine.schedule(
                self._busy_until[thread] - now,
                host_target(self.receiver.node_id),
                self._handled,
                completion,
                kind='handler',
            )

    def _handled(self, completion: Completion) -> None:
        self.timestamps.append(self.engine.now())
        # Receiver QPs are numbered in creation order.
        index = completion.qp_num
        self.fabric.post_recv(
            self.inbound[index], self._slot(index * self.depth), wr_id=completion.wr_id
        )
        if self._issued < self.total:
            self._send()


def ud_break_even(
    config: NicConfig,
    node_counts: Sequence[int],
    *,
    threads_per_node: int,
    messages_per_point: int = 4000,
    window: int = 512,
    message_bytes: int = 64,
    seed: int = 0,
    event_log: TextIO | None = None,
) -> sc.Dataset:
    """Saturated RPC throughput of RC write-with-immediate against UD sends.

    RC needs one connection per sibling thread, ``2*m*t`` in total, while UD
    needs one queue pair per thread but pays a receive repost on every
    message.

    Returns
    -------
    :
        ``rc`` and ``ud`` throughput in messages per microsecond along
        ``nodes``.
    """
    if not node_counts or min(node_counts) < 1:
        raise ValueError("Node counts must be positive.")
    curves: dict[str, list[float]] = {'rc': [], 'ud': []}
    for m in node_counts:
        for name, transport, connections in (
            ('rc', Transport.RC, sibling_connection_count(m, threads_per_node)),
            ('ud', Transport.UD, threads_per_node),
        ):
            engine = Engine(seed=seed, event_log=event_log)
            fabric = Fabric(engine, config)
            sender, receiver = fabric.add_node(), fabric.add_node()
            loop = _MessageLoop(
                fabric,
                sender,
                receiver,
                transport=transport,
                connections=connections,
                threads=threads_per_node,
                window=window,
                total=max(messages_per_point, 2 * connections),
                message_bytes=message_bytes,
            )
            loop.start()
            engine.run()
            curves[name].append(steady_throughput(loop.timestamps))
        get_logger().info(
            "RC vs UD at %d nodes: %.3f vs %.3f msgs/us",
            m,
            curves['rc'][-1],
            curves['ud'][-1],
        )
    return sc.Dataset(
        {name: _curve('nodes', node_counts, values) for name, values in curves.items()}
    )


def break_even_nodes(result: sc.Dataset) -> int | None:
    """Smallest node count at which UD sustains at least the RC throughput."""
    nodes = result.coords['nodes'].values
    for n, rc, ud in zip(nodes, result['rc'].values, result['ud'].values, strict=True):
        if ud >= rc:
            return int(n)
    return None
