# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Simulated RDMA verbs on top of the NIC model.

:class:`Fabric` owns the nodes of a simulated cluster and implements the verbs:
queue pairs, completion queues, one-sided reads and writes, write with
immediate, and UD sends. Failures are reported as completions with an error
:class:`Status`, never as exceptions. Exceptions signal misuse of the API.

Every transfer runs as a chain of engine events targeting the NICs of the
two nodes. The host CPU of the target is never involved in one-sided
operations.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum, auto

from .engine import Engine, SimTime
from .nic import (
    QP_STATE_BYTES,
    LatencyBreakdown,
    MemoryRegionMeta,
    Nic,
    NicConfig,
    StateKey,
)
from .nic.model import net_var_ns, pcie_var_ns

UD_MTU_BYTES = 4096
IMM_LIMIT = 2**32
DEFAULT_PAGE_SIZE = 2 * 2**20


class Transport(Enum):
    RC = auto()
    """Reliable connection, supports one-sided operations."""
    UD = auto()
    """Unreliable datagram, send/recv only."""


class Opcode(Enum):
    READ = auto()
    WRITE = auto()
    WRITE_IMM = auto()
    SEND = auto()
    RECV = auto()
    """Opcode of receive completions."""


class Status(Enum):
    OK = auto()
    PROTECTION_ERROR = auto()
    DISCONNECTED = auto()
    RECEIVER_NOT_READY = auto()


@dataclass(frozen=True, slots=True)
class LocalBuffer:
    region_id: int
    offset: int
    length: int


@dataclass(frozen=True, slots=True)
class RemoteTarget:
    region_id: int
    offset: int


@dataclass(frozen=True, slots=True)
class Wqe:
    """A posted work request."""

    wr_id: int
    opcode: Opcode
    local: LocalBuffer
    remote: RemoteTarget | None = None
    imm: int | None = None
    signaled: bool = True
    """Whether a successful operation produces a completion at the initiator."""

    def __post_init__(self) -> None:
        if self.local.length < 1:
            raise ValueError("Work requests must transfer at least one byte.")
        one_sided = self.opcode in (Opcode.READ, Opcode.WRITE, Opcode.WRITE_IMM)
        if one_sided and self.remote is None:
            raise ValueError(f"{self.opcode.name} requires a remote target.")
        if self.opcode is Opcode.SEND and self.remote is not None:
            raise ValueError("SEND does not take a remote target.")
        if self.imm is not None and not 0 <= self.imm < IMM_LIMIT:
            raise ValueError("Immediate data must fit in 32 bits.")


@dataclass(frozen=True, slots=True)
class Completion:
    wr_id: int
    status: Status
    opcode: Opcode
    byte_len: int
    qp_num: int
    timestamp: SimTime
    posted_at: SimTime
    """When the work request that caused this completion was posted."""
    imm: int | None = None
    source: tuple[int, int] | None = None
    """Node and QP number of the sender, for receive completions."""
    breakdown: LatencyBreakdown = field(default_factory=LatencyBreakdown)

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    @property
    def latency(self) -> SimTime:
        return self.timestamp - self.posted_at


class CompletionQueue:
    """FIFO of completions with an optional arrival callback."""

    def __init__(self, cq_id: int, node_id: int) -> None:
        self.cq_id = cq_id
        self.node_id = node_id
        self.on_completion: Callable[[CompletionQueue], None] | None = None
        self._entries: deque[Completion] = deque()
        self.delivered = 0

    def __len__(self) -> int:
        return len(self._entries)

    def deliver(self, completion: Completion) -> None:
        self._entries.append(completion)
        self.delivered += 1
        if self.on_completion is not None:
            self.on_completion(self)

    def poll(self, max_entries: int | None = None) -> list[Completion]:
        """Remove and return up to ``max_entries`` completions in delivery order."""
        n = len(self._entries) if max_entries is None else max_entries
        out = []
        while self._entries and len(out) < n:
            out.append(self._entries.popleft())
        return out


@dataclass(frozen=True, slots=True)
class RecvBuffer:
    wr_id: int
    buffer: LocalBuffer
    wqe_key: StateKey | None = None


class QueuePair:
    """Send and receive queue of one endpoint.

    ``qp_num`` is local to the node and selects the NIC processing unit.
    """

    def __init__(
        self,
        qp_num: int,
        node_id: int,
        transport: Transport,
        send_cq: CompletionQueue,
        recv_cq: CompletionQueue,
    ) -> None:
        self.qp_num = qp_num
        self.node_id = node_id
        self.transport = transport
        self.send_cq = send_cq
        self.recv_cq = recv_cq
        self.peer: QueuePair | None = None
        self.recv_queue: deque[RecvBuffer] = deque()
        self.outstanding = 0
        self.state_bytes = QP_STATE_BYTES

    @property
    def connected(self) -> bool:
        return self.peer is not None

    @property
    def recv_depth(self) -> int:
        return len(self.recv_queue)

    def __repr__(self) -> str:
        return (
            f'QueuePair(node={self.node_id}, qp_num={self.qp_num}, '
            f'{self.transport.name})'
        )


class SparseMemory:
    """Byte-addressable memory allocated lazily in pages.

    Untouched bytes read as zero, so large regions cost nothing until written.
    """

    CHUNK = 4096

    def __init__(self) -> None:
        self._chunks: dict[int, bytearray] = {}

    @property
    def resident_bytes(self) -> int:
        return len(self._chunks) * self.CHUNK

    def read(self, address: int, length: int) -> bytes:
        out = bytearray(length)
        pos = 0
        while pos < length:
            index, start = divmod(address + pos, self.CHUNK)
            n = min(self.CHUNK - start, length - pos)
            chunk = self._chunks.get(index)
            if chunk is not None:
                out[pos : pos + n] = chunk[start : start + n]
            pos += n
        return bytes(out)

    def write(self, address: int, data: bytes) -> None:
        pos = 0
        while pos < len(data):
            index, start = divmod(address + pos, self.CHUNK)
            n = min(self.CHUNK - start, len(data) - pos)
            chunk = self._chunks.get(index)
            if chunk is None:
                chunk = self._chunks[index] = bytearray(self.CHUNK)
            chunk[start : start + n] = data[pos : pos + n]
            pos += n


class Node:
    """One simulated machine: host memory plus its NIC."""

    def __init__(self, node_id: int, config: NicConfig) -> None:
        self.node_id = node_id
        self.nic = Nic(node_id, config)
        self.memory = SparseMemory()
        self.qps: list[QueuePair] = []
        self.cqs: list[CompletionQueue] = []
        self._next_address = 0

    @property
    def config(self) -> NicConfig:
        return self.nic.config

    @property
    def regions(self) -> dict[int, MemoryRegionMeta]:
        return self.nic.regions

    def reserve(self, length: int, alignment: int) -> int:
        """Reserve ``length`` bytes of address space."""
        base = -(-self._next_address // alignment) * alignment
        self._next_address = base + length
        return base

    def read(self, region_id: int, offset: int, length: int) -> bytes:
        region = self._checked(region_id, offset, length)
        return self.memory.read(region.base + offset, length)

    def write(self, region_id: int, offset: int, data: bytes) -> None:
        region = self._checked(region_id, offset, len(data))
        self.memory.write(region.base + offset, data)

    def _checked(self, region_id: int, offset: int, length: int) -> MemoryRegionMeta:
        region = self.regions.get(region_id)
        if region is None:
            raise KeyError(
                f"Region {region_id} is not registered on node {self.node_id}."
            )
        if not region.contains(offset, length):
            raise ValueError(
                f"Access [{offset}, {offset + length}) outside region {region_id} "
                f"of {region.length_bytes} bytes."
            )
        return region


@dataclass(slots=True)
class _Transfer:
    wqe: Wqe
    qp: QueuePair
    target: QueuePair
    posted_at: SimTime
    local_region: MemoryRegionMeta | None
    status: Status = Status.OK
    data: bytes = b''
    recv: RecvBuffer | None = None


class Fabric:
    """The nodes of a simulated cluster and the verbs connecting them.

    Parameters
    ----------
    engine:
        Event engine driving all transfers.
    config:
        Default NIC configuration of nodes added with :meth:`add_node`.
    """

    def __init__(self, engine: Engine, config: NicConfig | None = None) -> None:
        self.engine = engine
        self.config = config or NicConfig()
        self.nodes: list[Node] = []
        self._region_owner: dict[int, Node] = {}
        self._next_wr_id = 1
        self._next_cq_id = 0
        self._next_recv_wqe = 0

    # Setup

    def add_node(self, config: NicConfig | None = None) -> Node:
        node = Node(len(self.nodes), config or self.config)
        self.nodes.append(node)
        return node

    def register_region(
        self,
        node: Node,
        length: int,
        page_size: int = DEFAULT_PAGE_SIZE,
        physical_segment: bool = False,
    ) -> MemoryRegionMeta:
        """Allocate address space on ``node`` and register it with its NIC.

        Region ids are unique across the fabric.
        """
        base = node.reserve(length, page_size)
        region_id = len(self._region_owner)
        meta = node.nic.register_region(
            base, length, page_size, physical_segment, region_id=region_id
        )
        self._region_owner[region_id] = node
        return meta

    def region_owner(self, region_id: int) -> Node:
        try:
            return self._region_owner[region_id]
        except KeyError:
            raise KeyError(f"Unknown region {region_id}.") from None

    def create_cq(self, node: Node) -> CompletionQueue:
        cq = CompletionQueue(self._next_cq_id, node.node_id)
        self._next_cq_id += 1
        node.cqs.append(cq)
        return cq

    def create_qp(
        self,
        node: Node,
        transport: Transport,
        cq: CompletionQueue,
        recv_cq: CompletionQueue | None = None,
    ) -> QueuePair:
        """Create a QP on ``node``; ``cq`` receives send completions.

        Receive completions go to ``recv_cq``, which defaults to ``cq``.
        """
        for q in (cq, recv_cq):
            if q is not None and q.node_id != node.node_id:
                raise ValueError("Completion queue belongs to another node.")
        if recv_cq is None:
            recv_cq = cq
        qp = QueuePair(len(node.qps), node.node_id, transport, cq, recv_cq)
        node.qps.append(qp)
        node.nic.add_qp()
        return qp

    def connect(self, a: QueuePair, b: QueuePair) -> None:
        if a.transport is not Transport.RC or b.transport is not Transport.RC:
            raise ValueError("Only RC queue pairs can be connected.")
        if a is b:
            raise ValueError("Cannot connect a queue pair to itself.")
        if a.connected or b.connected:
            raise RuntimeError("Queue pair is already connected.")
        a.peer = b
        b.peer = a

    def disconnect(self, qp: QueuePair) -> None:
        """Tear down the connection of ``qp``; operations in flight fail."""
        if qp.peer is not None:
            qp.peer.peer = None
            qp.peer = None

    # Posting

    def post_read(
        self,
        qp: QueuePair,
        local: LocalBuffer,
        remote: RemoteTarget,
        *,
        wr_id: int | None = None,
        delay: SimTime = 0,
    ) -> int:
        """Read ``local.length`` bytes at ``remote`` into ``local``."""
        wqe = Wqe(self._wr_id(wr_id), Opcode.READ, local, remote)
        return self._post(qp, self._rc_peer(qp), wqe, delay)

    def post_write(
        self,
        qp: QueuePair,
        local: LocalBuffer,
        remote: RemoteTarget,
        *,
        wr_id: int | None = None,
        delay: SimTime = 0,
        signaled: bool = True,
    ) -> int:
        wqe = Wqe(self._wr_id(wr_id), Opcode.WRITE, local, remote, signaled=signaled)
        return self._post(qp, self._rc_peer(qp), wqe, delay)

    def post_write_imm(
        self,
        qp: QueuePair,
        local: LocalBuffer,
        remote: RemoteTarget,
        imm: int,
        *,
        wr_id: int | None = None,
        delay: SimTime = 0,
        signaled: bool = True,
    ) -> int:
        """Write to ``remote`` and notify the peer through a receive completion.

        The write consumes one receive buffer at the peer. If none is posted
        the operation fails with :attr:`Status.RECEIVER_NOT_READY` and nothing
        is written.
        """
        wqe = Wqe(
            self._wr_id(wr_id), Opcode.WRITE_IMM, local, remote, imm, signaled=signaled
        )
        return self._post(qp, self._rc_peer(qp), wqe, delay)

    def post_send(
        self,
        qp: QueuePair,
        local: LocalBuffer,
        dest: QueuePair,
        *,
        wr_id: int | None = None,
        delay: SimTime = 0,
        signaled: bool = True,
    ) -> int:
        """Send a datagram into the next receive buffer of ``dest``."""
        if qp.transport is not Transport.UD or dest.transport is not Transport.UD:
            raise ValueError("SEND is only supported on UD queue pairs.")
        if local.length > UD_MTU_BYTES:
            raise ValueError(f"UD messages are limited to {UD_MTU_BYTES} bytes.")
        wqe = Wqe(self._wr_id(wr_id), Opcode.SEND, local, signaled=signaled)
        return self._post(qp, dest, wqe, delay)

    def post_recv(
        self, qp: QueuePair, buffer: LocalBuffer, *, wr_id: int | None = None
    ) -> int:
        node = self.nodes[qp.node_id]
        key = None
        if qp.transport is Transport.UD:
            key = node.nic.recv_wqe_key(self._next_recv_wqe)
            self._next_recv_wqe += 1
            node.nic.context_cache.warm(key, self.engine.now())
        wr_id = self._wr_id(wr_id)
        qp.recv_queue.append(RecvBuffer(wr_id, buffer, key))
        node.nic.recv_posted()
        return wr_id

    def poll_cq(
        self, cq: CompletionQueue, max_entries: int | None = None
    ) -> list[Completion]:
        return cq.poll(max_entries)

    # Pipeline

    def _wr_id(self, wr_id: int | None) -> int:
        if wr_id is not None:
            return wr_id
        wr_id = self._next_wr_id
        self._next_wr_id += 1
        return wr_id

    def _rc_peer(self, qp: QueuePair) -> QueuePair:
        if qp.transport is not Transport.RC:
            raise ValueError("One-sided operations require an RC queue pair.")
        if qp.peer is None:
            raise RuntimeError(f"{qp} is not connected.")
        return qp.peer

    def _post(self, qp: QueuePair, target: QueuePair, wqe: Wqe, delay: SimTime) -> int:
        node = self.nodes[qp.node_id]
        transfer = _Transfer(
            wqe=wqe,
            qp=qp,
            target=target,
            posted_at=self.engine.now() + delay,
            local_region=node.regions.get(wqe.local.region_id),
        )
        qp.outstanding += 1
        doorbell = round(node.config.pcie_write_ns)
        self.engine.schedule(
            delay + doorbell,
            node.node_id,
            self._initiator_pu,
            transfer,
            kind='doorbell',
        )
        return wqe.wr_id

    def _initiator_pu(self, t: _Transfer) -> None:
        now = self.engine.now()
        node = self.nodes[t.qp.node_id]
        cfg = node.config
        local = t.wqe.local
        region = t.local_region
        keys = node.nic.lookup_keys(t.qp.qp_num, region, local.offset, local.length)
        done_at = node.nic.pu_dispatch(t.qp.qp_num, keys, now).done_at
        if region is None or not region.contains(local.offset, local.length):
            t.status = Status.PROTECTION_ERROR
            self.engine.schedule(
                done_at - now + round(cfg.pcie_write_ns),
                node.node_id,
                self._complete,
                t,
                kind='completion',
            )
            return
        if t.wqe.opcode is not Opcode.READ:
            t.data = node.memory.read(t.local_region.base + local.offset, local.length)
        pcie_var = pcie_var_ns(cfg, local.length)
        outbound = round(cfg.wire_prop_ns)
        if t.wqe.opcode is not Opcode.READ:
            outbound += net_var_ns(cfg, local.length)
        self.engine.schedule(
            done_at - now + round(cfg.pcie_dma_rt_ns) + pcie_var // 2 + outbound,
            t.target.node_id,
            self._target_pu,
            t,
            kind='wire',
        )

    def _target_pu(self, t: _Transfer) -> None:
        now = self.engine.now()
        node = self.nodes[t.target.node_id]
        wqe = t.wqe
        if t.wqe.opcode is Opcode.SEND:
            region, offset = None, 0
        else:
            assert wqe.remote is not None  # noqa: S101
            region = node.regions.get(wqe.remote.region_id)
            offset = wqe.remote.offset
        keys = node.nic.lookup_keys(t.target.qp_num, region, offset, wqe.local.length)
        if wqe.opcode is Opcode.SEND and t.target.recv_queue:
            recv_key = t.target.recv_queue[0].wqe_key
            if recv_key is not None:
                keys.append(recv_key)
        done_at = node.nic.pu_dispatch(t.target.qp_num, keys, now).done_at
        self.engine.schedule(
            done_at - now, node.node_id, self._target_done, t, kind='target'
        )

    def _target_done(self, t: _Transfer) -> None:
        node = self.nodes[t.target.node_id]
        cfg = self.nodes[t.qp.node_id].config
        wqe = t.wqe
        length = wqe.local.length
        if t.target.peer is not t.qp and wqe.opcode is not Opcode.SEND:
            t.status = Status.DISCONNECTED
        elif wqe.opcode is Opcode.SEND:
            self._place_send(node, t)
        else:
            assert wqe.remote is not None  # noqa: S101
            region = node.regions.get(wqe.remote.region_id)
            if region is None or not region.contains(wqe.remote.offset, length):
                t.status = Status.PROTECTION_ERROR
            elif wqe.opcode is Opcode.WRITE_IMM and not t.target.recv_queue:
                t.status = Status.RECEIVER_NOT_READY
            else:
                address = region.base + wqe.remote.offset
                if wqe.opcode is Opcode.READ:
                    t.data = node.memory.read(address, length)
                else:
                    node.memory.write(address, t.data)
                if wqe.opcode is Opcode.WRITE_IMM:
                    t.recv = self._consume_recv(node, t.target)
        pcie_var = pcie_var_ns(cfg, length)
        second_half = pcie_var - pcie_var // 2
        if t.recv is not None:
            self.engine.schedule(
                second_half, node.node_id, self._deliver_recv, t, kind='recv'
            )
            return
        inbound = round(cfg.wire_prop_ns)
        if wqe.opcode is Opcode.READ and t.status is Status.OK:
            inbound += net_var_ns(cfg, length)
        self.engine.schedule(
            second_half + inbound + round(cfg.pcie_write_ns),
            t.qp.node_id,
            self._complete,
            t,
            kind='completion',
        )

    def _place_send(self, node: Node, t: _Transfer) -> None:
        if not t.target.recv_queue:
            t.status = Status.RECEIVER_NOT_READY
            return
        buffer = t.target.recv_queue[0].buffer
        region = node.regions.get(buffer.region_id)
        if (
            region is None
            or buffer.length < len(t.data)
            or not region.contains(buffer.offset, len(t.data))
        ):
            t.status = Status.PROTECTION_ERROR
            return
        node.memory.write(region.base + buffer.offset, t.data)
        t.recv = self._consume_recv(node, t.target)

    def _consume_recv(self, node: Node, qp: QueuePair) -> RecvBuffer:
        recv = qp.recv_queue.popleft()
        node.nic.recv_consumed()
        if recv.wqe_key is not None:
            node.nic.context_cache.invalidate(recv.wqe_key)
        return recv

    def _deliver_recv(self, t: _Transfer) -> None:
        assert t.recv is not None  # noqa: S101
        now = self.engine.now()
        cfg = self.nodes[t.qp.node_id].config
        length = t.wqe.local.length
        delivered = LatencyBreakdown(
            pcie_const=round(cfg.pcie_write_ns) + round(cfg.pcie_dma_rt_ns),
            pcie_var=pcie_var_ns(cfg, length),
            net_var=net_var_ns(cfg, length),
        ).with_total(now - t.posted_at)
        t.target.recv_cq.deliver(
            Completion(
                wr_id=t.recv.wr_id,
                status=Status.OK,
                opcode=Opcode.RECV,
                byte_len=length,
                qp_num=t.target.qp_num,
                timestamp=now,
                posted_at=t.posted_at,
                imm=t.wqe.imm,
                source=(t.qp.node_id, t.qp.qp_num),
                breakdown=delivered,
            )
        )
        self.engine.schedule(
            round(cfg.wire_prop_ns) + round(cfg.pcie_write_ns),
            t.qp.node_id,
            self._complete,
            t,
            kind='completion',
        )

    def _complete(self, t: _Transfer) -> None:
        now = self.engine.now()
        node = self.nodes[t.qp.node_id]
        cfg = node.config
        t.qp.outstanding -= 1
        wqe = t.wqe
        if wqe.opcode is Opcode.READ and t.status is Status.OK:
            assert t.local_region is not None  # noqa: S101
            node.memory.write(t.local_region.base + wqe.local.offset, t.data)
        if t.status is Status.OK and not wqe.signaled:
            return
        length = wqe.local.length
        transferred = length if t.status is Status.OK else 0
        breakdown = LatencyBreakdown(
            pcie_const=2 * round(cfg.pcie_write_ns) + round(cfg.pcie_dma_rt_ns),
            pcie_var=pcie_var_ns(cfg, transferred),
            net_var=net_var_ns(cfg, transferred),
        ).with_total(now - t.posted_at)
        t.qp.send_cq.deliver(
            Completion(
                wr_id=wqe.wr_id,
                status=t.status,
                opcode=wqe.opcode,
                byte_len=transferred,
                qp_num=t.qp.qp_num,
                timestamp=now,
                posted_at=t.posted_at,
                imm=wqe.imm,
                breakdown=breakdown,
            )
        )


def sibling_connection_count(machines: int, threads: int) -> int:
    """RC connections per machine when sibling threads are pairwise connected.

    Every thread holds one outgoing and one incoming connection per machine.
    """
    if machines < 1 or threads < 1:
        raise ValueError("Machine and thread counts must be positive.")
    return 2 * machines * threads

