# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Event loop, coroutine scheduler and the read and RPC pipelines.

Application code runs in coroutines written as generators. A coroutine
suspends by yielding a token and is resumed with the matching completion,
so remote reads and RPCs look blocking::

    def body(ctx):
        fetched = yield from ctx.remote_read(region_id, offset, 128)
        reply = yield from ctx.rpc_send(node, RpcOpcode.READ, object_id, payload)

Each simulated thread owns a serial CPU timeline. Handling an inbound RPC,
resuming a coroutine and posting a verb each advance it by the costs in
:class:`~stormsim.nic.NicConfig`, and verbs are posted at the CPU time at
which they are issued.
"""

from __future__ import annotations

from collections import Counter, deque
from collections.abc import Callable, Generator, Hashable
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Any

from ..engine import SimTime, host_target
from ..logging import get_logger
from ..nic import LatencyBreakdown
from ..nic.model import net_var_ns, pcie_var_ns
from ..verbs import (
    Completion,
    CompletionQueue,
    Fabric,
    LocalBuffer,
    Node,
    QueuePair,
    RemoteTarget,
    Status,
)
from .callbacks import (
    NO_GUESS,
    DataStructureCallbacks,
    Fetched,
    HandlerRegistry,
    LookupMode,
    ReadPath,
)
from .messages import (
    DEFAULT_MESSAGE_BYTES,
    HEADER_BYTES,
    ReplyStatus,
    RpcHeader,
    RpcMessage,
    RpcOpcode,
    RpcReply,
)

Token = Hashable
CoroutineBody = Generator[Token, Any, Any]


class RemoteAccessError(RuntimeError):
    """A remote read or RPC failed at the verbs level."""

    def __init__(self, status: Status, what: str) -> None:
        super().__init__(f"{what} failed with {status.name}")
        self.status = status


class CoroutineState(Enum):
    READY = auto()
    AWAITING = auto()
    DONE = auto()


@dataclass(eq=False)
class Coroutine:
    id: int
    body: CoroutineBody
    state: CoroutineState = CoroutineState.READY
    awaiting: Token | None = None
    result: Any = None
    on_done: Callable[[Coroutine], None] | None = None


@dataclass(frozen=True, kw_only=True)
class DataplaneConfig:
    threads_per_node: int = 1
    coroutines_per_thread: int = 32
    mode: LookupMode = LookupMode.STORM
    rr_fallback_after: int = 1
    """Failed one-sided reads along a chain before falling back to RPC."""
    message_bytes: int = DEFAULT_MESSAGE_BYTES
    """Size of each RPC buffer slot."""
    read_buffer_bytes: int = 1024
    """Largest one-sided read a coroutine can issue."""

    def __post_init__(self) -> None:
        if not 1 <= self.threads_per_node < 256:
            raise ValueError("threads_per_node must lie in [1, 255].")
        if not 1 <= self.coroutines_per_thread < 256:
            raise ValueError("coroutines_per_thread must lie in [1, 255].")
        if self.rr_fallback_after < 1:
            raise ValueError("rr_fallback_after must be at least 1.")
        if self.message_bytes <= HEADER_BYTES:
            raise ValueError(
                f"message_bytes must exceed the {HEADER_BYTES}-byte header."
            )
        if self.read_buffer_bytes < 1:
            raise ValueError("read_buffer_bytes must be positive.")


@dataclass
class DataplaneStats:
    reads_issued: int = 0
    """One-sided reads issued by lookups."""
    chained_reads: int = 0
    """Lookup reads that followed a failed read of the same lookup."""
    direct_reads: int = 0
    """One-sided reads issued outside lookups, such as validation reads."""
    lookup_rpcs: int = 0
    """READ RPCs issued by lookups."""
    rpcs_issued: Counter[RpcOpcode] = field(default_factory=Counter)
    rpcs_handled: int = 0
    paths: Counter[ReadPath] = field(default_factory=Counter)
    resumes: int = 0
    failed_replies: int = 0
    max_inflight_per_target: int = 0

    def merge(self, other: DataplaneStats) -> None:
        self.reads_issued += other.reads_issued
        self.chained_reads += other.chained_reads
        self.direct_reads += other.direct_reads
        self.lookup_rpcs += other.lookup_rpcs
        self.rpcs_issued.update(other.rpcs_issued)
        self.rpcs_handled += other.rpcs_handled
        self.paths.update(other.paths)
        self.resumes += other.resumes
        self.failed_replies += other.failed_replies
        self.max_inflight_per_target = max(
            self.max_inflight_per_target, other.max_inflight_per_target
        )

    @property
    def lookup_reads(self) -> int:
        """Reads issued as the first attempt of a lookup."""
        return self.reads_issued - self.chained_reads

    def accounting_errors(self) -> list[str]:
        """Mismatches between issued operations and the lookup paths taken."""
        errors = []
        with_read = self.paths[ReadPath.READ_ONLY] + self.paths[ReadPath.READ_THEN_RPC]
        with_rpc = self.paths[ReadPath.RPC_ONLY] + self.paths[ReadPath.READ_THEN_RPC]
        if self.lookup_reads != with_read:
            errors.append(
                f"{self.lookup_reads} lookup reads but {with_read} lookups "
                "started with a read"
            )
        if self.lookup_rpcs != with_rpc:
            errors.append(
                f"{self.lookup_rpcs} lookup RPCs but {with_rpc} lookups used one"
            )
        return errors


@dataclass(frozen=True)
class BufferLayout:
    """Offsets of the RPC and read buffers inside a thread's region.

    The layout is identical on every thread of a cluster, so a sender can
    compute the destination offset of a message at its sibling.
    """

    n_nodes: int
    slots: int
    message_bytes: int
    read_bytes: int

    @property
    def _matrix(self) -> int:
        return self.n_nodes * self.slots * self.message_bytes

    def request_in(self, source: int, slot: int) -> int:
        return (source * self.slots + slot) * self.message_bytes

    def reply_in(self, target: int, slot: int) -> int:
        return self._matrix + (target * self.slots + slot) * self.message_bytes

    def reply_out(self, source: int, slot: int) -> int:
        return 2 * self._matrix + (source * self.slots + slot) * self.message_bytes

    def request_out(self, slot: int) -> int:
        return 3 * self._matrix + slot * self.message_bytes

    def read(self, slot: int) -> int:
        buffers = 3 * self._matrix + self.slots * self.message_bytes
        return buffers + slot * self.read_bytes

    @property
    def total(self) -> int:
        return self.read(self.slots)


class CoroutineContext:
    """Handle through which a coroutine issues remote operations."""

    def __init__(self, thread: DataplaneThread, slot: int) -> None:
        self.thread = thread
        self.coroutine_id = slot
        self.active_tx: object | None = None
        self.n_reads = 0
        self.n_rpcs = 0
        self._breakdown = LatencyBreakdown()

    @property
    def node_id(self) -> int:
        return self.thread.node.node_id

    @property
    def thread_id(self) -> int:
        return self.thread.thread_id

    @property
    def dataplane(self) -> Dataplane:
        return self.thread.dataplane

    @property
    def now(self) -> SimTime:
        """Simulated time as seen by the running coroutine."""
        return self.thread.cpu_time

    def take_breakdown(self) -> LatencyBreakdown:
        """Return and reset the PCIe and wire costs accumulated since the last call."""
        breakdown, self._breakdown = self._breakdown, LatencyBreakdown()
        return breakdown

    def remote_read(
        self, region_id: int, offset: int, size: int
    ) -> Generator[Token, Any, Fetched]:
        """Read ``size`` bytes of a remote region with a one-sided read."""
        self.thread.stats.direct_reads += 1
        return (yield from self._read(region_id, offset, size))

    def _read(
        self, region_id: int, offset: int, size: int
    ) -> Generator[Token, Any, Fetched]:
        thread = self.thread
        layout = thread.layout
        if size > layout.read_bytes:
            raise ValueError(
                f"Read of {size} bytes exceeds the {layout.read_bytes}-byte "
                "read buffer."
            )
        owner = thread.fabric.region_owner(region_id).node_id
        local = LocalBuffer(
            thread.region.region_id, layout.read(self.coroutine_id), size
        )
        wr_id = thread.fabric.post_read(
            thread.client_qps[owner],
            local,
            RemoteTarget(region_id, offset),
            delay=thread.post_delay(),
        )
        thread.charge_post()
        self.n_reads += 1
        completion: Completion = yield ('wr', wr_id)
        if not completion.ok:
            raise RemoteAccessError(completion.status, f"read of region {region_id}")
        self._breakdown += completion.breakdown
        data = thread.node.read(local.region_id, local.offset, size)
        return Fetched(data, region_id, offset)

    def rpc_send(
        self,
        target_node: int,
        opcode: RpcOpcode,
        object_id: int,
        payload: bytes = b'',
        *,
        region_id: int = 0,
        offset: int = 0,
    ) -> Generator[Token, Any, RpcMessage]:
        """Send a request to the sibling thread on ``target_node``, await the reply."""
        thread = self.thread
        while thread.credits[target_node] == 0:
            yield thread.await_credit(target_node, self.coroutine_id)
        request_id = thread.next_request_id()
        message = RpcMessage(
            RpcHeader(
                sender_node=self.node_id,
                thread_id=self.thread_id,
                coroutine_id=self.coroutine_id,
                opcode=opcode,
                object_id=object_id,
                request_id=request_id,
                region_id=region_id,
                offset=offset,
            ),
            payload,
        )
        posted_at = thread.cpu_time
        wr_id = thread.post_request(target_node, self.coroutine_id, message)
        self.n_rpcs += 1
        token = ('rpc', self.coroutine_id, request_id)
        thread.track_request(wr_id, token)
        reply, completion = yield token
        cfg = thread.node.config
        self._breakdown += LatencyBreakdown(
            pcie_const=2 * (round(cfg.pcie_write_ns) + round(cfg.pcie_dma_rt_ns)),
            pcie_var=pcie_var_ns(cfg, message.size) + pcie_var_ns(cfg, reply.size),
            net_var=net_var_ns(cfg, message.size) + net_var_ns(cfg, reply.size),
        ).with_total(completion.timestamp - posted_at)
        return reply

    def process_read_set_item(
        self, object_id: int, key: int, size: int | None = None
    ) -> Generator[Token, Any, tuple[Fetched, ReadPath]]:
        """Fetch ``key`` with a one-sided read if possible, else with an RPC.

        Returns
        -------
        :
            The fetched buffer and the path taken. The buffer fails
            ``lookup_end`` if the key does not exist.
        """
        dataplane = self.dataplane
        callbacks = dataplane.handlers[object_id]
        stats = self.thread.stats
        if size is None:
            size = callbacks.read_size(object_id)
        reads = 0
        buffer: Fetched | None
        if dataplane.config.mode is not LookupMode.RPC_ONLY:
            region_id, offset = callbacks.lookup_start(object_id, key)
            while region_id != NO_GUESS:
                try:
                    buffer = yield from self._read(region_id, offset, size)
                except RemoteAccessError as err:
                    if err.status is not Status.PROTECTION_ERROR:
                        raise
                    buffer = None
                stats.reads_issued += 1
                if reads:
                    stats.chained_reads += 1
                reads += 1
                if buffer is None:
                    # Stale guess outside the registered range.
                    break
                if callbacks.lookup_end(buffer, key):
                    stats.paths[ReadPath.READ_ONLY] += 1
                    return buffer, ReadPath.READ_ONLY
                guess = None
                if reads < dataplane.config.rr_fallback_after:
                    guess = callbacks.next_guess(buffer, key)
                region_id, offset = (NO_GUESS, 0) if guess is None else guess
        reply = yield from self.rpc_send(
            callbacks.home_node(key),
            RpcOpcode.READ,
            object_id,
            callbacks.read_request(key),
        )
        stats.lookup_rpcs += 1
        buffer = Fetched.from_reply(reply)
        callbacks.lookup_end(buffer, key)
        path = ReadPath.READ_THEN_RPC if reads else ReadPath.RPC_ONLY
        stats.paths[path] += 1
        return buffer, path


class DataplaneThread:
    """One simulated thread: CQs, sibling QPs, buffers and coroutine scheduler."""

    def __init__(self, dataplane: Dataplane, thread_id: int) -> None:
        self.dataplane = dataplane
        self.thread_id = thread_id
        self.node: Node = dataplane.node
        self.fabric: Fabric = dataplane.fabric
        self.engine = self.fabric.engine
        config = dataplane.config
        nic = self.node.config
        self._switch_ns = round(nic.coroutine_switch_ns)
        self._post_ns = round(nic.post_ns)
        self._rpc_ns = round(nic.host_rpc_ns)
        self.slots = config.coroutines_per_thread
        self.layout = BufferLayout(
            n_nodes=dataplane.n_nodes,
            slots=self.slots,
            message_bytes=config.message_bytes,
            read_bytes=config.read_buffer_bytes,
        )
        self.region = self.fabric.register_region(self.node, self.layout.total)
        self.send_cq = self.fabric.create_cq(self.node)
        self.recv_cq = self.fabric.create_cq(self.node)
        self.send_cq.on_completion = self._notify
        self.recv_cq.on_completion = self._notify
        self.client_qps: dict[int, QueuePair] = {}
        self.server_qps: dict[int, QueuePair] = {}
        self.remote_regions: dict[int, int] = {}
        self.credits: Counter[int] = Counter()
        self.inflight: Counter[int] = Counter()
        self.coroutines: list[Coroutine | None] = [None] * self.slots
        self.stats = DataplaneStats()
        self.busy_ns = 0
        self._roles: dict[int, tuple[bool, int]] = {}
        self._ready: deque[tuple[Coroutine, Any, BaseException | None]] = deque()
        self._waiting: dict[Token, Coroutine] = {}
        self._credit_waiters: dict[int, deque[Token]] = {}
        self._rpc_by_wr: dict[int, Token] = {}
        self._wr_by_rpc: dict[Token, int] = {}
        self._next_request = 0
        self._cpu: SimTime = 0
        self._busy_until: SimTime = 0
        self._loop_scheduled = False

    # Wiring

    def attach_client(self, peer: int, qp: QueuePair, peer_region: int) -> None:
        """Use ``qp`` for requests and reads towards ``peer``."""
        self.client_qps[peer] = qp
        self.remote_regions[peer] = peer_region
        self._roles[qp.qp_num] = (False, peer)
        self.credits[peer] = self.slots
        for slot in range(self.slots):
            self._post_recv(qp, self.layout.reply_in(peer, slot))

    def attach_server(self, peer: int, qp: QueuePair, peer_region: int) -> None:
        """Serve requests from ``peer`` arriving on ``qp``."""
        self.server_qps[peer] = qp
        self.remote_regions[peer] = peer_region
        self._roles[qp.qp_num] = (True, peer)
        for slot in range(self.slots):
            self._post_recv(qp, self.layout.request_in(peer, slot))

    def _post_recv(self, qp: QueuePair, offset: int) -> None:
        buffer = LocalBuffer(self.region.region_id, offset, self.layout.message_bytes)
        self.fabric.post_recv(qp, buffer)

    # CPU timeline

    @property
    def cpu_time(self) -> SimTime:
        return max(self.engine.now(), self._cpu)

    def post_delay(self) -> SimTime:
        return max(0, self._cpu - self.engine.now())

    def charge_post(self) -> None:
        self._cpu = self.cpu_time + self._post_ns

    # Coroutines

    def spawn(
        self,
        body: Callable[[CoroutineContext], CoroutineBody],
        *,
        on_done: Callable[[Coroutine], None] | None = None,
    ) -> Coroutine:
        """Start ``body`` in the lowest free coroutine slot."""
        try:
            slot = self.coroutines.index(None)
        except ValueError:
            raise RuntimeError(
                f"All {self.slots} coroutine slots of thread {self.thread_id} "
                f"on node {self.node.node_id} are in use."
            ) from None
        coroutine = Coroutine(slot, body(CoroutineContext(self, slot)), on_done=on_done)
        self.coroutines[slot] = coroutine
        self._ready.append((coroutine, None, None))
        self._notify()
        return coroutine

    @property
    def active_coroutines(self) -> int:
        return sum(c is not None for c in self.coroutines)

    def next_request_id(self) -> int:
        self._next_request = (self._next_request + 1) % 2**32
        return self._next_request

    def await_credit(self, target: int, slot: int) -> Token:
        token = ('credit', target, slot)
        self._credit_waiters.setdefault(target, deque()).append(token)
        return token

    def track_request(self, wr_id: int, token: Token) -> None:
        self._rpc_by_wr[wr_id] = token
        self._wr_by_rpc[token] = wr_id

    def post_request(self, target: int, slot: int, message: RpcMessage) -> int:
        data = message.encode()
        if len(data) > self.layout.message_bytes:
            raise ValueError(
                f"RPC of {len(data)} bytes exceeds the "
                f"{self.layout.message_bytes}-byte message buffer."
            )
        offset = self.layout.request_out(slot)
        self.node.write(self.region.region_id, offset, data)
        self.credits[target] -= 1
        self.inflight[target] += 1
        self.stats.max_inflight_per_target = max(
            self.stats.max_inflight_per_target, self.inflight[target]
        )
        wr_id = self.fabric.post_write_imm(
            self.client_qps[target],
            LocalBuffer(self.region.region_id, offset, len(data)),
            RemoteTarget(
                self.remote_regions[target],
                self.layout.request_in(self.node.node_id, slot),
            ),
            imm=self.node.node_id * self.slots + slot,
            delay=self.post_delay(),
            signaled=False,
        )
        self.charge_post()
        self.stats.rpcs_issued[message.header.opcode] += 1
        return wr_id

    # Event loop

    def _notify(self, cq: CompletionQueue | None = None) -> None:
        if self._loop_scheduled:
            return
        self._loop_scheduled = True
        now = self.engine.now()
        self.engine.schedule(
            max(0, self._busy_until - now),
            host_target(self.node.node_id),
            self._run_loop,
            kind='loop',
        )

    def _run_loop(self) -> None:
        self._loop_scheduled = False
        self.event_loop()

    def event_loop(self) -> int:
        """Drain both CQs and run every coroutine that became ready.

        Returns
        -------
        :
            Number of completions handled plus coroutines resumed.
        """
        now = self.engine.now()
        self._cpu = max(now, self._busy_until)
        start = self._cpu
        processed = 0
        for completion in self.recv_cq.poll():
            self._on_receive(completion)
            processed += 1
        for completion in self.send_cq.poll():
            self._on_send_completion(completion)
            processed += 1
        while self._ready:
            coroutine, value, exc = self._ready.popleft()
            self._resume(coroutine, value, exc)
            processed += 1
        self.busy_ns += self._cpu - start
        self._busy_until = self._cpu
        return processed

    def _on_receive(self, completion: Completion) -> None:
        assert completion.imm is not None  # noqa: S101
        is_server, peer = self._roles[completion.qp_num]
        index, slot = divmod(completion.imm, self.slots)
        region_id = self.region.region_id
        if is_server:
            offset = self.layout.request_in(index, slot)
            data = self.node.read(region_id, offset, completion.byte_len)
            request = RpcMessage.decode(data)
            qp = self.server_qps[peer]
            self._post_recv(qp, offset)
            self._cpu += self._rpc_ns
            self._reply(qp, peer, slot, self.dataplane.dispatch(request))
        else:
            offset = self.layout.reply_in(index, slot)
            data = self.node.read(region_id, offset, completion.byte_len)
            reply = RpcMessage.decode(data)
            self._post_recv(self.client_qps[peer], offset)
            self._return_credit(peer)
            token = ('rpc', reply.header.coroutine_id, reply.header.request_id)
            wr_id = self._wr_by_rpc.pop(token, None)
            if wr_id is not None:
                del self._rpc_by_wr[wr_id]
            self._wake(token, (reply, completion))

    def _reply(self, qp: QueuePair, peer: int, slot: int, reply: RpcMessage) -> None:
        data = reply.encode()
        if len(data) > self.layout.message_bytes:
            raise ValueError(
                f"Reply of {len(data)} bytes exceeds the "
                f"{self.layout.message_bytes}-byte message buffer."
            )
        offset = self.layout.reply_out(peer, slot)
        self.node.write(self.region.region_id, offset, data)
        self.fabric.post_write_imm(
            qp,
            LocalBuffer(self.region.region_id, offset, len(data)),
            RemoteTarget(
                self.remote_regions[peer], self.layout.reply_in(self.node.node_id, slot)
            ),
            imm=self.node.node_id * self.slots + slot,
            delay=self.post_delay(),
            signaled=False,
        )
        self.stats.rpcs_handled += 1

    def _on_send_completion(self, completion: Completion) -> None:
        token = self._rpc_by_wr.pop(completion.wr_id, None)
        if token is not None:
            del self._wr_by_rpc[token]
            _, peer = self._roles[completion.qp_num]
            self._return_credit(peer)
            self._wake(token, None, RemoteAccessError(completion.status, "RPC request"))
        else:
            is_server, _ = self._roles[completion.qp_num]
            if is_server and not completion.ok:
                self.stats.failed_replies += 1
                get_logger().warning(
                    "Reply on node %d failed with %s",
                    self.node.node_id,
                    completion.status.name,
                )
            else:
                self._wake(('wr', completion.wr_id), completion)

    def _return_credit(self, peer: int) -> None:
        self.credits[peer] += 1
        self.inflight[peer] -= 1
        waiters = self._credit_waiters.get(peer)
        if waiters:
            self._wake(waiters.popleft(), None)

    def _wake(self, token: Token, value: Any, exc: BaseException | None = None) -> None:
        coroutine = self._waiting.pop(token, None)
        if coroutine is None:
            get_logger().debug("No coroutine awaits %s", token)
            return
        coroutine.state = CoroutineState.READY
        coroutine.awaiting = None
        self._ready.append((coroutine, value, exc))

    def _resume(
        self, coroutine: Coroutine, value: Any, exc: BaseException | None
    ) -> None:
        self._cpu += self._switch_ns
        self.stats.resumes += 1
        try:
            if exc is not None:
                token = coroutine.body.throw(exc)
            else:
                token = coroutine.body.send(value)
        except StopIteration as stop:
            coroutine.state = CoroutineState.DONE
            coroutine.result = stop.value
            self.coroutines[coroutine.id] = None
            if coroutine.on_done is not None:
                coroutine.on_done(coroutine)
            return
        if token in self._waiting:
            raise RuntimeError(f"Two coroutines await the same completion {token}.")
        coroutine.state = CoroutineState.AWAITING
        coroutine.awaiting = token
        self._waiting[token] = coroutine


class Dataplane:
    """The dataplane of one node: handler registry and simulated threads."""

    def __init__(
        self, fabric: Fabric, node: Node, config: DataplaneConfig, n_nodes: int
    ) -> None:
        if n_nodes > 255:
            raise ValueError("At most 255 nodes can be addressed by RPC headers.")
        self.fabric = fabric
        self.node = node
        self.config = config
        self.n_nodes = n_nodes
        self.handlers = HandlerRegistry()
        self.threads = [
            DataplaneThread(self, j) for j in range(config.threads_per_node)
        ]

    @property
    def node_id(self) -> int:
        return self.node.node_id

    def register_handler(
        self, object_id: int, callbacks: DataStructureCallbacks
    ) -> None:
        self.handlers[object_id] = callbacks

    def dispatch(self, request: RpcMessage) -> RpcMessage:
        """Run the handler registered for the request's object."""
        callbacks = self.handlers.get(request.header.object_id)
        if callbacks is None:
            reply = RpcReply(ReplyStatus.NO_HANDLER)
        else:
            reply = callbacks.rpc_handler(request)
        return reply.to_message(request.header, self.node_id)

    @property
    def stats(self) -> DataplaneStats:
        total = DataplaneStats()
        for thread in self.threads:
            total.merge(thread.stats)
        return total
