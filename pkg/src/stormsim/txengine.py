# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Optimistic transactions over remote hash tables.

Writes are locked during execution with ``LOCK_READ`` RPCs. At commit the
read set is validated with one-sided reads of the slot headers, and writes
are installed and unlocked with ``UPDATE_UNLOCK`` RPCs. A lock conflict
aborts the transaction immediately and releases every lock it holds.

All operations are generators and are used with ``yield from`` inside a
dataplane coroutine::

    def body(ctx):
        tx = engine.start_tx(ctx)
        value = yield from engine.add_to_read_set(ctx, tx, TABLE, key)
        yield from engine.add_to_write_set(ctx, tx, TABLE, other, value)
        status = yield from engine.commit(ctx, tx)
"""

from __future__ import annotations

import itertools
import struct
from collections.abc import Callable, Generator, Iterable
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Any, NoReturn

from .dataplane import (
    CoroutineContext,
    LookupMode,
    ReplyStatus,
    RpcOpcode,
)
from .dataplane.core import Token
from .kvstore import SLOT_HEADER_BYTES, DistributedHashTable, SlotHeader
from .logging import get_logger

_U64 = struct.Struct('<Q')
_U64_PAIR = struct.Struct('<QQ')


class TxStatus(Enum):
    ACTIVE = auto()
    VALIDATING = auto()
    COMMITTED = auto()
    ABORTED = auto()


class AbortKind(Enum):
    LOCK_BUSY = auto()
    """A lock needed by the transaction is held by another transaction."""
    VALIDATION_FAILED = auto()
    """A read-set slot changed or was locked before commit."""
    NOT_FOUND = auto()
    LOCK_LOST = auto()
    """A write lock was gone at install time. Earlier writes stay installed."""


class CommitOrdering(Enum):
    LOCK_IN_EXECUTION = auto()
    LOCK_AT_COMMIT = auto()


@dataclass(frozen=True, slots=True)
class AbortReason:
    kind: AbortKind
    key: int


class TxAborted(Exception):  # noqa: N818
    """Raised inside the coroutine running an aborted transaction."""

    def __init__(self, reason: AbortReason) -> None:
        super().__init__(f"transaction aborted: {reason.kind.name} on key {reason.key}")
        self.reason = reason


@dataclass(slots=True)
class ReadSetEntry:
    object_id: int
    key: int
    region_id: int
    offset: int
    version: int
    value: bytes


@dataclass(slots=True)
class WriteSetEntry:
    object_id: int
    key: int
    region_id: int
    offset: int
    version: int
    """Version observed when the lock was taken."""
    new_value: bytes
    lock_held: bool = True


@dataclass
class TxContext:
    tx_id: int
    started_at: int
    status: TxStatus = TxStatus.ACTIVE
    reason: AbortReason | None = None
    read_set: dict[tuple[int, int], ReadSetEntry] = field(default_factory=dict)
    write_set: dict[tuple[int, int], WriteSetEntry] = field(default_factory=dict)
    n_validation_reads: int = 0
    reads_at_start: int = 0
    rpcs_at_start: int = 0


@dataclass(frozen=True, slots=True)
class TxRecord:
    """Outcome of one finished transaction."""

    tx_id: int
    status: TxStatus
    n_reads: int
    n_rpcs: int
    n_validation_reads: int
    latency_ns: int
    reads: tuple[tuple[int, int], ...] = ()
    """``(key, version)`` of every read-set entry."""
    writes: tuple[tuple[int, int, bytes], ...] = ()
    """``(key, installed version, value)`` of every installed write."""
    abort_kind: AbortKind | None = None
    node_id: int = 0


TxBody = Callable[[TxContext], Generator[Token, Any, Any]]


class TxEngine:
    """Transactions over one or more distributed hash tables.

    Parameters
    ----------
    tables:
        Tables that transactions may access, keyed by their object id.
    ordering:
        When write locks are taken. Only locking during execution is
        implemented.
    """

    def __init__(
        self,
        tables: Iterable[DistributedHashTable],
        *,
        ordering: CommitOrdering = CommitOrdering.LOCK_IN_EXECUTION,
    ) -> None:
        if ordering is CommitOrdering.LOCK_AT_COMMIT:
            raise NotImplementedError("Locking at commit time is not implemented.")
        self.tables = {t.object_id: t for t in tables}
        self.trace: list[TxRecord] = []
        self._tx_ids = itertools.count(1)

    def start_tx(self, ctx: CoroutineContext) -> TxContext:
        if ctx.active_tx is not None:
            raise RuntimeError("The coroutine already runs a transaction.")
        tx = TxContext(
            tx_id=next(self._tx_ids),
            started_at=ctx.now,
            reads_at_start=ctx.n_reads,
            rpcs_at_start=ctx.n_rpcs,
        )
        ctx.active_tx = tx
        return tx

    def add_to_read_set(
        self, ctx: CoroutineContext, tx: TxContext, object_id: int, key: int
    ) -> Generator[Token, Any, bytes]:
        """Read ``key`` and record its address and version for validation.

        Repeated reads and reads of keys in the write set are served locally.
        """
        _check_active(tx)
        ident = (object_id, key)
        if ident in tx.write_set:
            return tx.write_set[ident].new_value
        if ident in tx.read_set:
            return tx.read_set[ident].value
        table = self._table(object_id)
        buffer, _ = yield from ctx.process_read_set_item(object_id, key)
        view = table.clients[ctx.node_id].parse(buffer, key)
        if view is None or view.lock:
            locked = buffer.status is ReplyStatus.LOCK_BUSY or view is not None
            kind = AbortKind.LOCK_BUSY if locked else AbortKind.NOT_FOUND
            yield from self._abort(ctx, tx, AbortReason(kind, key))
        tx.read_set[ident] = ReadSetEntry(
            object_id=object_id,
            key=key,
            region_id=view.region_id,
            offset=view.offset,
            version=view.version,
            value=view.value,
        )
        return view.value

    def add_to_write_set(
        self,
        ctx: CoroutineContext,
        tx: TxContext,
        object_id: int,
        key: int,
        new_value: bytes,
    ) -> Generator[Token, Any, None]:
        """Lock ``key`` at its owner and buffer ``new_value`` until commit."""
        _check_active(tx)
        table = self._table(object_id)
        if len(new_value) > table.layout.value_bytes:
            raise ValueError(
                f"Value of {len(new_value)} bytes exceeds the slot size "
                f"of {table.layout.value_bytes}."
            )
        new_value = new_value.ljust(table.layout.value_bytes, b'\0')
        ident = (object_id, key)
        if ident in tx.write_set:
            tx.write_set[ident].new_value = new_value
            return
        reply = yield from ctx.rpc_send(
            table.home_node(key),
            RpcOpcode.LOCK_READ,
            object_id,
            table.request_payload(_U64_PAIR.pack(key, tx.tx_id)),
        )
        status = reply.header.status
        if status is not ReplyStatus.OK:
            busy = status is ReplyStatus.LOCK_BUSY
            kind = AbortKind.LOCK_BUSY if busy else AbortKind.NOT_FOUND
            yield from self._abort(ctx, tx, AbortReason(kind, key))
        (version,) = _U64.unpack_from(reply.payload)
        tx.write_set[ident] = WriteSetEntry(
            object_id=object_id,
            key=key,
            region_id=reply.header.region_id,
            offset=reply.header.offset,
            version=version,
            new_value=new_value,
        )

    def commit(
        self, ctx: CoroutineContext, tx: TxContext
    ) -> Generator[Token, Any, TxStatus]:
        """Validate the read set, then install and unlock the write set.

        Raises
        ------
        TxAborted
            If validation fails. Held locks are released first.
        """
        _check_active(tx)
        tx.status = TxStatus.VALIDATING
        for ident, entry in tx.read_set.items():
            written = tx.write_set.get(ident)
            if written is not None:
                valid = written.version == entry.version
            else:
                valid = yield from self._validate(ctx, entry)
                tx.n_validation_reads += 1
            if not valid:
                yield from self._abort(
                    ctx, tx, AbortReason(AbortKind.VALIDATION_FAILED, entry.key)
                )
        writes = []
        for entry in tx.write_set.values():
            table = self._table(entry.object_id)
            reply = yield from ctx.rpc_send(
                table.home_node(entry.key),
                RpcOpcode.UPDATE_UNLOCK,
                entry.object_id,
                table.request_payload(_U64.pack(tx.tx_id), entry.new_value),
                region_id=entry.region_id,
                offset=entry.offset,
            )
            if not reply.ok:
                entry.lock_held = False
                yield from self._release_locks(ctx, tx)
                tx.status = TxStatus.ABORTED
                tx.reason = AbortReason(AbortKind.LOCK_LOST, entry.key)
                self._finish(ctx, tx, tuple(writes))
                raise RuntimeError(
                    f"Transaction {tx.tx_id} lost its lock on key {entry.key}."
                )
            entry.lock_held = False
            (installed,) = _U64.unpack_from(reply.payload)
            writes.append((entry.key, installed, entry.new_value))
        tx.status = TxStatus.COMMITTED
        self._finish(ctx, tx, tuple(writes))
        return tx.status

    def run(
        self, ctx: CoroutineContext, body: TxBody
    ) -> Generator[Token, Any, TxRecord]:
        """Run ``body`` in a new transaction and commit it.

        Aborts are absorbed and reported in the returned record.
        """
        tx = self.start_tx(ctx)
        try:
            yield from body(tx)
            yield from self.commit(ctx, tx)
        except TxAborted:
            pass
        return self.trace[-1]

    def _validate(
        self, ctx: CoroutineContext, entry: ReadSetEntry
    ) -> Generator[Token, Any, bool]:
        table = self._table(entry.object_id)
        if ctx.dataplane.config.mode is LookupMode.RPC_ONLY:
            reply = yield from ctx.rpc_send(
                table.home_node(entry.key),
                RpcOpcode.READ,
                entry.object_id,
                table.request_payload(_U64.pack(entry.key)),
            )
            if not reply.ok:
                return False
            (version,) = _U64.unpack_from(reply.payload)
            return (
                version == entry.version
                and (reply.header.region_id, reply.header.offset)
                == (entry.region_id, entry.offset)
            )
        fetched = yield from ctx.remote_read(
            entry.region_id, entry.offset, SLOT_HEADER_BYTES
        )
        header = SlotHeader.unpack(fetched.data)
        return (
            header.key == entry.key
            and not header.lock
            and header.version == entry.version
        )

    def _abort(
        self, ctx: CoroutineContext, tx: TxContext, reason: AbortReason
    ) -> Generator[Token, Any, NoReturn]:
        yield from self._release_locks(ctx, tx)
        tx.status = TxStatus.ABORTED
        tx.reason = reason
        self._finish(ctx, tx, ())
        get_logger().debug("Transaction %d aborted: %s", tx.tx_id, reason.kind.name)
        raise TxAborted(reason)

    def _release_locks(
        self, ctx: CoroutineContext, tx: TxContext
    ) -> Generator[Token, Any, None]:
        for entry in tx.write_set.values():
            if not entry.lock_held:
                continue
            table = self._table(entry.object_id)
            yield from ctx.rpc_send(
                table.home_node(entry.key),
                RpcOpcode.UNLOCK,
                entry.object_id,
                table.request_payload(_U64.pack(tx.tx_id)),
                region_id=entry.region_id,
                offset=entry.offset,
            )
            entry.lock_held = False

    def _finish(
        self,
        ctx: CoroutineContext,
        tx: TxContext,
        writes: tuple[tuple[int, int, bytes], ...],
    ) -> None:
        ctx.active_tx = None
        self.trace.append(
            TxRecord(
                tx_id=tx.tx_id,
                status=tx.status,
                n_reads=ctx.n_reads - tx.reads_at_start,
                n_rpcs=ctx.n_rpcs - tx.rpcs_at_start,
                n_validation_reads=tx.n_validation_reads,
                latency_ns=ctx.now - tx.started_at,
                reads=tuple((e.key, e.version) for e in tx.read_set.values()),
                writes=writes,
                abort_kind=None if tx.reason is None else tx.reason.kind,
                node_id=ctx.node_id,
            )
        )

    def _table(self, object_id: int) -> DistributedHashTable:
        try:
            return self.tables[object_id]
        except KeyError:
            raise KeyError(f"No table with object id {object_id}.") from None


def _check_active(tx: TxContext) -> None:
    if tx.status is not TxStatus.ACTIVE:
        raise RuntimeError(f"Transaction {tx.tx_id} is {tx.status.name}.")
