# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Distributed hash table with inlined lock and version metadata.

Keys are partitioned across nodes by hash. Each node keeps its partition in
a registered bucket array plus overflow nodes taken from a
:class:`ContiguousAllocator`. Owners serve lookups, locking, updates,
inserts and deletes from the RPC handler. Clients guess slot addresses from
the hash or their address cache and validate one-sided reads with the key
and lock stored in the slot.
"""

from __future__ import annotations

import math
import struct
from collections import OrderedDict
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, replace

from ..dataplane import (
    HEADER_BYTES,
    DataStructureCallbacks,
    Dataplane,
    Fetched,
    LookupMode,
    ReplyStatus,
    RpcMessage,
    RpcOpcode,
    RpcReply,
    StormCluster,
)
from ..logging import get_logger
from ..nic import MemoryRegionMeta
from ..verbs import DEFAULT_PAGE_SIZE, Fabric, Node
from .allocator import DEFAULT_CHUNK_BYTES, ContiguousAllocator
from .layout import (
    DEFAULT_VALUE_BYTES,
    EMPTY_KEY,
    LINK_BYTES,
    MAX_LINK_OFFSET,
    SLOT_HEADER_BYTES,
    Link,
    SlotHeader,
    TableLayout,
    home_of,
    table_size,
)

_U64 = struct.Struct('<Q')
_U64_PAIR = struct.Struct('<QQ')
_MAX_KEY = (1 << 64) - 1


@dataclass(frozen=True, slots=True)
class SlotView:
    """Decoded slot together with its address."""

    key: int
    lock: int
    version: int
    value: bytes
    region_id: int
    offset: int


@dataclass(frozen=True, slots=True)
class JournalEntry:
    """An insert or delete applied by the owner on behalf of a client."""

    seq: int
    opcode: RpcOpcode
    key: int
    value: bytes = b''
    applied: bool = True


@dataclass(frozen=True, slots=True)
class _Location:
    region_id: int
    offset: int
    prev_link: tuple[int, int] | None
    """Address of the link pointing at this overflow node, None for bucket slots."""


class AddressCache:
    """Client-side LRU map from key to its last known slot address.

    Entries are hints. A stale entry only costs a failed one-sided read.
    """

    def __init__(self, capacity: int | None = None) -> None:
        if capacity is not None and capacity < 1:
            raise ValueError("Address cache capacity must be positive.")
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._entries: OrderedDict[int, tuple[int, int]] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: int) -> bool:
        return key in self._entries

    def get(self, key: int) -> tuple[int, int] | None:
        address = self._entries.get(key)
        if address is None:
            self.misses += 1
            return None
        self.hits += 1
        self._entries.move_to_end(key)
        return address

    def put(self, key: int, address: tuple[int, int]) -> None:
        self._entries[key] = address
        self._entries.move_to_end(key)
        if self.capacity is not None and len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def invalidate(self, key: int) -> None:
        self._entries.pop(key, None)


def configure_table(
    key_count: int,
    bucket_width: int = 1,
    target_occupancy: float = 0.6,
    *,
    value_bytes: int = DEFAULT_VALUE_BYTES,
    n_buckets: int | None = None,
) -> TableLayout:
    """Layout of a table holding ``key_count`` keys at or below the target occupancy.

    An explicit ``n_buckets`` must be a power of two large enough for the
    target.
    """
    needed = table_size(key_count, bucket_width, target_occupancy)
    if n_buckets is None:
        n_buckets = needed
    elif n_buckets < needed:
        raise ValueError(
            f"{n_buckets} buckets of width {bucket_width} cannot hold {key_count} keys "
            f"at occupancy {target_occupancy}."
        )
    return TableLayout(n_buckets, bucket_width, value_bytes)


class TablePartition:
    """The part of a hash table stored on one node.

    Parameters
    ----------
    fabric:
        Fabric used to register the bucket array and overflow chunks.
    node:
        Node storing the partition.
    layout:
        Bucket layout.
    chunk_bytes:
        Chunk size of the overflow allocator.
    physical_segments:
        Register memory as physical segments.
    """

    def __init__(
        self,
        fabric: Fabric,
        node: Node,
        layout: TableLayout,
        *,
        chunk_bytes: int = DEFAULT_CHUNK_BYTES,
        physical_segments: bool = False,
        page_size: int = DEFAULT_PAGE_SIZE,
    ) -> None:
        if chunk_bytes > MAX_LINK_OFFSET:
            raise ValueError(
                f"chunk_bytes must be at most {MAX_LINK_OFFSET} for links to reach it."
            )
        self.fabric = fabric
        self.node = node
        self.layout = layout
        self.physical_segments = physical_segments
        self.page_size = page_size
        self.region = self._register(layout.table_bytes)
        self.allocator = ContiguousAllocator(self._register, chunk_bytes)
        self.journal: list[JournalEntry] = []
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def _register(self, length: int) -> MemoryRegionMeta:
        return self.fabric.register_region(
            self.node, length, self.page_size, self.physical_segments
        )

    # Raw slot access

    def _header(self, region_id: int, offset: int) -> SlotHeader:
        return SlotHeader.unpack(self.node.read(region_id, offset, SLOT_HEADER_BYTES))

    def _set_header(self, region_id: int, offset: int, header: SlotHeader) -> None:
        self.node.write(region_id, offset, header.pack())

    def _write_slot(
        self, region_id: int, offset: int, header: SlotHeader, value: bytes
    ) -> None:
        self.node.write(region_id, offset, header.pack() + self._fit(value))

    def _clear_slot(self, region_id: int, offset: int) -> None:
        self.node.write(region_id, offset, bytes(self.layout.slot_bytes))

    def _link(self, region_id: int, offset: int) -> Link:
        return Link.unpack(self.node.read(region_id, offset, LINK_BYTES))

    def _set_link(self, region_id: int, offset: int, link: Link) -> None:
        self.node.write(region_id, offset, link.pack())

    def _view(self, region_id: int, offset: int) -> SlotView:
        data = self.node.read(region_id, offset, self.layout.slot_bytes)
        header = SlotHeader.unpack(data)
        return SlotView(
            key=header.key,
            lock=header.lock,
            version=header.version,
            value=data[SLOT_HEADER_BYTES:],
            region_id=region_id,
            offset=offset,
        )

    def _fit(self, value: bytes) -> bytes:
        if len(value) > self.layout.value_bytes:
            raise ValueError(
                f"Value of {len(value)} bytes exceeds the slot size "
                f"of {self.layout.value_bytes}."
            )
        return value.ljust(self.layout.value_bytes, b'\0')

    def _chain(self, bucket: int) -> Iterator[tuple[tuple[int, int], Link]]:
        """Yield ``(address of link, link)`` along the overflow chain of ``bucket``."""
        at = (self.region.region_id, self.layout.link_offset(bucket))
        link = self._link(*at)
        seen: set[tuple[int, int]] = set()
        while not link.is_nil:
            if (link.region_id, link.offset) in seen:
                raise RuntimeError(f"Overflow chain of bucket {bucket} has a cycle.")
            seen.add((link.region_id, link.offset))
            yield at, link
            at = (link.region_id, link.offset + self.layout.slot_bytes)
            link = self._link(*at)

    # Local operations

    def locate(self, key: int) -> _Location | None:
        """Find the slot holding ``key`` by walking its bucket and overflow chain."""
        if key == EMPTY_KEY:
            return None
        layout = self.layout
        bucket = layout.bucket_of(key)
        region_id = self.region.region_id
        for index in range(layout.bucket_width):
            offset = layout.slot_offset(bucket, index)
            if self._header(region_id, offset).key == key:
                return _Location(region_id, offset, None)
        for prev, link in self._chain(bucket):
            if self._header(link.region_id, link.offset).key == key:
                return _Location(link.region_id, link.offset, prev)
        return None

    def get(self, key: int) -> SlotView | None:
        location = self.locate(key)
        if location is None:
            return None
        return self._view(location.region_id, location.offset)

    def insert(self, key: int, value: bytes, *, version: int = 0) -> SlotView | None:
        """Insert ``key`` unless present. Returns the new slot, or None if present."""
        if not EMPTY_KEY < key <= _MAX_KEY:
            raise ValueError(f"Keys must lie in [1, 2**64), got {key}.")
        if self.locate(key) is not None:
            return None
        layout = self.layout
        bucket = layout.bucket_of(key)
        header = SlotHeader(key=key, version=version)
        region_id = self.region.region_id
        for index in range(layout.bucket_width):
            offset = layout.slot_offset(bucket, index)
            if self._header(region_id, offset).key == EMPTY_KEY:
                self._write_slot(region_id, offset, header, value)
                self._count += 1
                return self._view(region_id, offset)
        region_id, offset = self._append(bucket, header, value)
        self._count += 1
        return self._view(region_id, offset)

    def _append(self, bucket: int, header: SlotHeader, value: bytes) -> tuple[int, int]:
        tail = (self.region.region_id, self.layout.link_offset(bucket))
        for _, link in self._chain(bucket):
            tail = (link.region_id, link.offset + self.layout.slot_bytes)
        region_id, offset = self.allocator.alloc(self.layout.node_bytes)
        self._write_slot(region_id, offset, header, value)
        self._set_link(region_id, offset + self.layout.slot_bytes, Link())
        self._set_link(*tail, Link(region_id, offset))
        return region_id, offset

    def _remove(self, location: _Location) -> None:
        if location.prev_link is None:
            self._clear_slot(location.region_id, location.offset)
            return
        link_at = location.offset + self.layout.slot_bytes
        self._set_link(*location.prev_link, self._link(location.region_id, link_at))
        self._clear_slot(location.region_id, location.offset)
        self._set_link(location.region_id, link_at, Link())
        self.allocator.free(location.region_id, location.offset, self.layout.node_bytes)

    def delete(self, key: int) -> bool:
        location = self.locate(key)
        if location is None:
            return False
        self._remove(location)
        self._count -= 1
        return True

    def lock_read(self, key: int, tx_id: int) -> tuple[ReplyStatus, SlotView | None]:
        location = self.locate(key)
        if location is None:
            return ReplyStatus.NOT_FOUND, None
        view = self._view(location.region_id, location.offset)
        if view.lock not in (0, tx_id):
            return ReplyStatus.LOCK_BUSY, view
        header = SlotHeader(key=key, lock=tx_id, version=view.version)
        self._set_header(location.region_id, location.offset, header)
        return ReplyStatus.OK, replace(view, lock=tx_id)

    def update_unlock(
        self, region_id: int, offset: int, tx_id: int, value: bytes
    ) -> tuple[ReplyStatus, int]:
        """Install ``value``, bump the version and release the lock of ``tx_id``."""
        header = self._owned_header(region_id, offset, tx_id)
        if header is None:
            return ReplyStatus.INVALID, 0
        version = header.version + 1
        self._write_slot(region_id, offset, SlotHeader(header.key, 0, version), value)
        return ReplyStatus.OK, version

    def unlock(self, region_id: int, offset: int, tx_id: int) -> ReplyStatus:
        header = self._owned_header(region_id, offset, tx_id)
        if header is None:
            return ReplyStatus.INVALID
        self._set_header(region_id, offset, replace(header, lock=0))
        return ReplyStatus.OK

    def _owned_header(
        self, region_id: int, offset: int, tx_id: int
    ) -> SlotHeader | None:
        if self.fabric.region_owner(region_id) is not self.node:
            return None
        header = self._header(region_id, offset)
        if header.key == EMPTY_KEY or header.lock != tx_id:
            return None
        return header

    def relocate(self, key: int) -> SlotView:
        """Move ``key`` to a freshly allocated overflow node."""
        location = self.locate(key)
        if location is None:
            raise KeyError(f"Key {key} is not stored on node {self.node.node_id}.")
        view = self._view(location.region_id, location.offset)
        if view.lock:
            raise RuntimeError(f"Cannot relocate key {key} while it is locked.")
        header = SlotHeader(key=key, version=view.version)
        region_id, offset = self._append(self.layout.bucket_of(key), header, view.value)
        self._remove(location)
        return self._view(region_id, offset)

    # Whole-table operations

    def entries(self) -> Iterator[SlotView]:
        """Every stored slot, bucket by bucket."""
        layout = self.layout
        region_id = self.region.region_id
        for bucket in range(layout.n_buckets):
            for index in range(layout.bucket_width):
                offset = layout.slot_offset(bucket, index)
                if self._header(region_id, offset).key != EMPTY_KEY:
                    yield self._view(region_id, offset)
            for _, link in self._chain(bucket):
                yield self._view(link.region_id, link.offset)

    def integrity_errors(self, n_nodes: int) -> list[str]:
        """Problems found by walking every bucket and chain."""
        errors = []
        seen: set[int] = set()
        layout = self.layout
        node_id = self.node.node_id
        for bucket in range(layout.n_buckets):
            keys = []
            for index in range(layout.bucket_width):
                offset = layout.slot_offset(bucket, index)
                header = self._header(self.region.region_id, offset)
                if header.key != EMPTY_KEY:
                    keys.append(header.key)
            try:
                for _, link in self._chain(bucket):
                    header = self._header(link.region_id, link.offset)
                    if header.key == EMPTY_KEY:
                        errors.append(
                            f"node {node_id}: empty node in chain of {bucket}"
                        )
                    keys.append(header.key)
            except RuntimeError as err:
                errors.append(f"node {node_id}: {err}")
            for key in keys:
                if key == EMPTY_KEY:
                    continue
                if key in seen:
                    errors.append(f"node {node_id}: key {key} stored twice")
                if layout.bucket_of(key) != bucket:
                    errors.append(f"node {node_id}: key {key} in wrong bucket {bucket}")
                if home_of(key, n_nodes) != node_id:
                    errors.append(f"node {node_id}: key {key} belongs to another node")
                seen.add(key)
        if len(seen) != self._count:
            errors.append(
                f"node {node_id}: {len(seen)} reachable keys, {self._count} stored"
            )
        return errors

    def resize(self, n_buckets: int) -> None:
        """Rehash every key into a new bucket array of ``n_buckets`` buckets.

        The old array stays registered with its slots cleared, so stale
        client addresses fail validation.
        """
        entries = list(self.entries())
        if any(e.lock for e in entries):
            raise RuntimeError("Cannot resize a partition holding locks.")
        layout = TableLayout(
            n_buckets, self.layout.bucket_width, self.layout.value_bytes
        )
        for entry in entries:
            location = self.locate(entry.key)
            assert location is not None  # noqa: S101
            self._remove(location)
        self.layout = layout
        self.region = self._register(layout.table_bytes)
        self._count = 0
        for entry in entries:
            self.insert(entry.key, entry.value, version=entry.version)
        get_logger().info(
            "Resized partition on node %d to %d buckets", self.node.node_id, n_buckets
        )

    # RPC handler

    def rpc_handler(self, message: RpcMessage) -> RpcReply:
        try:
            return self._handle(message)
        except (struct.error, ValueError, KeyError):
            return RpcReply(ReplyStatus.INVALID)

    def _handle(self, message: RpcMessage) -> RpcReply:
        header = message.header
        payload = message.payload
        value_bytes = self.layout.value_bytes
        match header.opcode:
            case RpcOpcode.READ:
                (key,) = _U64.unpack_from(payload)
                view = self.get(key)
                if view is None:
                    return RpcReply(ReplyStatus.NOT_FOUND)
                if view.lock:
                    return RpcReply(
                        ReplyStatus.LOCK_BUSY, b'', view.region_id, view.offset
                    )
                return _value_reply(view)
            case RpcOpcode.LOCK_READ:
                key, tx_id = _U64_PAIR.unpack_from(payload)
                status, view = self.lock_read(key, tx_id)
                if view is None:
                    return RpcReply(status)
                if status is not ReplyStatus.OK:
                    return RpcReply(status, b'', view.region_id, view.offset)
                return _value_reply(view)
            case RpcOpcode.UPDATE_UNLOCK:
                (tx_id,) = _U64.unpack_from(payload)
                value = payload[_U64.size : _U64.size + value_bytes]
                status, version = self.update_unlock(
                    header.region_id, header.offset, tx_id, value
                )
                return RpcReply(
                    status, _U64.pack(version), header.region_id, header.offset
                )
            case RpcOpcode.UNLOCK:
                (tx_id,) = _U64.unpack_from(payload)
                status = self.unlock(header.region_id, header.offset, tx_id)
                return RpcReply(status, b'', header.region_id, header.offset)
            case RpcOpcode.INSERT:
                (key,) = _U64.unpack_from(payload)
                value = payload[_U64.size : _U64.size + value_bytes]
                view = self.insert(key, value)
                self._record(RpcOpcode.INSERT, key, self._fit(value), view is not None)
                if view is None:
                    return RpcReply(ReplyStatus.EXISTS)
                return RpcReply(ReplyStatus.OK, b'', view.region_id, view.offset)
            case RpcOpcode.DELETE:
                (key,) = _U64.unpack_from(payload)
                deleted = self.delete(key)
                self._record(RpcOpcode.DELETE, key, b'', deleted)
                if deleted:
                    return RpcReply(ReplyStatus.OK)
                return RpcReply(ReplyStatus.NOT_FOUND)
        return RpcReply(ReplyStatus.INVALID)

    def _record(self, opcode: RpcOpcode, key: int, value: bytes, applied: bool) -> None:
        entry = JournalEntry(len(self.journal), opcode, key, value, applied)
        self.journal.append(entry)


def _value_reply(view: SlotView) -> RpcReply:
    payload = _U64.pack(view.version) + view.value
    return RpcReply(ReplyStatus.OK, payload, view.region_id, view.offset)


class HashTableCallbacks(DataStructureCallbacks):
    """Callbacks of one node: owner-side handler and client-side lookups."""

    def __init__(
        self,
        table: DistributedHashTable,
        dataplane: Dataplane,
        cache_capacity: int | None = None,
    ) -> None:
        self.table = table
        self.dataplane = dataplane
        self.cache = AddressCache(cache_capacity)

    @property
    def partition(self) -> TablePartition:
        return self.table.partitions[self.dataplane.node_id]

    @property
    def mode(self) -> LookupMode:
        return self.dataplane.config.mode

    def rpc_handler(self, message: RpcMessage) -> RpcReply:
        return self.partition.rpc_handler(message)

    def home_node(self, key: int) -> int:
        return self.table.home_node(key)

    def lookup_start(self, object_id: int, key: int) -> tuple[int, int]:
        owner = self.table.partitions[self.home_node(key)]
        if self.mode is LookupMode.PERFECT:
            location = owner.locate(key)
            if location is not None:
                return location.region_id, location.offset
        elif self.mode is LookupMode.STORM:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        layout = owner.layout
        return owner.region.region_id, layout.slot_offset(layout.bucket_of(key))

    def read_size(self, object_id: int) -> int:
        layout = self.table.layout
        if self.mode is LookupMode.FARM:
            return layout.bucket_width * layout.slot_bytes
        if self.dataplane.config.rr_fallback_after > 1 and layout.bucket_width == 1:
            return layout.node_bytes
        return layout.slot_bytes

    def read_request(self, key: int) -> bytes:
        return self.table.request_payload(_U64.pack(key))

    def parse(self, buffer: Fetched, key: int) -> SlotView | None:
        """The slot for ``key`` contained in ``buffer``, if any."""
        if buffer.via_rpc:
            if buffer.status is not ReplyStatus.OK:
                return None
            (version,) = _U64.unpack_from(buffer.data)
            return SlotView(
                key=key,
                lock=0,
                version=version,
                value=buffer.data[_U64.size :],
                region_id=buffer.region_id,
                offset=buffer.offset,
            )
        slot_bytes = self.table.layout.slot_bytes
        for index in range(max(1, len(buffer.data) // slot_bytes)):
            start = index * slot_bytes
            if len(buffer.data) < start + SLOT_HEADER_BYTES:
                break
            header = SlotHeader.unpack(buffer.data, start)
            if header.key == key:
                return SlotView(
                    key=key,
                    lock=header.lock,
                    version=header.version,
                    value=buffer.data[start + SLOT_HEADER_BYTES : start + slot_bytes],
                    region_id=buffer.region_id,
                    offset=buffer.offset + start,
                )
        return None

    def lookup_end(self, buffer: Fetched, key: int) -> bool:
        view = self.parse(buffer, key)
        valid = view is not None and view.lock == 0
        if valid and self.mode is LookupMode.STORM:
            self.cache.put(key, (view.region_id, view.offset))
        return valid

    def next_guess(self, buffer: Fetched, key: int) -> tuple[int, int] | None:
        layout = self.table.layout
        if buffer.via_rpc or layout.bucket_width != 1:
            return None
        if len(buffer.data) < layout.node_bytes:
            return None
        link = Link.unpack(buffer.data, layout.slot_bytes)
        if link.is_nil:
            return None
        return link.region_id, link.offset


def check_value_fits(value_bytes: int, message_bytes: int) -> None:
    """Raise if the largest table message, one u64 and a value, overflows."""
    if HEADER_BYTES + _U64.size + value_bytes > message_bytes:
        raise ValueError(
            f"Values of {value_bytes} bytes do not fit in "
            f"{message_bytes}-byte messages."
        )


class DistributedHashTable:
    """A hash table partitioned across the nodes of a cluster.

    Parameters
    ----------
    cluster:
        Cluster whose nodes store the partitions.
    object_id:
        Id under which the table's callbacks are registered.
    key_count:
        Expected number of keys, used to size the bucket arrays.
    bucket_width:
        Slots per bucket.
    target_occupancy:
        Upper bound on the fraction of occupied bucket slots.
    value_bytes:
        Value size of every slot.
    n_buckets:
        Buckets per node, overriding the size derived from ``key_count``.
    chunk_bytes:
        Chunk size of the overflow allocators.
    physical_segments:
        Register table memory as physical segments.
    cache_capacity:
        Entries per client address cache, unbounded if None.
    """

    def __init__(
        self,
        cluster: StormCluster,
        object_id: int = 1,
        *,
        key_count: int,
        bucket_width: int = 1,
        target_occupancy: float = 0.6,
        value_bytes: int = DEFAULT_VALUE_BYTES,
        n_buckets: int | None = None,
        chunk_bytes: int = DEFAULT_CHUNK_BYTES,
        physical_segments: bool = False,
        cache_capacity: int | None = None,
    ) -> None:
        message_bytes = cluster.config.message_bytes
        check_value_fits(value_bytes, message_bytes)
        self.cluster = cluster
        self.object_id = object_id
        self.message_bytes = message_bytes
        layout = configure_table(
            math.ceil(key_count / cluster.n_nodes),
            bucket_width,
            target_occupancy,
            value_bytes=value_bytes,
            n_buckets=n_buckets,
        )
        self.partitions = [
            TablePartition(
                cluster.fabric,
                dataplane.node,
                layout,
                chunk_bytes=chunk_bytes,
                physical_segments=physical_segments,
            )
            for dataplane in cluster.dataplanes
        ]
        self.clients: list[HashTableCallbacks] = cluster.register_handler(
            object_id, lambda dp: HashTableCallbacks(self, dp, cache_capacity)
        )
        get_logger().info(
            "Created table %d with %d buckets of width %d per node",
            object_id,
            layout.n_buckets,
            bucket_width,
        )

    @property
    def layout(self) -> TableLayout:
        return self.partitions[0].layout

    @property
    def n_nodes(self) -> int:
        return len(self.partitions)

    def __len__(self) -> int:
        return sum(len(p) for p in self.partitions)

    def home_node(self, key: int) -> int:
        return home_of(key, self.n_nodes)

    def owner(self, key: int) -> TablePartition:
        return self.partitions[self.home_node(key)]

    def request_payload(self, *parts: bytes) -> bytes:
        """Request payload padded to the fixed message size."""
        payload = b''.join(parts)
        return payload.ljust(self.message_bytes - HEADER_BYTES, b'\0')

    def preload(self, keys: Iterable[int], value_of: Callable[[int], bytes]) -> None:
        """Insert keys directly into owner memory, outside simulated time."""
        for key in keys:
            if self.owner(key).insert(key, value_of(key)) is None:
                raise ValueError(f"Key {key} is already present.")

    def get(self, key: int) -> SlotView | None:
        return self.owner(key).get(key)

    def relocate(self, key: int) -> SlotView:
        return self.owner(key).relocate(key)

    def resize(self, n_buckets: int) -> None:
        for partition in self.partitions:
            partition.resize(n_buckets)

    def entries(self) -> Iterator[SlotView]:
        for partition in self.partitions:
            yield from partition.entries()

    def snapshot(self) -> dict[int, tuple[int, bytes]]:
        """Version and value of every key, ordered by key."""
        entries = sorted(self.entries(), key=_by_key)
        return {e.key: (e.version, e.value) for e in entries}

    def locked_keys(self) -> list[int]:
        return sorted(e.key for e in self.entries() if e.lock)

    def integrity_errors(self) -> list[str]:
        errors = []
        for partition in self.partitions:
            errors.extend(partition.integrity_errors(self.n_nodes))
        return errors

    @property
    def region_count(self) -> int:
        return sum(1 + p.allocator.region_count for p in self.partitions)


def _by_key(view: SlotView) -> int:
    return view.key
