# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Byte layout of hash-table buckets, slots and overflow nodes.

A slot is a 24-byte header (key, lock, version) immediately followed by the
value, so one read returns everything needed to validate a lookup. A bucket
holds ``bucket_width`` slots followed by an 8-byte link to the head of its
overflow chain. Overflow nodes are a slot followed by a link to the next
node.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

_SLOT_HEADER = struct.Struct('<QQQ')
_LINK = struct.Struct('<II')

SLOT_HEADER_BYTES = _SLOT_HEADER.size
LINK_BYTES = _LINK.size
DEFAULT_VALUE_BYTES = 104
NIL = -1
"""Region id of a link that points nowhere. Zeroed memory holds nil links."""
EMPTY_KEY = 0
MAX_LINK_OFFSET = 2**32 - 1
"""Largest offset a link can address, so overflow chunks stay below 4 GiB."""

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, slots=True)
class SlotHeader:
    key: int = EMPTY_KEY
    lock: int = 0
    """Zero, or the id of the transaction holding the lock."""
    version: int = 0

    def pack(self) -> bytes:
        return _SLOT_HEADER.pack(self.key, self.lock, self.version)

    @classmethod
    def unpack(cls, data: bytes, offset: int = 0) -> SlotHeader:
        return cls(*_SLOT_HEADER.unpack_from(data, offset))


@dataclass(frozen=True, slots=True)
class Link:
    region_id: int = NIL
    offset: int = 0

    @property
    def is_nil(self) -> bool:
        return self.region_id == NIL

    def pack(self) -> bytes:
        if not 0 <= self.offset <= MAX_LINK_OFFSET:
            raise ValueError(f"Link offset {self.offset} is out of range.")
        if not NIL <= self.region_id < MAX_LINK_OFFSET:
            raise ValueError(f"Link region id {self.region_id} is out of range.")
        return _LINK.pack(self.region_id + 1, self.offset)

    @classmethod
    def unpack(cls, data: bytes, offset: int = 0) -> Link:
        stored, at = _LINK.unpack_from(data, offset)
        return cls(stored - 1, at)


@dataclass(frozen=True)
class TableLayout:
    n_buckets: int
    bucket_width: int = 1
    value_bytes: int = DEFAULT_VALUE_BYTES

    def __post_init__(self) -> None:
        if self.n_buckets < 1 or self.n_buckets & (self.n_buckets - 1):
            raise ValueError(f"n_buckets must be a power of two, got {self.n_buckets}.")
        if self.bucket_width < 1:
            raise ValueError("bucket_width must be positive.")
        if self.value_bytes < 1:
            raise ValueError("value_bytes must be positive.")

    @property
    def slot_bytes(self) -> int:
        return SLOT_HEADER_BYTES + self.value_bytes

    @property
    def bucket_bytes(self) -> int:
        return self.bucket_width * self.slot_bytes + LINK_BYTES

    @property
    def node_bytes(self) -> int:
        """Size of an overflow node."""
        return self.slot_bytes + LINK_BYTES

    @property
    def table_bytes(self) -> int:
        return self.n_buckets * self.bucket_bytes

    def slot_offset(self, bucket: int, index: int = 0) -> int:
        return bucket * self.bucket_bytes + index * self.slot_bytes

    def link_offset(self, bucket: int) -> int:
        return bucket * self.bucket_bytes + self.bucket_width * self.slot_bytes

    def bucket_of(self, key: int) -> int:
        return mix64(key) & (self.n_buckets - 1)


def mix64(key: int) -> int:
    """Deterministic 64-bit mix of ``key``."""
    z = (key + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def home_of(key: int, n_nodes: int) -> int:
    """Node owning ``key``."""
    return (mix64(key) >> 32) % n_nodes


def table_size(key_count: int, bucket_width: int, target_occupancy: float) -> int:
    """Smallest power-of-two bucket count keeping occupancy at or below target.

    Parameters
    ----------
    key_count:
        Keys stored in the table.
    bucket_width:
        Slots per bucket.
    target_occupancy:
        Upper bound on the fraction of occupied slots, in ``(0, 1]``.
    """
    if key_count < 1 or bucket_width < 1:
        raise ValueError("key_count and bucket_width must be positive.")
    if not 0 < target_occupancy <= 1:
        raise ValueError("target_occupancy must lie in (0, 1].")
    needed = math.ceil(key_count / (target_occupancy * bucket_width))
    return 1 << max(0, (needed - 1).bit_length())
