# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Allocators handing out memory inside registered regions."""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Callable
from dataclasses import dataclass

from ..logging import get_logger
from ..nic import MemoryRegionMeta

DEFAULT_CHUNK_BYTES = 64 * 1024 * 1024

Register = Callable[[int], MemoryRegionMeta]
"""Registers a region of the given length and returns its metadata."""


@dataclass
class Chunk:
    region_id: int
    length: int
    bump_offset: int = 0

    @property
    def free_bytes(self) -> int:
        return self.length - self.bump_offset


class ContiguousAllocator:
    """Bump allocator over a few large registered chunks.

    Freed blocks go to a free list per size and are reused first. Chunks are
    never deregistered.

    Parameters
    ----------
    register:
        Callable registering a new region.
    chunk_bytes:
        Size of each registered chunk.
    """

    def __init__(
        self, register: Register, chunk_bytes: int = DEFAULT_CHUNK_BYTES
    ) -> None:
        if chunk_bytes < 1:
            raise ValueError("chunk_bytes must be positive.")
        self._register = register
        self.chunk_bytes = chunk_bytes
        self.chunks: list[Chunk] = []
        self._free: defaultdict[int, list[tuple[int, int]]] = defaultdict(list)
        self.allocated_bytes = 0
        """Bytes handed out over the allocator's lifetime."""
        self.live_bytes = 0

    @property
    def region_count(self) -> int:
        return len(self.chunks)

    def alloc(self, size: int) -> tuple[int, int]:
        """Allocate ``size`` bytes, returning ``(region_id, offset)``."""
        if size < 1:
            raise ValueError("Allocation size must be positive.")
        if size > self.chunk_bytes:
            raise ValueError(
                f"Allocation of {size} bytes exceeds the chunk size "
                f"of {self.chunk_bytes}."
            )
        self.allocated_bytes += size
        self.live_bytes += size
        if self._free[size]:
            return self._free[size].pop()
        chunk = next((c for c in self.chunks if c.free_bytes >= size), None)
        if chunk is None:
            meta = self._register(self.chunk_bytes)
            chunk = Chunk(meta.region_id, self.chunk_bytes)
            self.chunks.append(chunk)
            get_logger().debug(
                "Registered chunk %d as region %d", len(self.chunks), chunk.region_id
            )
        offset = chunk.bump_offset
        chunk.bump_offset += size
        return chunk.region_id, offset

    def free(self, region_id: int, offset: int, size: int) -> None:
        """Return a block for reuse by allocations of the same size."""
        if not any(c.region_id == region_id for c in self.chunks):
            raise KeyError(f"Region {region_id} does not belong to this allocator.")
        self.live_bytes -= size
        self._free[size].append((region_id, offset))


class NaiveAllocator:
    """Registers a separate region for every allocation."""

    def __init__(self, register: Register) -> None:
        self._register = register
        self.regions: list[int] = []
        self.live_bytes = 0

    @property
    def region_count(self) -> int:
        return len(self.regions)

    def alloc(self, size: int) -> tuple[int, int]:
        if size < 1:
            raise ValueError("Allocation size must be positive.")
        meta = self._register(size)
        self.regions.append(meta.region_id)
        self.live_bytes += size
        return meta.region_id, 0

    def free(self, region_id: int, offset: int, size: int) -> None:
        if region_id not in self.regions:
            raise KeyError(f"Region {region_id} does not belong to this allocator.")
        self.live_bytes -= size
