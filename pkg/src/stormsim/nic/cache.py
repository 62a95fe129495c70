# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Byte-granular LRU cache of NIC transport state."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum, auto

from ..engine import SimTime


class StateKind(Enum):
    """Category of transport state held in NIC SRAM."""

    QP = auto()
    """Connection context of one queue pair."""
    MTT = auto()
    """Virtual-to-physical translation of one page."""
    MPT = auto()
    """Protection entry of one memory region."""
    RECV_WQE = auto()
    """One posted receive work request."""


@dataclass(frozen=True, slots=True)
class StateKey:
    kind: StateKind
    id: int
    size_bytes: int


class CacheOutcome(Enum):
    HIT = auto()
    MISS = auto()


class NicCache:
    """LRU cache with byte-granular occupancy.

    Parameters
    ----------
    capacity_bytes:
        SRAM budget.
    hit_ns:
        Latency of a hit.
    miss_ns:
        Latency of a miss, i.e., a DMA round trip to host memory.
    """

    def __init__(self, capacity_bytes: int, *, hit_ns: float, miss_ns: float) -> None:
        if capacity_bytes <= 0:
            raise ValueError("Cache capacity must be positive.")
        self.capacity_bytes = capacity_bytes
        self.hit_ns = hit_ns
        self.miss_ns = miss_ns
        self.hits = 0
        self.misses = 0
        self._resident: OrderedDict[StateKey, SimTime] = OrderedDict()
        self._occupancy = 0

    @property
    def occupancy_bytes(self) -> int:
        return self._occupancy

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def __contains__(self, key: object) -> bool:
        return key in self._resident

    def __len__(self) -> int:
        return len(self._resident)

    def last_use(self, key: StateKey) -> SimTime:
        return self._resident[key]

    def access(self, key: StateKey, at: SimTime) -> tuple[CacheOutcome, float]:
        """Look up ``key``, inserting it on a miss.

        Returns
        -------
        :
            The outcome and the latency of the access in nanoseconds.
        """
        if key in self._resident:
            self._resident.move_to_end(key)
            self._resident[key] = at
            self.hits += 1
            return CacheOutcome.HIT, self.hit_ns
        self._insert(key, at)
        self.misses += 1
        return CacheOutcome.MISS, self.miss_ns

    def warm(self, key: StateKey, at: SimTime = 0) -> bool:
        """Install ``key`` without counting an access.

        Returns ``False`` without evicting anything if the cache is full.
        """
        if key in self._resident:
            return True
        if self._occupancy + key.size_bytes > self.capacity_bytes:
            return False
        self._insert(key, at)
        return True

    def invalidate(self, key: StateKey) -> None:
        if key in self._resident:
            del self._resident[key]
            self._occupancy -= key.size_bytes

    def reset_counters(self) -> None:
        self.hits = 0
        self.misses = 0

    def _insert(self, key: StateKey, at: SimTime) -> None:
        if key.size_bytes > self.capacity_bytes:
            raise ValueError(
                f"State entry of {key.size_bytes} bytes exceeds cache capacity "
                f"of {self.capacity_bytes} bytes."
            )
        while self._occupancy + key.size_bytes > self.capacity_bytes:
            evicted, _ = self._resident.popitem(last=False)
            self._occupancy -= evicted.size_bytes
        self._resident[key] = at
        self._occupancy += key.size_bytes
