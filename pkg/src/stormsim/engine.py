# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Deterministic discrete-event engine.

Time is an integer number of nanoseconds. All events live in a single queue
ordered by ``(fire_at, seq)`` where ``seq`` increases with every call to
:meth:`Engine.schedule`, so events scheduled for the same time dispatch in
insertion order.
"""

from __future__ import annotations

import heapq
from collections import Counter
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, TextIO

import numpy as np

SimTime = int
"""Simulated time in nanoseconds."""

HOST_TARGET_OFFSET = 1 << 16
"""Event targets at or above this value denote host CPUs rather than NICs.

The host target of node ``n`` is ``HOST_TARGET_OFFSET + n``.
"""


def host_target(node_id: int) -> int:
    """Return the event target identifying the host CPU of a node."""
    return HOST_TARGET_OFFSET + node_id


@dataclass(frozen=True, slots=True)
class SimEvent:
    """A scheduled callback."""

    fire_at: SimTime
    seq: int
    target: int
    """Node (or host CPU, see :func:`host_target`) the event acts on."""
    kind: str
    action: Callable[..., None] = field(repr=False)
    args: tuple[Any, ...] = field(default=(), repr=False)


@dataclass
class RunStats:
    """Counts of events dispatched by one call to :meth:`Engine.run_until`."""

    dispatched: int = 0
    by_kind: Counter[str] = field(default_factory=Counter)
    by_target: Counter[int] = field(default_factory=Counter)
    now: SimTime = 0

    def merge(self, other: RunStats) -> None:
        self.dispatched += other.dispatched
        self.by_kind.update(other.by_kind)
        self.by_target.update(other.by_target)
        self.now = max(self.now, other.now)


class SeededRng:
    """Reproducible random stream.

    Streams are derived with :class:`numpy.random.SeedSequence` so that
    :meth:`fork` gives independent, reproducible children.

    Parameters
    ----------
    seed:
        64-bit unsigned seed.
    spawn_key:
        Path of this stream in the fork tree.
    """

    def __init__(self, seed: int, *, spawn_key: tuple[int, ...] = ()) -> None:
        if not 0 <= seed < 2**64:
            raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}.")
        self.seed = seed
        self.spawn_key = spawn_key
        self._generator = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=spawn_key)
        )

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def fork(self, *key: int) -> SeededRng:
        """Return an independent stream identified by ``key``."""
        return SeededRng(self.seed, spawn_key=(*self.spawn_key, *key))

    def integers(self, low: int, high: int) -> int:
        """Draw an integer in ``[low, high)``."""
        return int(self._generator.integers(low, high))

    def random(self) -> float:
        return float(self._generator.random())

    def permutation(self, n: int) -> list[int]:
        return [int(i) for i in self._generator.permutation(n)]


class Engine:
    """Single-queue discrete-event engine.

    Parameters
    ----------
    seed:
        Seed of :attr:`rng`.
    event_log:
        Optional text sink receiving one ``time,seq,target,kind`` line per
        dispatched event.
    """

    def __init__(self, *, seed: int = 0, event_log: TextIO | None = None) -> None:
        self._now: SimTime = 0
        self._seq = 0
        self._queue: list[tuple[SimTime, int, SimEvent]] = []
        self._finished = False
        self._event_log = event_log
        self._totals = RunStats()
        self.rng = SeededRng(seed)

    def now(self) -> SimTime:
        """Current simulated time in nanoseconds."""
        return self._now

    @property
    def pending(self) -> int:
        """Number of events not yet dispatched."""
        return len(self._queue)

    @property
    def finished(self) -> bool:
        return self._finished

    @property
    def totals(self) -> RunStats:
        """Statistics accumulated over all runs of this engine."""
        return self._totals

    def schedule(
        self,
        delay: SimTime,
        target: int,
        action: Callable[..., None],
        *args: Any,
        kind: str = 'call',
    ) -> int:
        """Schedule ``action(*args)`` to run ``delay`` nanoseconds from now.

        Parameters
        ----------
        delay:
            Non-negative delay in nanoseconds.
        target:
            Identifier of the node the event acts on.
        action:
            Callback invoked at dispatch.
        kind:
            Short label written to the event log.

        Returns
        -------
        :
            Unique id of the event, equal to its tie-break sequence number.
        """
        if self._finished:
            raise RuntimeError("Cannot schedule events on a finished engine.")
        if delay < 0:
            raise ValueError(f"Cannot schedule an event in the past (delay={delay}).")
        seq = self._seq
        self._seq += 1
        fire_at = self._now + int(delay)
        event = SimEvent(fire_at, seq, target, kind, action, args)
        heapq.heappush(self._queue, (fire_at, seq, event))
        return seq

    def run_until(self, limit: SimTime | None = None) -> RunStats:
        """Dispatch every event with ``fire_at <= limit``.

        With ``limit=None`` the queue is drained. Afterwards :meth:`now` is
        ``limit`` if events remain or the queue was empty to begin with,
        otherwise the time of the last dispatched event.
        """
        stats = RunStats(now=self._now)
        if not self._queue:
            if limit is not None:
                self._now = max(self._now, limit)
            stats.now = self._now
            self._totals.merge(stats)
            return stats
        queue = self._queue
        log = self._event_log
        while queue and (limit is None or queue[0][0] <= limit):
            _, _, event = heapq.heappop(queue)
            self._now = event.fire_at
            if log is not None:
                log.write(f'{event.fire_at},{event.seq},{event.target},{event.kind}\n')
            stats.dispatched += 1
            stats.by_kind[event.kind] += 1
            stats.by_target[event.target] += 1
            event.action(*event.args)
        if queue and limit is not None:
            self._now = max(self._now, limit)
        stats.now = self._now
        self._totals.merge(stats)
        return stats

    def run(self) -> RunStats:
        """Dispatch events until the queue is empty."""
        return self.run_until(None)

    def finish(self) -> None:
        """Refuse any further scheduling."""
        self._finished = True
