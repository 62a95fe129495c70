# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Workload descriptions and deterministic operation streams."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum, auto

import numpy as np

from ..engine import SeededRng
from ..nic import CACHELINE_BYTES

# Stream ids of the forked random generators.
_MIX, _KEYS, _INSERTS, _SIZES, _ZIPF_RANKS = range(5)


class WorkloadKind(Enum):
    KV_LOOKUPS = auto()
    """Lookups of random keys in the distributed hash table."""
    TATP_LITE = auto()
    """Transaction mix of reads, updates, inserts and deletes on one table."""
    SYNC_MIRRORING = auto()
    """Stream of mirrored writes with a skewed message size distribution."""
    RANDOM_READS = auto()
    """Random 64-byte one-sided reads over a growing number of connections."""
    EMULATION = auto()
    """Lookup reads of one machine in an emulated cluster of many machines."""
    UD_BREAK_EVEN = auto()
    """Saturated RC write-with-immediate RPCs against UD sends."""


class OpKind(Enum):
    READ = auto()
    WRITE = auto()
    INSERT = auto()
    DELETE = auto()


@dataclass(frozen=True)
class OpMix:
    read_frac: float = 1.0
    write_frac: float = 0.0
    insert_frac: float = 0.0
    delete_frac: float = 0.0

    def __post_init__(self) -> None:
        fractions = self.fractions()
        if any(f < 0 for f in fractions.values()):
            raise ValueError("Operation fractions must not be negative.")
        if not math.isclose(sum(fractions.values()), 1.0, abs_tol=1e-9):
            total = sum(fractions.values())
            raise ValueError(f"Operation fractions sum to {total}, not 1.")

    @classmethod
    def tatp(cls) -> OpMix:
        return cls(read_frac=0.80, write_frac=0.16, insert_frac=0.02, delete_frac=0.02)

    def fractions(self) -> dict[OpKind, float]:
        return {
            OpKind.READ: self.read_frac,
            OpKind.WRITE: self.write_frac,
            OpKind.INSERT: self.insert_frac,
            OpKind.DELETE: self.delete_frac,
        }


def _default_histogram() -> dict[int, float]:
    return {
        1: 0.75,
        2: 0.10,
        4: 0.06,
        8: 0.04,
        16: 0.02,
        32: 0.015,
        64: 0.01,
        128: 0.0035,
        256: 0.0015,
    }


@dataclass(frozen=True)
class MessageSizeDistribution:
    """Probability of each message size, in cachelines."""

    histogram: Mapping[int, float] = field(default_factory=_default_histogram)

    def __post_init__(self) -> None:
        if not self.histogram:
            raise ValueError("Size histogram is empty.")
        if any(size < 1 for size in self.histogram):
            raise ValueError("Message sizes must be at least one cacheline.")
        if not math.isclose(sum(self.histogram.values()), 1.0, abs_tol=1e-9):
            raise ValueError("Size probabilities must sum to 1.")

    @classmethod
    def fixed(cls, cachelines: int) -> MessageSizeDistribution:
        return cls({cachelines: 1.0})

    def sample(self, count: int, rng: SeededRng) -> np.ndarray:
        """Quota-sampled message sizes in bytes."""
        sizes = _quota(list(self.histogram.items()), count, rng)
        return np.asarray(sizes, dtype=np.int64) * CACHELINE_BYTES


@dataclass(frozen=True, kw_only=True)
class WorkloadSpec:
    kind: WorkloadKind
    n_nodes: int = 2
    threads_per_node: int = 1
    coroutines_per_thread: int = 32
    key_count: int = 10_000
    key_distribution: str = 'uniform'
    """``uniform`` or ``zipf``."""
    zipf_theta: float = 0.99
    op_count: int = 10_000
    seed: int = 0
    mix: OpMix = field(default_factory=OpMix)
    sizes: MessageSizeDistribution = field(default_factory=MessageSizeDistribution)
    insert_range: int = 0
    """Keys above ``key_count`` touched by inserts and deletes, 0 for ``key_count``."""

    def __post_init__(self) -> None:
        if self.key_distribution not in ('uniform', 'zipf'):
            raise ValueError(
                f"Unknown key distribution '{self.key_distribution}', "
                "expected 'uniform' or 'zipf'."
            )
        if self.zipf_theta <= 0:
            raise ValueError("zipf_theta must be positive.")
        counts = ('n_nodes', 'threads_per_node', 'coroutines_per_thread', 'key_count')
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive.")
        if self.op_count < 0:
            raise ValueError("op_count must not be negative.")

    @property
    def n_coroutines(self) -> int:
        return self.n_nodes * self.threads_per_node * self.coroutines_per_thread

    @property
    def insert_keys(self) -> range:
        span = self.insert_range or self.key_count
        return range(self.key_count + 1, self.key_count + 1 + span)


@dataclass(frozen=True, slots=True)
class Op:
    kind: OpKind
    keys: tuple[int, ...]
    """Keys read, then the key written, for transactions."""
    size_bytes: int = 0


OpStream = dict[tuple[int, int, int], list[Op]]
"""Operations of each ``(node, thread, coroutine)``."""


def _quota(items: list[tuple[object, float]], count: int, rng: SeededRng) -> list:
    """``count`` items with exactly the requested shares, in shuffled order."""
    quotas = [math.floor(p * count) for _, p in items]
    remainders = sorted(
        range(len(items)), key=lambda i: (-(items[i][1] * count - quotas[i]), i)
    )
    for i in remainders[: count - sum(quotas)]:
        quotas[i] += 1
    pool = [item for (item, _), q in zip(items, quotas, strict=True) for _ in range(q)]
    order = rng.permutation(len(pool))
    return [pool[i] for i in order]


class KeySampler:
    """Draws keys in ``[1, key_count]`` uniformly or Zipf distributed."""

    def __init__(self, spec: WorkloadSpec, rng: SeededRng) -> None:
        self.key_count = spec.key_count
        self._rng = rng
        self._cdf: np.ndarray | None = None
        if spec.key_distribution == 'zipf':
            weights = 1.0 / np.arange(1, spec.key_count + 1) ** spec.zipf_theta
            self._cdf = np.cumsum(weights) / weights.sum()
            # Hot keys are scattered over the key space.
            ranks = rng.fork(_ZIPF_RANKS).permutation(spec.key_count)
            self._rank_to_key = np.asarray(ranks) + 1

    def draw(self, count: int) -> np.ndarray:
        if self._cdf is None:
            return self._rng.generator.integers(1, self.key_count + 1, size=count)
        uniform = self._rng.generator.random(count)
        ranks = np.searchsorted(self._cdf, uniform, side='right')
        return self._rank_to_key[np.minimum(ranks, self.key_count - 1)]


def generate(spec: WorkloadSpec, rng: SeededRng | None = None) -> OpStream:
    """Deterministic operation stream of every coroutine.

    Operation kinds and message sizes are quota sampled, so the realized
    fractions match the requested mix exactly up to rounding.
    """
    rng = rng or SeededRng(spec.seed)
    kinds = _quota(list(spec.mix.fractions().items()), spec.op_count, rng.fork(_MIX))
    keys = KeySampler(spec, rng.fork(_KEYS))
    extra = keys.draw(3 * spec.op_count).reshape(-1, 3) if spec.op_count else None
    insert_keys = spec.insert_keys
    inserted = rng.fork(_INSERTS).generator.integers(
        0, len(insert_keys), size=spec.op_count
    )
    sizes = spec.sizes.sample(spec.op_count, rng.fork(_SIZES))
    ops = []
    for i, kind in enumerate(kinds):
        match kind:
            case OpKind.READ if spec.kind is WorkloadKind.TATP_LITE:
                # Read-only transactions touch one or two keys.
                n = 1 + int(extra[i, 2] % 2)
                picked = tuple(dict.fromkeys(int(k) for k in extra[i, :n]))
                ops.append(Op(kind, picked))
            case OpKind.READ:
                ops.append(Op(kind, (int(extra[i, 0]),), int(sizes[i])))
            case OpKind.WRITE:
                ops.append(Op(kind, (int(extra[i, 0]), int(extra[i, 1]))))
            case _:
                ops.append(Op(kind, (insert_keys[int(inserted[i])],)))
    streams: OpStream = {}
    coroutines = [
        (n, t, c)
        for n in range(spec.n_nodes)
        for t in range(spec.threads_per_node)
        for c in range(spec.coroutines_per_thread)
    ]
    for coroutine in coroutines:
        streams[coroutine] = []
    for i, op in enumerate(ops):
        streams[coroutines[i % len(coroutines)]].append(op)
    return streams
