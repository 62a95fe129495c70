# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""RNIC model: transport-state accounting, processing units and latency.

A one-sided operation of ``P`` payload bytes passes these stages, with the
latency bucket each one is booked in:

- doorbell, ``pcie_write_ns`` (pcie_const);
- initiator PU, ``pu_service_ns`` plus initiator lookups (net_const);
- descriptor fetch, ``pcie_dma_rt_ns`` (pcie_const);
- first half of the payload DMA, ``2*P*pcie_per_byte_ns`` in total (pcie_var);
- wire, ``wire_prop_ns`` (net_const) and ``P*wire_per_byte_ns`` (net_var);
- target PU, ``pu_service_ns`` plus target lookups (net_const);
- second half of the payload DMA (pcie_var);
- wire back, ``wire_prop_ns`` (net_const);
- completion write, ``pcie_write_ns`` (pcie_const).

Each side looks up its QP context, the MPT entry of the region and one MTT
entry per touched page. The payload crosses the wire on the way out for
writes and on the way back for reads.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum, auto

from ..engine import SimTime
from .cache import CacheOutcome, NicCache, StateKey, StateKind
from .config import QP_STATE_BYTES, NicConfig

PAGE_SIZES = (4096, 2 * 2**20, 2**30)
"""Supported page sizes: 4 KiB, 2 MiB and 1 GiB."""
FARM_NEIGHBORHOOD = 8
"""Slots fetched by one FaRM-style neighborhood read."""


class OneSidedOp(Enum):
    READ = auto()
    WRITE = auto()
    WRITE_IMM = auto()


@dataclass(frozen=True, slots=True)
class LatencyBreakdown:
    """Latency split into PCIe and network, constant and variable parts."""

    pcie_const: int = 0
    pcie_var: int = 0
    net_const: int = 0
    net_var: int = 0

    @property
    def total(self) -> int:
        return self.pcie_const + self.pcie_var + self.net_const + self.net_var

    @property
    def pcie_share(self) -> float:
        return (self.pcie_const + self.pcie_var) / self.total if self.total else 0.0

    @property
    def variable_share(self) -> float:
        return (self.pcie_var + self.net_var) / self.total if self.total else 0.0

    def __add__(self, other: LatencyBreakdown) -> LatencyBreakdown:
        return LatencyBreakdown(
            pcie_const=self.pcie_const + other.pcie_const,
            pcie_var=self.pcie_var + other.pcie_var,
            net_const=self.net_const + other.net_const,
            net_var=self.net_var + other.net_var,
        )

    def mean(self, count: int) -> LatencyBreakdown:
        """Per-operation mean of buckets summed over ``count`` operations.

        Rounding is absorbed by the constant network part, so the buckets add
        up to the rounded mean total.
        """
        if count < 1:
            raise ValueError("count must be positive.")
        return LatencyBreakdown(
            pcie_const=round(self.pcie_const / count),
            pcie_var=round(self.pcie_var / count),
            net_const=round(self.net_const / count),
            net_var=round(self.net_var / count),
        ).with_total(round(self.total / count))

    def with_total(self, total: int) -> LatencyBreakdown:
        """Absorb ``total - self.total`` into the constant network part.

        Queueing and host CPU time are constant, non-PCIe costs.
        """
        return LatencyBreakdown(
            pcie_const=self.pcie_const,
            pcie_var=self.pcie_var,
            net_const=self.net_const + total - self.total,
            net_var=self.net_var,
        )


@dataclass(frozen=True, slots=True)
class MemoryRegionMeta:
    region_id: int
    base: int
    length_bytes: int
    page_size_bytes: int
    is_physical_segment: bool
    mtt_entry_count: int
    mpt_entry_count: int

    def contains(self, offset: int, length: int) -> bool:
        return offset >= 0 and length >= 1 and offset + length <= self.length_bytes

    def pages(self, offset: int, length: int) -> range:
        """Indices of the MTT entries covering ``[offset, offset + length)``."""
        if self.is_physical_segment:
            return range(1)
        first = offset // self.page_size_bytes
        last = (offset + max(length, 1) - 1) // self.page_size_bytes
        return range(first, last + 1)

    def pages_touched(self, offset: int, length: int) -> int:
        return len(self.pages(offset, length))


def pcie_var_ns(config: NicConfig, payload_bytes: int) -> int:
    return round(2 * payload_bytes * config.pcie_per_byte_ns)


def net_var_ns(config: NicConfig, payload_bytes: int) -> int:
    return round(payload_bytes * config.wire_per_byte_ns)


def one_sided_latency(
    config: NicConfig,
    op: OneSidedOp,
    payload_bytes: int,
    pages_touched: int = 1,
    cache_outcomes: Sequence[CacheOutcome] | None = None,
) -> LatencyBreakdown:
    """Closed-form latency of one unloaded one-sided operation.

    Parameters
    ----------
    config:
        NIC parameters, used for both sides.
    op:
        Operation. The total does not depend on it, only where the payload
        crosses the wire.
    payload_bytes:
        Transfer size, 0 to get the constant part only.
    pages_touched:
        MTT lookups per side.
    cache_outcomes:
        Outcome of each of the ``2 * (2 + pages_touched)`` lookups, all hits
        by default.
    """
    if payload_bytes < 0:
        raise ValueError("Payload size must not be negative.")
    n_lookups = 2 * (2 + pages_touched)
    if cache_outcomes is None:
        cache_outcomes = [CacheOutcome.HIT] * n_lookups
    if len(cache_outcomes) != n_lookups:
        raise ValueError(f"Expected {n_lookups} cache outcomes for {op.name}.")
    lookup_ns = sum(
        config.cache_hit_ns if o is CacheOutcome.HIT else config.cache_miss_ns
        for o in cache_outcomes
    )
    return LatencyBreakdown(
        pcie_const=round(2 * config.pcie_write_ns + config.pcie_dma_rt_ns),
        pcie_var=pcie_var_ns(config, payload_bytes),
        net_const=round(2 * config.wire_prop_ns + 2 * config.pu_service_ns + lookup_ns),
        net_var=net_var_ns(config, payload_bytes),
    )


def delivery_latency(config: NicConfig, payload_bytes: int) -> LatencyBreakdown:
    """Time from posting a write-with-immediate to its receive completion."""
    full = one_sided_latency(config, OneSidedOp.WRITE_IMM, payload_bytes)
    return LatencyBreakdown(
        pcie_const=full.pcie_const - round(config.pcie_write_ns),
        pcie_var=full.pcie_var,
        net_const=full.net_const - round(config.wire_prop_ns),
        net_var=full.net_var,
    )


def rpc_latency(
    config: NicConfig, request_bytes: int, reply_bytes: int | None = None
) -> LatencyBreakdown:
    """Closed-form latency of an unloaded write-based RPC."""
    reply_bytes = request_bytes if reply_bytes is None else reply_bytes
    handler = LatencyBreakdown(net_const=round(config.host_rpc_ns))
    return (
        delivery_latency(config, request_bytes)
        + handler
        + delivery_latency(config, reply_bytes)
    )


BASELINE_KINDS = ('read', 'write', 'write_imm', 'rpc', 'farm', 'ud_rpc', 'lite')
"""Operation kinds understood by :func:`predict_latency_ns`."""


def predict_latency_ns(
    params: Mapping[str, float], kind: str, payload_bytes: float
) -> float:
    """Unrounded all-hit latency of an operation kind.

    This is the linear model fitted by :mod:`stormsim.nic.fit`. ``params``
    maps :class:`NicConfig` field names to values.

    Parameters
    ----------
    kind:
        One of :data:`BASELINE_KINDS`. ``farm`` reads a neighborhood of
        ``FARM_NEIGHBORHOOD`` items of ``payload_bytes`` each, ``ud_rpc``
        adds a receive repost on both hosts and ``lite`` adds a kernel crossing
        on both hosts.
    """
    p = params

    def one_sided(size: float) -> float:
        return (
            2 * p['pcie_write_ns']
            + p['pcie_dma_rt_ns']
            + 2 * size * p['pcie_per_byte_ns']
            + 2 * p['wire_prop_ns']
            + 2 * p['pu_service_ns']
            + 6 * p['cache_hit_ns']
            + size * p['wire_per_byte_ns']
        )

    def rpc(size: float) -> float:
        delivered = one_sided(size) - p['wire_prop_ns'] - p['pcie_write_ns']
        return 2 * delivered + p['host_rpc_ns']

    match kind:
        case 'read' | 'write' | 'write_imm':
            return one_sided(payload_bytes)
        case 'farm':
            return one_sided(FARM_NEIGHBORHOOD * payload_bytes)
        case 'rpc':
            return rpc(payload_bytes)
        case 'ud_rpc':
            return rpc(payload_bytes) + 2 * p['host_repost_ns']
        case 'lite':
            return rpc(payload_bytes) + 2 * p['kernel_crossing_ns']
    raise ValueError(f"Unknown operation kind '{kind}'.")


@dataclass(frozen=True, slots=True)
class PuDispatch:
    """Outcome of queueing one WQE on a processing unit."""

    pu: int
    start: float
    done_at: SimTime
    """When the WQE leaves the PU stage, lookups included."""
    lookup_ns: float
    misses: int


@dataclass
class _PuState:
    free_at: float = 0.0
    busy_ns: float = 0.0
    serviced: int = 0


class Nic:
    """One simulated RNIC.

    QP contexts and receive WQEs compete for the context cache. MTT and MPT
    entries use the translation cache, or the context cache if the config
    has no separate translation cache.
    """

    def __init__(self, node_id: int, config: NicConfig) -> None:
        self.node_id = node_id
        self.config = config
        self.context_cache = NicCache(
            config.cache_capacity_bytes,
            hit_ns=config.cache_hit_ns,
            miss_ns=config.cache_miss_ns,
        )
        if config.translation_cache_bytes:
            self.translation_cache = NicCache(
                config.translation_cache_bytes,
                hit_ns=config.cache_hit_ns,
                miss_ns=config.cache_miss_ns,
            )
        else:
            self.translation_cache = self.context_cache
        self.regions: dict[int, MemoryRegionMeta] = {}
        self.qp_count = 0
        self.posted_recvs = 0
        self._next_region_id = 0
        self._pus = [_PuState() for _ in range(config.num_pus)]

    # State accounting

    def register_region(
        self,
        base: int,
        length: int,
        page_size: int,
        is_physical_segment: bool = False,
        *,
        region_id: int | None = None,
    ) -> MemoryRegionMeta:
        """Register a memory region and account for its MTT and MPT entries."""
        if length <= 0:
            raise ValueError("Region length must be positive.")
        if page_size not in PAGE_SIZES:
            raise ValueError(
                f"Unsupported page size {page_size}, expected one of {PAGE_SIZES}."
            )
        if base % page_size:
            raise ValueError(
                f"Region base {base:#x} is not aligned to page size {page_size}."
            )
        if region_id is None:
            region_id = self._next_region_id
        if region_id in self.regions:
            raise ValueError(f"Region {region_id} is already registered.")
        self._next_region_id = max(self._next_region_id, region_id + 1)
        meta = MemoryRegionMeta(
            region_id=region_id,
            base=base,
            length_bytes=length,
            page_size_bytes=page_size,
            is_physical_segment=is_physical_segment,
            mtt_entry_count=1 if is_physical_segment else math.ceil(length / page_size),
            mpt_entry_count=1,
        )
        self.regions[region_id] = meta
        return meta

    def add_qp(self) -> None:
        self.qp_count += 1

    def recv_posted(self) -> None:
        self.posted_recvs += 1

    def recv_consumed(self) -> None:
        self.posted_recvs -= 1

    @property
    def mtt_entries(self) -> int:
        return sum(r.mtt_entry_count for r in self.regions.values())

    @property
    def mpt_entries(self) -> int:
        return sum(r.mpt_entry_count for r in self.regions.values())

    @property
    def trackable_state_bytes(self) -> int:
        """Bytes of transport state this NIC would like to keep in SRAM."""
        cfg = self.config
        return (
            QP_STATE_BYTES * self.qp_count
            + self.mtt_entries * cfg.mtt_entry_bytes
            + self.mpt_entries * cfg.mpt_entry_bytes
            + self.posted_recvs * cfg.recv_wqe_bytes
        )

    # State keys and cache access

    def qp_key(self, qp_num: int) -> StateKey:
        return StateKey(StateKind.QP, qp_num, QP_STATE_BYTES)

    def mpt_key(self, region: MemoryRegionMeta) -> StateKey:
        return StateKey(StateKind.MPT, region.region_id, self.config.mpt_entry_bytes)

    def mtt_key(self, region: MemoryRegionMeta, page: int) -> StateKey:
        return StateKey(
            StateKind.MTT, (region.region_id << 32) | page, self.config.mtt_entry_bytes
        )

    def recv_wqe_key(self, wqe_id: int) -> StateKey:
        return StateKey(StateKind.RECV_WQE, wqe_id, self.config.recv_wqe_bytes)

    def cache_for(self, key: StateKey) -> NicCache:
        if key.kind in (StateKind.MTT, StateKind.MPT):
            return self.translation_cache
        return self.context_cache

    def cache_access(self, key: StateKey, at: SimTime) -> tuple[CacheOutcome, float]:
        return self.cache_for(key).access(key, at)

    def lookup_keys(
        self, qp_num: int, region: MemoryRegionMeta | None, offset: int, length: int
    ) -> list[StateKey]:
        """State consulted to process one WQE: QP context, MPT and MTT entries."""
        keys = [self.qp_key(qp_num)]
        if region is not None:
            keys.append(self.mpt_key(region))
            keys.extend(self.mtt_key(region, p) for p in region.pages(offset, length))
        return keys

    def prefetch_region(self, region: MemoryRegionMeta) -> int:
        """Install a region's MPT and MTT entries while they fit.

        Returns
        -------
        :
            Number of entries installed.
        """
        installed = 0
        if not self.translation_cache.warm(self.mpt_key(region)):
            return installed
        installed += 1
        for page in range(region.mtt_entry_count):
            if not self.translation_cache.warm(self.mtt_key(region, page)):
                break
            installed += 1
        return installed

    @property
    def hits(self) -> int:
        hits = self.context_cache.hits
        if self.translation_cache is not self.context_cache:
            hits += self.translation_cache.hits
        return hits

    @property
    def misses(self) -> int:
        misses = self.context_cache.misses
        if self.translation_cache is not self.context_cache:
            misses += self.translation_cache.misses
        return misses

    def reset_counters(self) -> None:
        self.context_cache.reset_counters()
        self.translation_cache.reset_counters()
        for pu in self._pus:
            pu.busy_ns = 0.0
            pu.serviced = 0

    # Processing units

    def pu_of(self, qp_num: int) -> int:
        return qp_num % self.config.num_pus

    def pu_dispatch(
        self, qp_num: int, keys: Sequence[StateKey], at: SimTime
    ) -> PuDispatch:
        """Queue one WQE on the PU serving ``qp_num``.

        WQEs are serviced in arrival order. The PU is busy for
        ``pu_service_ns + miss_overlap_factor * (miss latencies)`` while the
        WQE leaves the stage after ``pu_service_ns`` plus all lookup latencies.
        """
        cfg = self.config
        index = self.pu_of(qp_num)
        pu = self._pus[index]
        start = max(float(at), pu.free_at)
        access_at = math.ceil(start)
        lookup_ns = 0.0
        miss_ns = 0.0
        misses = 0
        for key in keys:
            outcome, latency = self.cache_access(key, access_at)
            lookup_ns += latency
            if outcome is CacheOutcome.MISS:
                miss_ns += latency
                misses += 1
        busy = cfg.pu_service_ns + cfg.miss_overlap_factor * miss_ns
        pu.free_at = start + busy
        pu.busy_ns += busy
        pu.serviced += 1
        return PuDispatch(
            pu=index,
            start=start,
            done_at=math.ceil(start + cfg.pu_service_ns + lookup_ns),
            lookup_ns=lookup_ns,
            misses=misses,
        )

    @property
    def wqes_serviced(self) -> int:
        return sum(pu.serviced for pu in self._pus)

    def pu_utilization(self, elapsed_ns: float) -> float:
        if elapsed_ns <= 0:
            return 0.0
        return sum(pu.busy_ns for pu in self._pus) / (elapsed_ns * len(self._pus))
