# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Model of an RDMA NIC: cached transport state, processing units, latency."""

from .cache import CacheOutcome, NicCache, StateKey, StateKind
from .config import (
    CACHELINE_BYTES,
    QP_STATE_BYTES,
    NicConfig,
    PresetError,
    load_preset,
    parse_preset,
    shipped_presets,
)
from .fit import (
    Anchor,
    FitResult,
    UnderdeterminedFit,
    fit_preset,
    load_anchors,
    parse_anchors,
    throughput_drop,
)
from .model import (
    PAGE_SIZES,
    LatencyBreakdown,
    MemoryRegionMeta,
    Nic,
    OneSidedOp,
    delivery_latency,
    one_sided_latency,
    predict_latency_ns,
    rpc_latency,
)

__all__ = [
    'CACHELINE_BYTES',
    'PAGE_SIZES',
    'QP_STATE_BYTES',
    'Anchor',
    'CacheOutcome',
    'FitResult',
    'LatencyBreakdown',
    'MemoryRegionMeta',
    'Nic',
    'NicCache',
    'NicConfig',
    'OneSidedOp',
    'PresetError',
    'StateKey',
    'StateKind',
    'UnderdeterminedFit',
    'delivery_latency',
    'fit_preset',
    'load_anchors',
    'load_preset',
    'one_sided_latency',
    'parse_anchors',
    'parse_preset',
    'predict_latency_ns',
    'rpc_latency',
    'shipped_presets',
    'throughput_drop',
]
