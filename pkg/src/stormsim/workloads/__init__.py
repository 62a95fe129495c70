# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Workload generators, microbenchmarks and Storm experiments."""

from .microbench import (
    BUCKETS,
    LOOKUP_READ_BYTES,
    READ_PAYLOAD_BYTES,
    MirroredWrite,
    break_even_nodes,
    emulate_cluster,
    mirroring_summary,
    run_random_reads,
    run_sync_mirroring,
    steady_throughput,
    throughput_drop,
    ud_break_even,
)
from .spec import (
    KeySampler,
    MessageSizeDistribution,
    Op,
    OpKind,
    OpMix,
    OpStream,
    WorkloadKind,
    WorkloadSpec,
    generate,
)
from .storm import (
    TABLE_ID,
    StormExperiment,
    TableOptions,
    WorkloadResult,
    bumped,
    initial_value,
    path_counts,
    run_workload,
)

__all__ = [
    'BUCKETS',
    'LOOKUP_READ_BYTES',
    'READ_PAYLOAD_BYTES',
    'TABLE_ID',
    'KeySampler',
    'MessageSizeDistribution',
    'MirroredWrite',
    'Op',
    'OpKind',
    'OpMix',
    'OpStream',
    'StormExperiment',
    'TableOptions',
    'WorkloadKind',
    'WorkloadResult',
    'WorkloadSpec',
    'break_even_nodes',
    'bumped',
    'emulate_cluster',
    'generate',
    'initial_value',
    'mirroring_summary',
    'path_counts',
    'run_random_reads',
    'run_sync_mirroring',
    'run_workload',
    'steady_throughput',
    'throughput_drop',
    'ud_break_even',
]
