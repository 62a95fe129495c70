# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Experiment pipeline: preset, workload, run, invariant gate and CSV tables."""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence
from typing import Any

import numpy as np
import sciline
import scipp as sc
from sciline.typing import Key

from ..logging import get_logger
from ..nic import LatencyBreakdown, load_preset
from ..verbs import sibling_connection_count
from ..workloads import (
    BUCKETS,
    LOOKUP_READ_BYTES,
    READ_PAYLOAD_BYTES,
    MessageSizeDistribution,
    OpMix,
    StormExperiment,
    TableOptions,
    WorkloadKind,
    WorkloadSpec,
    emulate_cluster,
    path_counts,
    run_random_reads,
    run_sync_mirroring,
    ud_break_even,
)
from .invariants import enforce, storm_violations
from .results import format_rows, format_transactions
from .types import (
    EventLog,
    ExperimentId,
    ExperimentRun,
    LookupSettings,
    NicPreset,
    PresetSource,
    ResultRow,
    ResultTable,
    Seed,
    Topology,
    TransactionTable,
    Workload,
    WorkloadParams,
)

SWEEP_AXES = ('msg_size', 'connections', 'nodes')
_STORM_KINDS = (WorkloadKind.KV_LOOKUPS, WorkloadKind.TATP_LITE)
_CLUSTER_KINDS = (WorkloadKind.EMULATION, WorkloadKind.UD_BREAK_EVEN)
# Request and reply headers of a one-way benchmark message.
_MESSAGE_BYTES = 64


def load_nic_preset(source: PresetSource) -> NicPreset:
    return NicPreset(load_preset(source))


def build_workload(params: WorkloadParams, topology: Topology, seed: Seed) -> Workload:
    """Workload spec of an experiment.

    Raises
    ------
    ValueError
        If the parameters do not describe a runnable workload.
    """
    if params.kind not in _STORM_KINDS and params.op_count < 1:
        raise ValueError(f"{params.kind.name} needs a positive op_count.")
    if params.kind in _CLUSTER_KINDS and not topology.virtual_nodes:
        raise ValueError(f"{params.kind.name} needs virtual_nodes.")
    if params.kind is WorkloadKind.RANDOM_READS and not params.connections:
        raise ValueError("RANDOM_READS needs at least one connection count.")
    if params.depth < 1:
        raise ValueError("depth must be positive.")
    if params.message_cachelines:
        unique = tuple(dict.fromkeys(params.message_cachelines))
        sizes = MessageSizeDistribution({c: 1 / len(unique) for c in unique})
    else:
        sizes = MessageSizeDistribution()
    mix = OpMix.tatp() if params.kind is WorkloadKind.TATP_LITE else OpMix()
    return Workload(
        WorkloadSpec(
            kind=params.kind,
            n_nodes=topology.n_nodes,
            threads_per_node=topology.threads_per_node,
            coroutines_per_thread=topology.coroutines_per_thread,
            key_count=params.key_count,
            key_distribution=params.key_distribution,
            zipf_theta=params.zipf_theta,
            op_count=params.op_count,
            seed=seed,
            mix=mix,
            sizes=sizes,
        )
    )


def _bucket_columns(breakdown: LatencyBreakdown) -> dict[str, int]:
    return {
        **{name: getattr(breakdown, name) for name in BUCKETS},
        'total_ns': breakdown.total,
    }


def _curve_breakdown(curve: sc.DataArray, index: int) -> LatencyBreakdown:
    return LatencyBreakdown(
        **{name: int(curve.coords[name].values[index]) for name in BUCKETS}
    )


def _run_storm(
    experiment_id: ExperimentId,
    preset: NicPreset,
    workload: Workload,
    lookup: LookupSettings,
    table: TableOptions,
    log: EventLog,
) -> ExperimentRun:
    experiment = StormExperiment(
        preset,
        workload,
        mode=lookup.mode,
        rr_fallback_after=lookup.rr_fallback_after,
        table=table,
        ordering=lookup.commit_ordering,
        event_log=log.sink,
    )
    result = experiment.run()
    row = ResultRow(
        experiment=experiment_id,
        kind=result.kind.name.lower(),
        mode=result.mode.name.lower(),
        nodes=result.n_nodes,
        connections=result.connections,
        size_bytes=experiment.table.layout.slot_bytes,
        ops=result.ops,
        throughput_per_machine=result.throughput_per_machine,
        p50_ns=result.latency_percentile(50),
        p99_ns=result.latency_percentile(99),
        abort_rate=result.abort_rate,
        cache_hit_rate=result.cache_hit_rate,
        **path_counts(result.stats),
        **_bucket_columns(result.mean_breakdown()),
    )
    return ExperimentRun(
        rows=[row],
        transactions=result.trace,
        violations=storm_violations(experiment, result),
    )


def _run_mirroring(
    experiment_id: ExperimentId, preset: NicPreset, workload: Workload, log: EventLog
) -> ExperimentRun:
    records = run_sync_mirroring(
        preset,
        workload.sizes,
        n_messages=workload.op_count,
        seed=workload.seed,
        event_log=log.sink,
    )
    by_size: dict[int, list[LatencyBreakdown]] = {}
    for record in records:
        by_size.setdefault(record.size_bytes, []).append(record.breakdown)
    rows = []
    for size, breakdowns in sorted(by_size.items()):
        summed = LatencyBreakdown()
        for breakdown in breakdowns:
            summed += breakdown
        mean = summed.mean(len(breakdowns))
        latencies = [b.total for b in breakdowns]
        rows.append(
            ResultRow(
                experiment=experiment_id,
                kind=workload.kind.name.lower(),
                nodes=2,
                connections=1,
                size_bytes=size,
                ops=len(breakdowns),
                throughput_per_machine=1000.0 / mean.total,
                p50_ns=float(np.percentile(latencies, 50)),
                p99_ns=float(np.percentile(latencies, 99)),
                **_bucket_columns(mean),
            )
        )
    if len(records) != workload.op_count:
        lost = workload.op_count - len(records)
        return ExperimentRun(rows=rows, violations=[f"{lost} mirrored writes lost."])
    return ExperimentRun(rows=rows)


def _run_random_reads(
    experiment_id: ExperimentId,
    preset: NicPreset,
    workload: Workload,
    params: WorkloadParams,
    log: EventLog,
) -> ExperimentRun:
    curve = run_random_reads(
        preset,
        params.connections,
        reads_per_point=workload.op_count,
        window=params.depth,
        seed=workload.seed,
        event_log=log.sink,
    )
    rows = [
        ResultRow(
            experiment=experiment_id,
            kind=workload.kind.name.lower(),
            nodes=2,
            connections=int(c),
            size_bytes=READ_PAYLOAD_BYTES,
            ops=workload.op_count,
            throughput_per_machine=float(curve.values[i]),
            cache_hit_rate=float(curve.coords['hit_rate'].values[i]),
            **_bucket_columns(_curve_breakdown(curve, i)),
        )
        for i, c in enumerate(curve.coords['connections'].values)
    ]
    return ExperimentRun(rows=rows)


def _run_emulation(
    experiment_id: ExperimentId,
    preset: NicPreset,
    workload: Workload,
    params: WorkloadParams,
    topology: Topology,
    log: EventLog,
) -> ExperimentRun:
    curve = emulate_cluster(
        preset,
        topology.virtual_nodes,
        threads_per_node=topology.threads_per_node,
        coroutines_per_thread=topology.coroutines_per_thread,
        reads_per_point=workload.op_count,
        window=params.depth,
        seed=workload.seed,
        event_log=log.sink,
    )
    rows = [
        ResultRow(
            experiment=experiment_id,
            kind=workload.kind.name.lower(),
            nodes=int(m),
            connections=int(curve.coords['connections'].values[i]),
            size_bytes=LOOKUP_READ_BYTES,
            ops=workload.op_count,
            throughput_per_machine=float(curve.values[i]),
            **_bucket_columns(_curve_breakdown(curve, i)),
        )
        for i, m in enumerate(curve.coords['nodes'].values)
    ]
    return ExperimentRun(rows=rows)


def _run_ud_break_even(
    experiment_id: ExperimentId,
    preset: NicPreset,
    workload: Workload,
    params: WorkloadParams,
    topology: Topology,
    log: EventLog,
) -> ExperimentRun:
    t = topology.threads_per_node
    result = ud_break_even(
        preset,
        topology.virtual_nodes,
        threads_per_node=t,
        messages_per_point=workload.op_count,
        window=params.depth,
        message_bytes=_MESSAGE_BYTES,
        seed=workload.seed,
        event_log=log.sink,
    )
    rows = []
    for i, m in enumerate(result.coords['nodes'].values):
        for transport, connections in (
            ('rc', sibling_connection_count(int(m), t)),
            ('ud', t),
        ):
            rows.append(
                ResultRow(
                    experiment=experiment_id,
                    kind=workload.kind.name.lower(),
                    mode=transport,
                    nodes=int(m),
                    connections=connections,
                    size_bytes=_MESSAGE_BYTES,
                    ops=workload.op_count,
                    throughput_per_machine=float(result[transport].values[i]),
                )
            )
    return ExperimentRun(rows=rows)


def run_experiment(
    experiment_id: ExperimentId,
    preset: NicPreset,
    workload: Workload,
    params: WorkloadParams,
    topology: Topology,
    lookup: LookupSettings,
    table: TableOptions,
    log: EventLog,
) -> ExperimentRun:
    """Run the experiment described by the pipeline parameters."""
    get_logger().info(
        "Running experiment '%s' (%s) on preset %s",
        experiment_id,
        workload.kind.name,
        preset.name,
    )
    match workload.kind:
        case WorkloadKind.KV_LOOKUPS | WorkloadKind.TATP_LITE:
            return _run_storm(experiment_id, preset, workload, lookup, table, log)
        case WorkloadKind.SYNC_MIRRORING:
            return _run_mirroring(experiment_id, preset, workload, log)
        case WorkloadKind.RANDOM_READS:
            return _run_random_reads(experiment_id, preset, workload, params, log)
        case WorkloadKind.EMULATION:
            return _run_emulation(
                experiment_id, preset, workload, params, topology, log
            )
        case WorkloadKind.UD_BREAK_EVEN:
            return _run_ud_break_even(
                experiment_id, preset, workload, params, topology, log
            )
    raise ValueError(f"Unknown workload kind {workload.kind}.")


def result_table(run: ExperimentRun) -> ResultTable:
    """Result CSV of a run whose invariants all hold."""
    enforce(run)
    return ResultTable(format_rows(run.rows))


def transaction_table(run: ExperimentRun) -> TransactionTable:
    enforce(run)
    return TransactionTable(format_transactions(run.transactions))


providers = (
    load_nic_preset,
    build_workload,
    run_experiment,
    result_table,
    transaction_table,
)


def ExperimentWorkflow() -> sciline.Pipeline:
    """Pipeline computing result tables from experiment parameters.

    Every parameter except :class:`PresetSource` has a default.
    """
    wf = sciline.Pipeline(providers)
    wf[ExperimentId] = ExperimentId('experiment')
    wf[Seed] = Seed(0)
    wf[Topology] = Topology()
    wf[LookupSettings] = LookupSettings()
    wf[TableOptions] = TableOptions()
    wf[WorkloadParams] = WorkloadParams()
    wf[EventLog] = EventLog()
    return wf


def assign_parameter_values(
    pipeline: sciline.Pipeline, values: dict[Key, Any]
) -> sciline.Pipeline:
    """Copy of ``pipeline`` with the given parameters set."""
    pipeline = pipeline.copy()
    for key, value in values.items():
        pipeline[key] = value
    return pipeline


def sweep_values(pipeline: sciline.Pipeline, axis: str, value: int) -> dict[Key, Any]:
    """Parameters replaced to run the point ``value`` of a sweep along ``axis``."""
    params = pipeline.compute(WorkloadParams)
    topology = pipeline.compute(Topology)
    match axis:
        case 'msg_size':
            return {
                WorkloadParams: dataclasses.replace(params, message_cachelines=(value,))
            }
        case 'connections':
            return {WorkloadParams: dataclasses.replace(params, connections=(value,))}
        case 'nodes' if params.kind in _CLUSTER_KINDS:
            return {Topology: dataclasses.replace(topology, virtual_nodes=(value,))}
        case 'nodes':
            return {Topology: dataclasses.replace(topology, n_nodes=value)}
    raise ValueError(f"Unknown sweep axis '{axis}', expected one of {SWEEP_AXES}.")


def sweep(
    pipeline: sciline.Pipeline, axis: str, values: Sequence[int]
) -> ExperimentRun:
    """Run one experiment per value of ``axis`` and collect the result rows.

    Transaction traces are not collected.

    Raises
    ------
    ValueError
        If ``values`` is empty or ``axis`` is unknown.
    """
    if not values:
        raise ValueError("A sweep needs at least one value.")
    if axis not in SWEEP_AXES:
        raise ValueError(f"Unknown sweep axis '{axis}', expected one of {SWEEP_AXES}.")
    combined = ExperimentRun()
    for value in values:
        point = assign_parameter_values(pipeline, sweep_values(pipeline, axis, value))
        run = point.compute(ExperimentRun)
        combined.rows.extend(run.rows)
        combined.violations.extend(run.violations)
        get_logger().info("Sweep point %s=%d done", axis, value)
    return combined
