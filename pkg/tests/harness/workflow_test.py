# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
import io

import pytest
import sciline

from stormsim.harness import (
    EventLog,
    ExperimentRun,
    ExperimentWorkflow,
    PresetSource,
    ResultTable,
    Seed,
    Topology,
    TransactionTable,
    WorkloadParams,
    assign_parameter_values,
    build_workload,
    parse_rows,
    sweep,
)
from stormsim.workloads import WorkloadKind


def workflow(kind: WorkloadKind, **params: object) -> sciline.Pipeline:
    return assign_parameter_values(
        ExperimentWorkflow(),
        {
            PresetSource: PresetSource('cx4roce'),
            WorkloadParams: WorkloadParams(kind=kind, **params),
            Topology: Topology(n_nodes=2, coroutines_per_thread=4),
        },
    )


def test_assign_parameter_values_leaves_original_untouched() -> None:
    base = ExperimentWorkflow()
    changed = assign_parameter_values(base, {Seed: Seed(5)})
    assert changed.compute(Seed) == 5
    assert base.compute(Seed) == 0


def test_kv_run_gives_one_row() -> None:
    pipeline = workflow(WorkloadKind.KV_LOOKUPS, key_count=100, op_count=200)
    [row] = parse_rows(pipeline.compute(ResultTable))
    assert row.kind == 'kv_lookups'
    assert row.mode == 'storm'
    assert row.nodes == 2
    assert row.ops == 200
    assert row.read_only + row.read_then_rpc + row.rpc_only == 200
    assert row.bucket_sum == row.total_ns
    assert row.abort_rate == 0.0


def test_tatp_run_gives_transaction_table() -> None:
    pipeline = workflow(WorkloadKind.TATP_LITE, key_count=64, op_count=100)
    tables = pipeline.compute((ResultTable, TransactionTable))
    lines = tables[TransactionTable].splitlines()
    assert lines[0].startswith('schema,tx_id')
    assert 1 < len(lines) <= 101
    assert parse_rows(tables[ResultTable])[0].kind == 'tatp_lite'


def test_event_log_is_written_through_pipeline() -> None:
    sink = io.StringIO()
    pipeline = workflow(WorkloadKind.KV_LOOKUPS, key_count=10, op_count=10)
    pipeline[EventLog] = EventLog(sink)
    pipeline.compute(ResultTable)
    assert sink.getvalue().count('\n') > 10


def test_mirroring_gives_one_row_per_size() -> None:
    pipeline = workflow(
        WorkloadKind.SYNC_MIRRORING, op_count=40, message_cachelines=(1, 4)
    )
    rows = parse_rows(pipeline.compute(ResultTable))
    assert [r.size_bytes for r in rows] == [64, 256]
    assert sum(r.ops for r in rows) == 40
    for row in rows:
        assert row.throughput_per_machine == pytest.approx(
            1000 / row.total_ns, abs=1e-3
        )


def test_random_reads_give_one_row_per_connection_count() -> None:
    pipeline = workflow(
        WorkloadKind.RANDOM_READS, op_count=200, connections=(4, 8), depth=32
    )
    rows = parse_rows(pipeline.compute(ResultTable))
    assert [r.connections for r in rows] == [4, 8]
    assert all(r.cache_hit_rate is not None for r in rows)


def test_ud_break_even_gives_rc_and_ud_rows() -> None:
    pipeline = workflow(WorkloadKind.UD_BREAK_EVEN, op_count=200, depth=64)
    pipeline[Topology] = Topology(threads_per_node=2, virtual_nodes=(4,))
    rows = parse_rows(pipeline.compute(ResultTable))
    assert [(r.mode, r.connections) for r in rows] == [('rc', 16), ('ud', 2)]


@pytest.mark.parametrize(
    ('params', 'topology', 'message'),
    [
        (
            WorkloadParams(kind=WorkloadKind.EMULATION),
            Topology(),
            'needs virtual_nodes',
        ),
        (
            WorkloadParams(kind=WorkloadKind.SYNC_MIRRORING, op_count=0),
            Topology(),
            'positive op_count',
        ),
        (
            WorkloadParams(kind=WorkloadKind.RANDOM_READS, connections=()),
            Topology(),
            'at least one connection count',
        ),
        (WorkloadParams(depth=0), Topology(), 'depth'),
    ],
)
def test_build_workload_rejects_unrunnable_parameters(
    params: WorkloadParams, topology: Topology, message: str
) -> None:
    with pytest.raises(ValueError, match=message):
        build_workload(params, topology, Seed(0))


def test_build_workload_maps_message_sizes() -> None:
    params = WorkloadParams(
        kind=WorkloadKind.SYNC_MIRRORING, message_cachelines=(2, 2, 8)
    )
    spec = build_workload(params, Topology(), Seed(3))
    assert spec.sizes.histogram == {2: 0.5, 8: 0.5}
    assert spec.seed == 3


def test_sweep_over_message_sizes() -> None:
    pipeline = workflow(WorkloadKind.SYNC_MIRRORING, op_count=20)
    run = sweep(pipeline, 'msg_size', [1, 2, 4])
    assert [r.size_bytes for r in run.rows] == [64, 128, 256]
    assert run.violations == []
    assert run.transactions == []


def test_sweep_over_nodes_changes_cluster_size() -> None:
    pipeline = workflow(WorkloadKind.KV_LOOKUPS, key_count=60, op_count=60)
    run = sweep(pipeline, 'nodes', [2, 3])
    assert [r.nodes for r in run.rows] == [2, 3]
    assert isinstance(run, ExperimentRun)


@pytest.mark.parametrize(
    ('axis', 'values', 'message'),
    [('msg_size', [], 'at least one value'), ('depth', [1], "Unknown sweep axis")],
)
def test_sweep_rejects_bad_axis_and_values(
    axis: str, values: list[int], message: str
) -> None:
    pipeline = workflow(WorkloadKind.SYNC_MIRRORING, op_count=20)
    with pytest.raises(ValueError, match=message):
        sweep(pipeline, axis, values)
