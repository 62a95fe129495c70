# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
import pytest

from stormsim.dataplane import LookupMode, ReadPath
from stormsim.nic import load_preset
from stormsim.oracle import check_serializability
from stormsim.txengine import CommitOrdering
from stormsim.workloads import (
    OpMix,
    StormExperiment,
    TableOptions,
    WorkloadKind,
    WorkloadSpec,
    bumped,
    initial_value,
    path_counts,
    run_workload,
)


def kv_spec(**kwargs: object) -> WorkloadSpec:
    fields = {
        'kind': WorkloadKind.KV_LOOKUPS,
        'n_nodes': 2,
        'coroutines_per_thread': 4,
        'key_count': 64,
        'op_count': 400,
    } | kwargs
    return WorkloadSpec(**fields)


def tatp_spec(**kwargs: object) -> WorkloadSpec:
    fields = {
        'kind': WorkloadKind.TATP_LITE,
        'n_nodes': 4,
        'coroutines_per_thread': 8,
        'key_count': 64,
        'op_count': 1000,
        'mix': OpMix.tatp(),
    } | kwargs
    return WorkloadSpec(**fields)


def test_initial_value_repeats_key() -> None:
    value = initial_value(3, 20)
    assert len(value) == 20
    assert value[:8] == (3).to_bytes(8, 'little')
    assert bumped(value)[:8] == (4).to_bytes(8, 'little')
    assert bumped(value)[8:] == value[8:]


def test_lookups_return_stored_values() -> None:
    result = run_workload(load_preset('cx4roce'), kv_spec())
    assert result.completed == 400
    assert result.lost == 0
    assert result.wrong_values == 0
    assert result.stats.accounting_errors() == []
    assert result.throughput_per_machine > 0
    assert result.connections == 4
    mean = result.mean_breakdown()
    assert mean.total == round(sum(result.latencies_ns) / len(result.latencies_ns))


@pytest.mark.parametrize(
    ('mode', 'path'),
    [(LookupMode.RPC_ONLY, 'rpc_only'), (LookupMode.PERFECT, 'read_only')],
)
def test_lookup_modes_take_a_single_path(mode: LookupMode, path: str) -> None:
    result = run_workload(load_preset('cx4roce'), kv_spec(), mode=mode)
    counts = path_counts(result.stats)
    assert counts[path] == 400
    assert sum(counts.values()) == 400
    assert result.wrong_values == 0


def test_farm_mode_reads_whole_buckets() -> None:
    table = TableOptions(bucket_width=8, target_occupancy=0.6)
    result = run_workload(
        load_preset('cx4roce'), kv_spec(), mode=LookupMode.FARM, table=table
    )
    assert result.wrong_values == 0
    assert path_counts(result.stats)['read_only'] > 300


def test_chained_reads_replace_some_rpcs() -> None:
    spec = kv_spec(key_count=256, op_count=256)
    table = TableOptions(target_occupancy=1.0)
    one = run_workload(load_preset('cx4roce'), spec, table=table)
    many = run_workload(
        load_preset('cx4roce'), spec, table=table, rr_fallback_after=4
    )
    assert many.stats.lookup_rpcs < one.stats.lookup_rpcs
    assert many.stats.chained_reads > 0
    assert many.stats.accounting_errors() == []
    assert many.wrong_values == 0


def test_equal_seeds_give_equal_results() -> None:
    a = run_workload(load_preset('cx4roce'), tatp_spec(op_count=200, seed=7))
    b = run_workload(load_preset('cx4roce'), tatp_spec(op_count=200, seed=7))
    assert a.latencies_ns == b.latencies_ns
    assert a.trace == b.trace
    assert a.elapsed_ns == b.elapsed_ns


def test_microbenchmark_kinds_do_not_run_on_a_cluster() -> None:
    spec = WorkloadSpec(kind=WorkloadKind.RANDOM_READS)
    with pytest.raises(ValueError, match='does not run on a Storm cluster'):
        StormExperiment(load_preset('cx4roce'), spec)


def test_locking_at_commit_is_rejected() -> None:
    with pytest.raises(NotImplementedError):
        run_workload(
            load_preset('cx4roce'),
            tatp_spec(op_count=10),
            ordering=CommitOrdering.LOCK_AT_COMMIT,
        )


def test_stale_addresses_keep_accounting_exact() -> None:
    experiment = StormExperiment(
        load_preset('cx4roce'), kv_spec(op_count=2000, seed=3)
    )
    experiment.schedule_relocations(2000)
    result = experiment.run()
    stats = result.stats
    assert experiment.relocations > 0
    assert stats.paths[ReadPath.READ_THEN_RPC] > 0
    assert stats.lookup_reads == (
        stats.paths[ReadPath.READ_ONLY] + stats.paths[ReadPath.READ_THEN_RPC]
    )
    assert stats.lookup_rpcs == (
        stats.paths[ReadPath.RPC_ONLY] + stats.paths[ReadPath.READ_THEN_RPC]
    )
    assert result.wrong_values == 0
    assert experiment.table.integrity_errors() == []


def test_relocation_interval_must_be_positive() -> None:
    experiment = StormExperiment(load_preset('cx4roce'), kv_spec(op_count=1))
    with pytest.raises(ValueError, match='interval_ns'):
        experiment.schedule_relocations(0)


def check_tatp(seed: int) -> None:
    experiment = StormExperiment(load_preset('cx4roce'), tatp_spec(seed=seed))
    result = experiment.run()
    table = experiment.table
    assert result.lost == 0
    assert result.completed + result.aborted == 1000
    report = check_serializability(
        result.trace,
        experiment.initial,
        table.snapshot(),
        journals=[p.journal for p in table.partitions],
        locked_keys=table.locked_keys(),
    )
    assert report.ok, report.errors
    assert report.committed > 0


def test_tatp_run_is_serializable() -> None:
    check_tatp(seed=1)


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(20))
def test_tatp_runs_are_serializable_across_seeds(seed: int) -> None:
    check_tatp(seed)


@pytest.mark.slow
def test_one_sided_lookups_beat_rpcs() -> None:
    spec = kv_spec(
        n_nodes=8, coroutines_per_thread=8, key_count=2000, op_count=16_000, seed=1
    )
    table = TableOptions(bucket_width=1, target_occupancy=0.6)
    storm = run_workload(load_preset('cx4roce'), spec, table=table)
    rpc = run_workload(
        load_preset('cx4roce'), spec, table=table, mode=LookupMode.RPC_ONLY
    )
    assert storm.wrong_values == rpc.wrong_values == 0
    ratio = storm.throughput_per_machine / rpc.throughput_per_machine
    assert ratio >= 1.3


@pytest.mark.slow
def test_one_sided_lookups_speed_up_transactions() -> None:
    spec = tatp_spec(key_count=1000, op_count=8000, seed=1)
    storm = run_workload(load_preset('cx4roce'), spec)
    rpc = run_workload(load_preset('cx4roce'), spec, mode=LookupMode.RPC_ONLY)
    ratio = storm.throughput_per_machine / rpc.throughput_per_machine
    assert ratio >= 1.15
