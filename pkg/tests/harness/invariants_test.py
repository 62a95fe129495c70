# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
import pytest

from stormsim.harness import (
    ExperimentRun,
    InvariantViolation,
    ResultRow,
    enforce,
    storm_violations,
)
from stormsim.nic import load_preset
from stormsim.workloads import StormExperiment, WorkloadKind, WorkloadSpec


def row(total_ns: int) -> ResultRow:
    return ResultRow(
        experiment='e',
        kind='random_reads',
        nodes=2,
        connections=8,
        size_bytes=64,
        ops=1,
        throughput_per_machine=1.0,
        pcie_const=600,
        net_const=400,
        total_ns=total_ns,
    )


def test_consistent_run_passes() -> None:
    enforce(ExperimentRun(rows=[row(1000)]))


def test_all_violations_are_collected() -> None:
    run = ExperimentRun(rows=[row(999)], violations=['3 operations lost.'])
    with pytest.raises(InvariantViolation) as info:
        enforce(run)
    assert info.value.violations[0] == '3 operations lost.'
    assert 'sum to 1000, not 999' in info.value.violations[1]
    assert str(info.value).startswith('2 invariant violation(s):')


def test_finished_storm_run_has_no_violations() -> None:
    spec = WorkloadSpec(
        kind=WorkloadKind.TATP_LITE,
        n_nodes=2,
        coroutines_per_thread=4,
        key_count=32,
        op_count=100,
    )
    experiment = StormExperiment(load_preset('cx4roce'), spec)
    result = experiment.run()
    assert storm_violations(experiment, result) == []


def test_leaked_locks_are_violations() -> None:
    spec = WorkloadSpec(kind=WorkloadKind.KV_LOOKUPS, key_count=16, op_count=10)
    experiment = StormExperiment(load_preset('cx4roce'), spec)
    result = experiment.run()
    experiment.table.partitions[experiment.table.home_node(1)].lock_read(1, tx_id=9)
    assert storm_violations(experiment, result) == ['Locks leaked on keys [1].']


def test_lost_operations_are_violations() -> None:
    spec = WorkloadSpec(kind=WorkloadKind.KV_LOOKUPS, key_count=16, op_count=10)
    experiment = StormExperiment(load_preset('cx4roce'), spec)
    result = experiment.run()
    result.ops += 2
    assert storm_violations(experiment, result) == [
        '2 operations neither completed nor aborted.'
    ]
