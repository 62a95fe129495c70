# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
import numpy as np
import pytest
import scipp as sc
from scipp.testing import assert_allclose, assert_identical

from stormsim.nic import NicConfig, fit_preset, load_anchors, load_preset
from stormsim.workloads import (
    BUCKETS,
    MessageSizeDistribution,
    break_even_nodes,
    emulate_cluster,
    mirroring_summary,
    run_random_reads,
    run_sync_mirroring,
    steady_throughput,
    throughput_drop,
    ud_break_even,
)


def curve(dim: str, points: list[int], values: list[float]) -> sc.DataArray:
    return sc.DataArray(
        sc.array(dims=[dim], values=values, unit='1/us'),
        coords={dim: sc.array(dims=[dim], values=points, unit=None)},
    )


def test_steady_throughput_skips_first_third() -> None:
    assert steady_throughput([100 * i for i in range(10)]) == 10.0
    assert steady_throughput([900, 0, 100, 200, 300, 400, 500, 600, 700, 800]) == 10.0


def test_steady_throughput_needs_completions() -> None:
    with pytest.raises(ValueError, match='Too few completions'):
        steady_throughput([5, 5, 5])


def test_throughput_drop_between_curve_points() -> None:
    c = curve('connections', [8, 16, 64], [10.0, 9.0, 4.0])
    assert throughput_drop(c, 8, 64) == pytest.approx(0.6)
    with pytest.raises(KeyError, match='no point 8 or 32'):
        throughput_drop(c, 8, 32)


def test_random_reads_curve_has_hit_rate_and_buckets() -> None:
    result = run_random_reads(load_preset('cx3'), [2, 64], reads_per_point=600)
    assert result.dims == ('connections',)
    assert result.unit == sc.Unit('1/us')
    assert list(result.coords['connections'].values) == [2, 64]
    hit_rate = result.coords['hit_rate'].values
    assert hit_rate[0] > hit_rate[1]
    for name in BUCKETS:
        assert result.coords[name].unit == sc.Unit('ns')
    assert np.all(result.values > 0)


def test_random_reads_are_deterministic() -> None:
    config = load_preset('cx5')
    a = run_random_reads(config, [4], reads_per_point=300, seed=5)
    b = run_random_reads(config, [4], reads_per_point=300, seed=5)
    assert_identical(a, b)


@pytest.mark.parametrize(
    ('kwargs', 'message'),
    [
        ({'connections': []}, 'Connection counts'),
        ({'connections': [0]}, 'Connection counts'),
        ({'connections': [1], 'regions': 0}, 'regions'),
    ],
)
def test_random_reads_validate_arguments(
    kwargs: dict[str, object], message: str
) -> None:
    with pytest.raises(ValueError, match=message):
        run_random_reads(NicConfig(), **kwargs)


def test_mirroring_records_every_message() -> None:
    records = run_sync_mirroring(load_preset('cx4ib'), n_messages=200, seed=2)
    assert len(records) == 200
    assert all(r.latency_ns == r.breakdown.total > 0 for r in records)
    summary = mirroring_summary(records)
    assert summary.dims == ('cachelines',)
    assert int(summary['count'].sum().value) == 200
    buckets = [summary[name].data for name in BUCKETS]
    assert_allclose(summary['total'].data, sum(buckets[1:], buckets[0]))


def test_mirroring_needs_messages() -> None:
    with pytest.raises(ValueError, match='n_messages'):
        run_sync_mirroring(NicConfig(), n_messages=0)
    with pytest.raises(ValueError, match='No mirrored writes'):
        mirroring_summary([])


def test_emulation_scales_connections_and_buffers() -> None:
    result = emulate_cluster(
        load_preset('cx4ib'), [2, 8], threads_per_node=1, reads_per_point=600
    )
    connections = result.coords['connections'].values
    assert list(connections) == [4, 16]
    buffers = result.coords['buffer_bytes'].values
    assert buffers[1] > 3 * buffers[0]


def test_emulation_needs_two_nodes() -> None:
    with pytest.raises(ValueError, match='at least the two simulated nodes'):
        emulate_cluster(NicConfig(), [1], threads_per_node=1)


def test_break_even_is_first_node_count_where_ud_wins() -> None:
    nodes = [8, 32, 64]
    result = sc.Dataset(
        {
            'rc': curve('nodes', nodes, [9.0, 8.0, 5.0]),
            'ud': curve('nodes', nodes, [6.0, 6.0, 6.0]),
        }
    )
    assert break_even_nodes(result) == 64
    result = sc.Dataset(
        {
            'rc': curve('nodes', nodes, [9.0, 8.0, 5.0]),
            'ud': curve('nodes', nodes, [1.0, 1.0, 1.0]),
        }
    )
    assert break_even_nodes(result) is None


def test_ud_break_even_validates_node_counts() -> None:
    with pytest.raises(ValueError, match='Node counts'):
        ud_break_even(NicConfig(), [], threads_per_node=1)


@pytest.fixture(scope='module')
def fitted_ib() -> NicConfig:
    return fit_preset(load_anchors('ib'), load_preset('cx4ib')).config


@pytest.mark.slow
def test_pcie_dominates_small_mirrored_writes(fitted_ib: NicConfig) -> None:
    shares = []
    for cachelines in (1, 16, 256):
        records = run_sync_mirroring(
            fitted_ib, MessageSizeDistribution.fixed(cachelines), n_messages=200
        )
        summary = mirroring_summary(records)
        shares.append(float(summary['pcie_share'].values[0]))
    assert 0.55 <= shares[0] <= 0.75
    assert shares == sorted(shares, reverse=True)
    assert len(set(shares)) == 3


@pytest.fixture(scope='module')
def drops() -> dict[str, float]:
    return {
        name: throughput_drop(
            run_random_reads(load_preset(name), [8, 64], reads_per_point=3000), 8, 64
        )
        for name in ('cx3', 'cx4roce', 'cx5')
    }


@pytest.mark.slow
@pytest.mark.parametrize(
    ('name', 'low', 'high'),
    [('cx3', 0.70, 0.90), ('cx4roce', 0.32, 0.52), ('cx5', 0.22, 0.42)],
)
def test_connection_scaling_drop_bands(
    drops: dict[str, float], name: str, low: float, high: float
) -> None:
    assert low <= drops[name] <= high


@pytest.mark.slow
def test_older_nics_drop_more(drops: dict[str, float]) -> None:
    assert drops['cx3'] > drops['cx4roce'] > drops['cx5']


@pytest.mark.slow
def test_throughput_plateaus_once_connection_state_thrashes() -> None:
    result = run_random_reads(load_preset('cx5'), [128, 256, 512], reads_per_point=3000)
    t = result.values
    for previous, current in zip(t[:-1], t[1:], strict=True):
        assert abs(current - previous) / previous < 0.05


@pytest.mark.slow
def test_emulated_throughput_drops_with_cluster_size() -> None:
    result = emulate_cluster(load_preset('cx4ib'), [32, 96], threads_per_node=20)
    ratio = result.values[0] / result.values[1]
    assert 1.3 <= ratio <= 1.9
    connections = result.coords['connections'].values
    assert connections[1] == 3 * connections[0]


@pytest.mark.slow
def test_emulated_throughput_is_stable_with_fewer_threads() -> None:
    result = emulate_cluster(load_preset('cx4ib'), [32, 128], threads_per_node=10)
    assert result.values[0] / result.values[1] <= 1.1


@pytest.mark.slow
def test_ud_overtakes_rc_at_large_scale() -> None:
    result = ud_break_even(load_preset('cx4ib'), [8, 128], threads_per_node=20)
    rc = result['rc'].values
    ud = result['ud'].values
    assert rc[0] > ud[0]
    assert ud[1] >= rc[1]
    assert break_even_nodes(result) == 128
