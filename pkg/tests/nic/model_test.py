# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
import dataclasses

import pytest

from stormsim.nic import (
    QP_STATE_BYTES,
    CacheOutcome,
    LatencyBreakdown,
    Nic,
    NicConfig,
    OneSidedOp,
    load_preset,
    one_sided_latency,
    predict_latency_ns,
    rpc_latency,
)
from stormsim.nic.model import MemoryRegionMeta


def test_breakdown_total_and_shares() -> None:
    b = LatencyBreakdown(pcie_const=600, pcie_var=100, net_const=200, net_var=100)
    assert b.total == 1000
    assert b.pcie_share == 0.7
    assert b.variable_share == 0.2
    assert (b + b).total == 2000


def test_empty_breakdown_has_zero_shares() -> None:
    assert LatencyBreakdown().pcie_share == 0.0
    assert LatencyBreakdown().variable_share == 0.0


def test_mean_buckets_add_up_to_rounded_mean_total() -> None:
    summed = LatencyBreakdown(pcie_const=1, pcie_var=1, net_const=1, net_var=1)
    mean = summed.mean(3)
    assert mean.total == round(4 / 3)
    assert mean.pcie_const == 0


def test_mean_of_no_operations_raises() -> None:
    with pytest.raises(ValueError, match='positive'):
        LatencyBreakdown().mean(0)


def test_with_total_absorbs_difference_in_constant_network_part() -> None:
    b = LatencyBreakdown(pcie_const=10, pcie_var=5, net_const=20, net_var=5)
    adjusted = b.with_total(100)
    assert adjusted.total == 100
    assert adjusted.net_const == 80
    assert adjusted.pcie_const == b.pcie_const


def test_unloaded_ib_read_of_one_cacheline() -> None:
    latency = one_sided_latency(load_preset('cx4ib'), OneSidedOp.READ, 64)
    assert latency == LatencyBreakdown(
        pcie_const=1150, pcie_var=10, net_const=634, net_var=6
    )
    assert latency.total == 1800


def test_unloaded_ib_rpc_of_one_cacheline() -> None:
    assert rpc_latency(load_preset('cx4ib'), 64).total == 2700


def test_misses_add_to_constant_network_part() -> None:
    config = load_preset('cx4ib')
    hit = one_sided_latency(config, OneSidedOp.WRITE, 64)
    outcomes = [CacheOutcome.MISS] + [CacheOutcome.HIT] * 5
    miss = one_sided_latency(config, OneSidedOp.WRITE, 64, 1, outcomes)
    assert miss.net_const - hit.net_const == 440
    assert miss.pcie_const == hit.pcie_const


def test_outcome_count_must_match_lookups() -> None:
    with pytest.raises(ValueError, match='Expected 8 cache outcomes'):
        one_sided_latency(NicConfig(), OneSidedOp.READ, 64, 2, [CacheOutcome.HIT])


def test_larger_messages_have_larger_variable_share() -> None:
    config = load_preset('cx4ib')
    small = one_sided_latency(config, OneSidedOp.WRITE, 64)
    large = one_sided_latency(config, OneSidedOp.WRITE, 256 * 64)
    assert large.variable_share > small.variable_share
    assert large.pcie_share < small.pcie_share


def test_predicted_latency_matches_breakdown_for_reads() -> None:
    config = load_preset('cx4roce')
    params = {k: float(v) for k, v in vars_of(config).items()}
    predicted = predict_latency_ns(params, 'read', 1024)
    assert predicted == pytest.approx(
        one_sided_latency(config, OneSidedOp.READ, 1024).total, abs=1
    )


def test_farm_lookup_reads_a_whole_neighborhood() -> None:
    params = vars_of(load_preset('cx4ib'))
    assert predict_latency_ns(params, 'farm', 64) == predict_latency_ns(
        params, 'read', 512
    )
    assert predict_latency_ns(params, 'farm', 64) == pytest.approx(2100, rel=0.1)


def test_kernel_crossings_and_reposts_slow_rpcs_down() -> None:
    params = vars_of(load_preset('cx4ib'))
    rpc = predict_latency_ns(params, 'rpc', 64)
    assert predict_latency_ns(params, 'ud_rpc', 64) == rpc + 300
    assert predict_latency_ns(params, 'lite', 64) == rpc + 3100


def test_unknown_operation_kind_raises() -> None:
    with pytest.raises(ValueError, match="Unknown operation kind 'cas'"):
        predict_latency_ns(vars_of(NicConfig()), 'cas', 64)


def vars_of(config: NicConfig) -> dict[str, float]:
    return {
        f.name: float(getattr(config, f.name))
        for f in dataclasses.fields(config)
        if f.name != 'name'
    }


def test_mtt_lookups_are_charged_per_touched_page() -> None:
    region = MemoryRegionMeta(0, 0, 1 << 20, 4096, False, 256, 1)
    assert region.pages_touched(4000, 200) == 2
    assert region.pages_touched(0, 4096) == 1
    assert region.pages_touched(0, 4097) == 2


def test_physical_segment_needs_one_mtt_and_one_mpt_entry() -> None:
    nic = Nic(0, NicConfig())
    region = nic.register_region(0, 2**30, 4096, is_physical_segment=True)
    assert (region.mtt_entry_count, region.mpt_entry_count) == (1, 1)
    assert region.pages_touched(123456, 1 << 20) == 1


def test_paged_region_needs_one_mtt_entry_per_page() -> None:
    nic = Nic(0, NicConfig())
    nic.register_region(0, 2**30, 4096)
    assert nic.mtt_entries == 2**18
    assert nic.mpt_entries == 1


@pytest.mark.parametrize(
    ('base', 'page_size', 'message'),
    [(0, 8192, 'Unsupported page size'), (4096, 2 * 2**20, 'not aligned')],
)
def test_register_region_validates_pages(
    base: int, page_size: int, message: str
) -> None:
    with pytest.raises(ValueError, match=message):
        Nic(0, NicConfig()).register_region(base, 4096, page_size)


def test_trackable_state_counts_every_kind() -> None:
    config = NicConfig()
    nic = Nic(0, config)
    nic.register_region(0, 8192, 4096)
    nic.add_qp()
    nic.recv_posted()
    assert nic.trackable_state_bytes == (
        QP_STATE_BYTES
        + 2 * config.mtt_entry_bytes
        + config.mpt_entry_bytes
        + config.recv_wqe_bytes
    )


def test_translation_entries_use_their_own_cache() -> None:
    nic = Nic(0, load_preset('cx4ib'))
    region = nic.register_region(0, 4096, 4096)
    assert nic.cache_for(nic.mpt_key(region)) is nic.translation_cache
    assert nic.cache_for(nic.qp_key(0)) is nic.context_cache
    shared = Nic(1, NicConfig())
    assert shared.translation_cache is shared.context_cache


def test_prefetch_installs_translation_entries() -> None:
    nic = Nic(0, load_preset('cx4ib'))
    region = nic.register_region(0, 4 * 2**20, 2 * 2**20)
    assert nic.prefetch_region(region) == 3
    keys = nic.lookup_keys(0, region, 0, 64)
    assert [nic.cache_for(k).access(k, 0)[0] for k in keys[1:]] == [
        CacheOutcome.HIT,
        CacheOutcome.HIT,
    ]


def test_misses_occupy_processing_unit_by_overlap_factor() -> None:
    nic = Nic(0, NicConfig(num_pus=1, miss_overlap_factor=0.5))
    keys = [nic.qp_key(0)]
    first = nic.pu_dispatch(0, keys, 0)
    second = nic.pu_dispatch(0, keys, 0)
    assert first.misses == 1
    assert first.done_at == 112 + 450
    assert second.start == 112 + 0.5 * 450
    assert second.misses == 0
    assert second.done_at == 337 + 112 + 10
    assert nic.wqes_serviced == 2


def test_queue_pairs_are_spread_over_processing_units() -> None:
    nic = Nic(0, NicConfig(num_pus=4))
    assert [nic.pu_of(q) for q in range(6)] == [0, 1, 2, 3, 0, 1]
