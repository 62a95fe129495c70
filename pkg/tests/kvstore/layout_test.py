# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
from collections import Counter

import pytest

from stormsim.kvstore import (
    LINK_BYTES,
    MAX_LINK_OFFSET,
    SLOT_HEADER_BYTES,
    Link,
    SlotHeader,
    TableLayout,
    home_of,
    mix64,
    table_size,
)


def test_slot_header_is_three_words() -> None:
    header = SlotHeader(key=7, lock=3, version=12)
    data = header.pack()
    assert len(data) == SLOT_HEADER_BYTES == 24
    assert SlotHeader.unpack(b'xx' + data, 2) == header


def test_zeroed_memory_holds_nil_link() -> None:
    assert Link.unpack(bytes(LINK_BYTES)).is_nil
    assert Link().pack() == bytes(LINK_BYTES)
    assert not Link.unpack(Link(0, 64).pack()).is_nil


def test_link_keeps_largest_offset() -> None:
    assert Link.unpack(Link(3, MAX_LINK_OFFSET).pack()) == Link(3, MAX_LINK_OFFSET)


@pytest.mark.parametrize(
    'link', [Link(0, MAX_LINK_OFFSET + 1), Link(0, -1), Link(MAX_LINK_OFFSET, 0)]
)
def test_link_out_of_range_is_rejected(link: Link) -> None:
    with pytest.raises(ValueError, match='out of range'):
        link.pack()


def test_layout_sizes() -> None:
    layout = TableLayout(16, bucket_width=2)
    assert layout.slot_bytes == 128
    assert layout.bucket_bytes == 2 * 128 + 8
    assert layout.node_bytes == 136
    assert layout.table_bytes == 16 * layout.bucket_bytes
    assert layout.slot_offset(3, 1) == 3 * layout.bucket_bytes + 128
    assert layout.link_offset(3) == 3 * layout.bucket_bytes + 256


@pytest.mark.parametrize(
    ('kwargs', 'message'),
    [
        ({'n_buckets': 12}, 'power of two'),
        ({'n_buckets': 0}, 'power of two'),
        ({'n_buckets': 8, 'bucket_width': 0}, 'bucket_width'),
        ({'n_buckets': 8, 'value_bytes': 0}, 'value_bytes'),
    ],
)
def test_invalid_layout_raises(kwargs: dict[str, int], message: str) -> None:
    with pytest.raises(ValueError, match=message):
        TableLayout(**kwargs)


@pytest.mark.parametrize(
    ('key_count', 'width', 'occupancy', 'expected'),
    [(1000, 1, 0.6, 2048), (600, 1, 0.6, 1024), (1000, 4, 0.6, 512), (1, 1, 1.0, 1)],
)
def test_table_size_is_smallest_power_of_two_meeting_target(
    key_count: int, width: int, occupancy: float, expected: int
) -> None:
    n_buckets = table_size(key_count, width, occupancy)
    assert n_buckets == expected
    assert key_count / (n_buckets * width) <= occupancy
    if n_buckets > 1:
        assert key_count / (n_buckets // 2 * width) > occupancy


@pytest.mark.parametrize('occupancy', [0.0, 1.2])
def test_table_size_rejects_occupancy_out_of_range(occupancy: float) -> None:
    with pytest.raises(ValueError, match='target_occupancy'):
        table_size(100, 1, occupancy)


def test_hash_is_deterministic_and_spreads_keys() -> None:
    assert mix64(12345) == mix64(12345)
    assert mix64(1) != mix64(2)
    homes = Counter(home_of(key, 4) for key in range(1, 1001))
    assert sorted(homes) == [0, 1, 2, 3]
    assert all(200 <= n <= 300 for n in homes.values())
    layout = TableLayout(64)
    assert all(0 <= layout.bucket_of(key) < 64 for key in range(1, 200))
