# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
from pathlib import Path

import pytest

from stormsim.errors import ConfigError
from stormsim.nic import (
    NicConfig,
    PresetError,
    load_preset,
    parse_preset,
    shipped_presets,
    throughput_drop,
)


@pytest.fixture(params=['cx3', 'cx4ib', 'cx4roce', 'cx5'])
def preset_name(request: pytest.FixtureRequest) -> str:
    return request.param


def test_shipped_presets_load(preset_name: str) -> None:
    config = load_preset(preset_name)
    assert config.name == preset_name
    assert preset_name in shipped_presets()


def test_preset_survives_serialization(preset_name: str) -> None:
    config = load_preset(preset_name)
    assert parse_preset(config.to_preset()) == config


def test_missing_keys_keep_defaults() -> None:
    config = parse_preset('name = tiny\nnum_pus = 2\n')
    assert config.num_pus == 2
    assert config.pu_service_ns == NicConfig().pu_service_ns


def test_comments_and_blank_lines_are_ignored() -> None:
    text = '# header\n\nnum_pus = 3  # trailing\n'
    assert parse_preset(text).num_pus == 3


def test_unknown_key_is_rejected_with_line_number() -> None:
    with pytest.raises(PresetError, match=r'my\.preset:2: unknown preset key') as info:
        parse_preset('num_pus = 2\nturbo = 1\n', path='my.preset')
    assert info.value.lineno == 2
    assert isinstance(info.value, ConfigError)


@pytest.mark.parametrize(
    ('text', 'message'),
    [
        ('num_pus = 2\nnum_pus = 3\n', 'repeated preset key'),
        ('num_pus 2\n', "expected 'key = value'"),
        ('num_pus = two\n', "invalid value 'two'"),
        ('cache_miss_ns = 5.0\n', 'cache_miss_ns must exceed'),
        ('miss_overlap_factor = 1.5\n', 'miss_overlap_factor'),
        ('cache_capacity_bytes = 100\n', 'single QP'),
    ],
)
def test_malformed_preset_is_rejected(text: str, message: str) -> None:
    with pytest.raises(PresetError, match=message):
        parse_preset(text)


def test_load_preset_from_file(tmp_path: Path) -> None:
    path = tmp_path / 'lab.preset'
    path.write_text(load_preset('cx5').replace(name='lab', num_pus=4).to_preset())
    config = load_preset(path)
    assert config.name == 'lab'
    assert config.num_pus == 4


def test_load_missing_preset_names_bundled_ones(tmp_path: Path) -> None:
    with pytest.raises(PresetError, match='bundled presets are cx3, cx4ib'):
        load_preset(tmp_path / 'nope.preset')


@pytest.mark.parametrize(
    ('name', 'drop'), [('cx3', 0.83), ('cx4roce', 0.42), ('cx5', 0.32)]
)
def test_presets_reproduce_connection_scaling_drops(name: str, drop: float) -> None:
    assert throughput_drop(load_preset(name)) == pytest.approx(drop, abs=0.01)


def test_newer_nics_overlap_misses_more() -> None:
    factors = [load_preset(n).miss_overlap_factor for n in ('cx3', 'cx4roce', 'cx5')]
    assert factors == sorted(factors, reverse=True)
    assert factors[0] == 1.0
