# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
from importlib.resources import files
from pathlib import Path

import pytest

from stormsim.dataplane import LookupMode
from stormsim.errors import ConfigError
from stormsim.harness import (
    ExperimentConfig,
    LookupSettings,
    PresetSource,
    Seed,
    Topology,
    WorkloadParams,
    load_config,
    parse_config,
)
from stormsim.nic import load_preset
from stormsim.workloads import TableOptions, WorkloadKind

EXPERIMENTS = files('stormsim') / 'data' / 'experiments'

MINIMAL = """\
[experiment]
preset = cx4roce

[workload]
kind = kv_lookups
key_count = 100
op_count = 100
"""


def test_minimal_config_uses_defaults() -> None:
    config = parse_config(MINIMAL, path='kv.ini')
    assert config.experiment_id == 'kv'
    assert config.preset == 'cx4roce'
    assert config.seed == 0
    assert config.lookup == LookupSettings()
    assert config.topology == Topology()
    assert config.table == TableOptions()
    assert config.workload == WorkloadParams(key_count=100, op_count=100)
    assert config.results is None


def test_every_section_is_read() -> None:
    text = """\
[experiment]
id = full
preset = cx5
seed = 9
mode = rpc_only
rr_fallback_after = 3

[topology]
n_nodes = 4
threads_per_node = 2
coroutines_per_thread = 16

[table]
bucket_width = 8
occupancy_target = 0.5
physical_segments = yes

[workload]
kind = tatp_lite
key_count = 64
key_distribution = zipf
zipf_theta = 0.9

[output]
results = out/full.csv
"""
    config = parse_config(text)
    assert config.experiment_id == 'full'
    assert config.seed == 9
    assert config.lookup.mode is LookupMode.RPC_ONLY
    assert config.lookup.rr_fallback_after == 3
    assert config.topology.n_nodes == 4
    assert config.table.target_occupancy == 0.5
    assert config.table.physical_segments
    assert config.workload.kind is WorkloadKind.TATP_LITE
    assert config.workload.key_distribution == 'zipf'
    assert config.results == Path('out/full.csv')


def test_lists_accept_commas_and_spaces() -> None:
    text = MINIMAL.replace('kv_lookups', 'emulation') + (
        '\n[topology]\nvirtual_nodes = 32, 64 96\n'
    )
    assert parse_config(text).topology.virtual_nodes == (32, 64, 96)


@pytest.mark.parametrize(
    ('text', 'message'),
    [
        (MINIMAL + '[network]\nmtu = 4096\n', r'cfg:8: unknown section \[network\]'),
        (MINIMAL + 'turbo = 1\n', r"cfg:8: unknown key 'turbo' in \[workload\]"),
        (
            MINIMAL.replace('op_count = 100', 'op_count = -1'),
            r"cfg:7: invalid value '-1' for 'op_count': must be at least 0",
        ),
        (
            MINIMAL.replace('kv_lookups', 'graph'),
            r"invalid value 'graph' for 'kind': expected one of kv_lookups",
        ),
        (
            MINIMAL.replace('preset = cx4roce', 'seed = 1'),
            r"cfg: missing required key 'preset' in \[experiment\]",
        ),
        ('preset = cx4roce\n', r'cfg:1: key outside of any section'),
        (MINIMAL.replace('cx4roce', 'cx9'), 'no such preset'),
        (
            MINIMAL + '[table]\noccupancy_target = 1.5\n',
            r"'occupancy_target': must lie in \(0, 1\]",
        ),
        (
            MINIMAL + '[table]\nphysical_segments = maybe\n',
            'expected a boolean',
        ),
        (
            MINIMAL.replace('kv_lookups', 'emulation'),
            'cfg:5: EMULATION needs virtual_nodes',
        ),
    ],
)
def test_invalid_config_is_rejected(text: str, message: str) -> None:
    with pytest.raises(ConfigError, match=message):
        parse_config(text, path='cfg')


def test_config_errors_carry_line_numbers() -> None:
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + 'turbo = 1\n', path='cfg')
    assert info.value.lineno == 8
    assert info.value.path == 'cfg'


@pytest.mark.parametrize(
    ('extra', 'message'),
    [
        ('[topology]\nthreads_per_node = 256\n', r'threads_per_node must lie in'),
        ('[topology]\ncoroutines_per_thread = 300\n', 'coroutines_per_thread must'),
        ('[topology]\nn_nodes = 300\n', 'n_nodes must be at most 256'),
        ('[table]\nvalue_bytes = 200\n', 'Values of 200 bytes do not fit'),
        ('[table]\nn_buckets = 200\n', 'n_buckets must be a power of two'),
        ('[table]\nn_buckets = 64\n', '64 buckets of width 1 cannot hold 50 keys'),
        ('[table]\nchunk_bytes = 4294967296\n', 'must be at most 4294967295'),
    ],
)
def test_unrunnable_cluster_and_table_point_at_key(extra: str, message: str) -> None:
    with pytest.raises(ConfigError, match=message) as info:
        parse_config(MINIMAL + extra, path='cfg')
    assert info.value.path == 'cfg'
    assert info.value.lineno == 9


def test_relative_preset_path_is_resolved_against_config(tmp_path: Path) -> None:
    (tmp_path / 'lab.preset').write_text(load_preset('cx5').to_preset())
    path = tmp_path / 'kv.ini'
    path.write_text(MINIMAL.replace('cx4roce', 'lab.preset'))
    config = load_config(path)
    assert config.preset == str(tmp_path / 'lab.preset')


def test_missing_config_file_is_a_config_error(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match='no such config file'):
        load_config(tmp_path / 'missing.ini')


def test_overrides_replace_only_given_values() -> None:
    config = parse_config(MINIMAL)
    changed = config.with_overrides(seed=4, results='x.csv')
    assert changed.seed == 4
    assert changed.preset == config.preset
    assert changed.results == Path('x.csv')
    assert config.with_overrides() == config


def test_parameters_cover_pipeline_inputs() -> None:
    params = parse_config(MINIMAL).parameters()
    assert params[PresetSource] == 'cx4roce'
    assert params[Seed] == 0
    assert params[WorkloadParams].op_count == 100


@pytest.mark.parametrize(
    'name',
    [
        'emulation',
        'kv_lookups',
        'random_reads',
        'sync_mirroring',
        'tatp_lite',
        'ud_break_even',
    ],
)
def test_bundled_experiments_are_valid(name: str) -> None:
    config = parse_config(
        EXPERIMENTS.joinpath(f'{name}.ini').read_text(), path=f'{name}.ini'
    )
    assert isinstance(config, ExperimentConfig)
    assert config.workload.kind is WorkloadKind[name.upper()]
