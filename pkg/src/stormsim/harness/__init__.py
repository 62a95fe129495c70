# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Experiment configs, pipelines, result tables and reports."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .invariants import InvariantViolation, enforce, storm_violations
from .report import format_report
from .results import (
    COLUMNS,
    SCHEMA,
    format_rows,
    format_transactions,
    parse_rows,
)
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
from .workflow import (
    SWEEP_AXES,
    ExperimentWorkflow,
    assign_parameter_values,
    build_workload,
    sweep,
)

__all__ = [
    'COLUMNS',
    'SCHEMA',
    'SWEEP_AXES',
    'ConfigError',
    'EventLog',
    'ExperimentConfig',
    'ExperimentId',
    'ExperimentRun',
    'ExperimentWorkflow',
    'InvariantViolation',
    'LookupSettings',
    'NicPreset',
    'PresetSource',
    'ResultRow',
    'ResultTable',
    'Seed',
    'Topology',
    'TransactionTable',
    'Workload',
    'WorkloadParams',
    'assign_parameter_values',
    'build_workload',
    'enforce',
    'format_report',
    'format_rows',
    'format_transactions',
    'load_config',
    'parse_config',
    'parse_rows',
    'storm_violations',
    'sweep',
]
