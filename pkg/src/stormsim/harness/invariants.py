# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""End-of-run checks that gate writing any results."""

from __future__ import annotations

from collections.abc import Iterable

from ..logging import get_logger
from ..oracle import check_serializability
from ..workloads import StormExperiment, WorkloadKind, WorkloadResult
from .types import ExperimentRun, ResultRow


class InvariantViolation(RuntimeError):
    """A module invariant failed at the end of a run."""

    def __init__(self, violations: Iterable[str]) -> None:
        self.violations = list(violations)
        super().__init__(
            f"{len(self.violations)} invariant violation(s):\n  "
            + '\n  '.join(self.violations)
        )


def storm_violations(experiment: StormExperiment, result: WorkloadResult) -> list[str]:
    """Lock hygiene, accounting identities and table integrity of a Storm run."""
    violations = []
    if result.lost:
        violations.append(f"{result.lost} operations neither completed nor aborted.")
    if result.wrong_values:
        violations.append(f"{result.wrong_values} lookups returned wrong values.")
    violations.extend(result.stats.accounting_errors())
    violations.extend(experiment.table.integrity_errors())
    if any(thread.active_coroutines for thread in experiment.cluster.threads()):
        violations.append("Coroutines are still running after the run.")
    locked = experiment.table.locked_keys()
    if result.kind is WorkloadKind.TATP_LITE:
        report = check_serializability(
            result.trace,
            experiment.initial,
            experiment.table.snapshot(),
            journals=[p.journal for p in experiment.table.partitions],
            locked_keys=locked,
        )
        violations.extend(report.errors)
    elif locked:
        violations.append(f"Locks leaked on keys {locked[:10]}.")
    return violations


def row_violations(rows: Iterable[ResultRow]) -> list[str]:
    return [
        f"Latency buckets of {row.experiment} ({row.kind}, {row.nodes} nodes, "
        f"{row.connections} connections) sum to {row.bucket_sum}, "
        f"not {row.total_ns}."
        for row in rows
        if row.bucket_sum != row.total_ns
    ]


def enforce(run: ExperimentRun) -> None:
    """Raise if ``run`` or its result rows violate an invariant.

    Raises
    ------
    InvariantViolation
        With every violation found.
    """
    violations = [*run.violations, *row_violations(run.rows)]
    if violations:
        for violation in violations:
            get_logger().error("Invariant violated: %s", violation)
        raise InvariantViolation(violations)
