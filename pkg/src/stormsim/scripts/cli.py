# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)
"""Command-line front end: ``stormsim run|sweep|fit|report``.

Exit codes are 0 on success, 1 when a run violates an invariant and 2 on
configuration, preset or input errors. Nothing is written unless the
command succeeds.
"""

import argparse
import contextlib
import io
import os
import sys
from collections.abc import Iterator, Sequence
from pathlib import Path
from typing import TextIO

from ..errors import ConfigError
from ..harness import (
    SWEEP_AXES,
    EventLog,
    ExperimentConfig,
    ExperimentWorkflow,
    InvariantViolation,
    ResultTable,
    TransactionTable,
    assign_parameter_values,
    enforce,
    format_report,
    format_rows,
    load_config,
    parse_rows,
    sweep,
)
from ..logging import configure, get_logger
from ..nic import UnderdeterminedFit, fit_preset, load_anchors, load_preset

EVENT_LOG_VARIABLE = 'STORMSIM_LOG'
EXIT_INVARIANT = 1
EXIT_INPUT = 2


def positive_int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError('Must be comma-separated integers') from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError('Must be one or more positive integers')
    return values


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    get_logger().info("Wrote %s", path)


@contextlib.contextmanager
def _event_log() -> Iterator[TextIO | None]:
    """Buffer the event log; it is written only if the block succeeds."""
    target = os.environ.get(EVENT_LOG_VARIABLE)
    if not target:
        yield None
        return
    buffer = io.StringIO()
    yield buffer
    _write(Path(target), buffer.getvalue())


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config).with_overrides(
        seed=args.seed, preset=args.preset, results=args.out
    )
    if args.preset is not None:
        config.validate(path=args.config)
    return config


def _emit(config: ExperimentConfig, results: str) -> None:
    if config.results is None:
        sys.stdout.write(results)
    else:
        _write(config.results, results)


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    with _event_log() as sink:
        pipeline = assign_parameter_values(
            ExperimentWorkflow(), {**config.parameters(), EventLog: EventLog(sink)}
        )
        outputs = [ResultTable]
        if config.transactions is not None:
            outputs.append(TransactionTable)
        tables = pipeline.compute(outputs)
    if config.transactions is not None:
        _write(config.transactions, tables[TransactionTable])
    _emit(config, tables[ResultTable])
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    with _event_log() as sink:
        pipeline = assign_parameter_values(
            ExperimentWorkflow(), {**config.parameters(), EventLog: EventLog(sink)}
        )
        run = sweep(pipeline, args.axis, args.values)
        enforce(run)
    _emit(config, format_rows(run.rows))
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    anchors = load_anchors(args.anchors)
    base = load_preset(args.preset or 'cx4ib')
    name = Path(args.out).stem if args.out else None
    try:
        result = fit_preset(anchors, base, name=name)
    except UnderdeterminedFit:
        raise
    except ValueError as err:
        # Anchors that fit only with non-positive constants.
        raise ConfigError(str(err), path=args.anchors) from err
    sys.stdout.write(result.report() + '\n')
    if args.out:
        _write(Path(args.out), result.config.to_preset())
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.results)
    if not path.is_file():
        raise ConfigError("no such results file", path=path)
    report = format_report(parse_rows(path.read_text(), path=path))
    if args.out:
        _write(Path(args.out), report)
    else:
        sys.stdout.write(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='stormsim',
        description='Simulate RDMA fabrics and the Storm dataplane.',
    )
    parser.add_argument(
        '-v', '--verbose', action='store_true', help='Log progress messages.'
    )
    parser.add_argument('--debug', action='store_true', help='Log debug messages.')
    commands = parser.add_subparsers(dest='command', required=True)

    def experiment_parser(name: str, summary: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=summary)
        sub.add_argument('--config', required=True, help='Experiment config file.')
        sub.add_argument('--seed', type=int, default=None, help='Override the seed.')
        sub.add_argument(
            '--preset', default=None, help='Override the NIC preset, name or path.'
        )
        sub.add_argument(
            '--out', default=None, help='Results CSV, instead of the configured one.'
        )
        return sub

    run = experiment_parser('run', 'Run one experiment and write its results.')
    run.set_defaults(func=cmd_run)
    sweep_parser = experiment_parser('sweep', 'Run an experiment along one axis.')
    sweep_parser.add_argument('--axis', required=True, choices=SWEEP_AXES)
    sweep_parser.add_argument(
        '--values',
        required=True,
        type=positive_int_list,
        help='Comma-separated axis values, e.g. 1,2,4,8.',
    )
    sweep_parser.set_defaults(func=cmd_sweep)

    fit = commands.add_parser('fit', help='Fit a NIC preset to latency anchors.')
    fit.add_argument(
        '--anchors',
        default='ib',
        help="Anchor CSV, or the bundled 'ib' (default) or 'roce' set.",
    )
    fit.add_argument(
        '--preset', default=None, help='Preset providing the fixed parameters.'
    )
    fit.add_argument('--out', default=None, help='Where to write the fitted preset.')
    fit.set_defaults(func=cmd_fit)

    report = commands.add_parser('report', help='Summarize a results CSV.')
    report.add_argument('results', help='Results CSV written by run or sweep.')
    report.add_argument('--out', default=None, help='Where to write the report.')
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure(verbose=args.verbose, debug=args.debug)
    try:
        return args.func(args)
    except (ConfigError, UnderdeterminedFit, NotImplementedError) as err:
        sys.stderr.write(f'stormsim: error: {err}\n')
        return EXIT_INPUT
    except InvariantViolation as err:
        sys.stderr.write(f'stormsim: {err}\n')
        return EXIT_INVARIANT


if __name__ == '__main__':
    sys.exit(main())
