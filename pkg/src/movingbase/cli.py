"""Command-line entry point: ``movingbase run | suite | metrics | plotdata``.

Failures print one JSON object to stderr (``{"error": ..., "message": ...,
"exit_code": ...}``) and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, builtin_scenarios
from .harness import (
    ESTIMATORS,
    OUTPUT_ROOT_ENV,
    SUITE_SCENARIOS,
    RunAborted,
    RunConfig,
    default_output_root,
    render_metrics_table,
    run_scenario,
    run_suite,
)
from .logio import LogFileError, recompute_metrics
from .metrics import AlignmentError
from .plotdata import emit_plot_data

EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_FILE = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=42, help="base seed (default 42)")
    p.add_argument(
        "--output-dir",
        type=Path,
        default=None,
        help=f"output directory (default: under ${OUTPUT_ROOT_ENV} or ./runs)",
    )
    p.add_argument("--duration", type=float, default=None, help="override the scenario duration [s]")
    p.add_argument("--config", type=Path, default=None, help="vehicle/filter/controller config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="movingbase", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="fly one scenario")
    run.add_argument(
        "scenario",
        nargs="?",
        default="stationary",
        help=f"scenario file or built-in name ({', '.join(builtin_scenarios())})",
    )
    _add_common(run)
    run.add_argument("--estimator", choices=ESTIMATORS, default="both")
    run.add_argument("--feedback", choices=("ekf", "ekfui"), default=None, help="filter driving the controller")
    run.add_argument("--repetitions", type=int, default=1)
    run.add_argument("--dt-sim", type=float, default=None, help="simulation step [s], at most the filter step")

    suite = sub.add_parser("suite", help="all experiments, both feedback estimators, N repetitions")
    _add_common(suite)
    suite.add_argument("--repetitions", type=int, default=3)
    suite.add_argument("--scenarios", nargs="+", default=list(SUITE_SCENARIOS), metavar="NAME")

    metrics = sub.add_parser("metrics", help="recompute metrics from a run log")
    metrics.add_argument("log", type=Path, help="log.csv or a run directory")
    metrics.add_argument("-o", "--output", type=Path, default=None, help="write CSV here instead of stdout")

    plot = sub.add_parser("plotdata", help="emit plot bundles from a run log")
    plot.add_argument("log", type=Path, help="log.csv or a run directory")
    plot.add_argument("--output-dir", type=Path, default=None, help="default: <run dir>/plotdata")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def _cmd_run(args) -> int:
    if args.repetitions < 1:
        raise ConfigError("repetitions must be at least 1")
    out_dir = args.output_dir
    if out_dir is None:
        name = Path(args.scenario).stem
        out_dir = default_output_root() / f"{name}_seed{args.seed}"
    cfg = RunConfig(
        scenario=args.scenario,
        estimator=args.estimator,
        feedback=args.feedback,
        seed=args.seed,
        dt_sim=args.dt_sim,
        duration=args.duration,
        output_dir=out_dir,
        repetitions=args.repetitions,
        vehicle_config=args.config,
    )
    result = run_scenario(cfg)
    for paths in result.paths:
        print(paths["log"].parent)
    return 0


def _cmd_suite(args) -> int:
    if args.repetitions < 1:
        raise ConfigError("repetitions must be at least 1")
    out_dir = args.output_dir or default_output_root() / f"suite_seed{args.seed}"
    summary = run_suite(out_dir, args.seed, args.repetitions, tuple(args.scenarios), args.config, args.duration)
    print(summary)
    return 0


def _cmd_metrics(args) -> int:
    text = render_metrics_table(recompute_metrics(args.log))
    if args.output is None:
        sys.stdout.write(text)
    else:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text)
        print(args.output)
    return 0


def _cmd_plotdata(args) -> int:
    for path in emit_plot_data(args.log, args.output_dir):
        print(path)
    return 0


COMMANDS = {"run": _cmd_run, "suite": _cmd_suite, "metrics": _cmd_metrics, "plotdata": _cmd_plotdata}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, AlignmentError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_CONFIG)
    except RunAborted as exc:
        return _fail(exc.kind, str(exc), EXIT_ABORTED)
    except (LogFileError, FileNotFoundError, PermissionError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_FILE)


if __name__ == "__main__":
    sys.exit(main())
