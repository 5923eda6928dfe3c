"""Command-line entry point: simulation sweeps and cohort analyses."""

import argparse
import logging
import math
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .config import (
    SIM1_SIGMA2_GRID,
    SIM2_GRID,
    PipelineConfig,
    Sim1Config,
    Sim2Config,
    StudyConfig,
    SweepConfig,
    load_document,
)
from .dataset import ColumnSchema, load_dense_csv, load_sparse
from .exceptions import ConfigError, LspsError
from .models import AnalysisReport, CohortDataset, SimResult
from .output.console import ConsoleFormatter
from .output.csv import write_balance, write_sweep_agg, write_sweep_raw
from .output.json import JSONFormatter
from .output.svg import SVGPlot, rmse_series
from .pipeline import run_analysis
from .simbench import format_point_value, run_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_EQUIPOISE = 2
EXIT_BALANCE = 3
EXIT_INTERNAL = 70


def _section(doc: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = doc.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"Config section '{key}' must be a mapping")
    return value


def _load(args: argparse.Namespace, required: bool) -> Dict[str, Any]:
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        return {}
    return load_document(args.config)


def _output_dir(args: argparse.Namespace, doc: Dict[str, Any]) -> Path:
    out = Path(args.out or doc.get("output_dir") or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {out}: {e}")
    return out


def read_exclusion_list(path: str) -> List[str]:
    """One covariate name per line; blank lines and `#` comments are ignored."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"Cannot read exclusion list {path}: {e}")
    names = [line.split("#", 1)[0].strip() for line in lines]
    return [name for name in names if name]


def _plot_axes(
    sweep: SweepConfig,
) -> Tuple[str, Callable[[SimResult], float], Optional[Callable[[SimResult], str]]]:
    """x-axis label, x accessor and optional series grouping for a sweep plot."""
    keys = list(sweep.points[0].keys())
    index = {id(p): i for i, p in enumerate(sweep.points)}
    by_value = {
        ",".join(format_point_value(v) for v in p.values()): p
        for p in sweep.points
    }

    def axis(value: Any) -> float:
        value = float(value)
        return math.log10(value) if value > 0 else value

    def x_of(result: SimResult) -> float:
        point = by_value[result.value]
        if not isinstance(point[keys[-1]], (int, float)):
            return float(index[id(point)])
        return axis(point[keys[-1]])

    def group(result: SimResult) -> str:
        point = by_value[result.value]
        return ",".join(f"{k}={point[k]}" for k in keys[:-1])

    return f"log10({keys[-1]})", x_of, (group if len(keys) > 1 else None)


def _run_simulation(
    args: argparse.Namespace,
    name: str,
    config_cls: Any,
    default_param: str,
    default_values: Sequence[Any],
) -> int:
    doc = _load(args, required=False)
    cfg = config_cls.from_dict(_section(doc, name))
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
        cfg.validate()
    sweep = SweepConfig.from_dict(_section(doc, "sweep"), default_param, list(default_values))
    sweep.points = [
        {key: getattr(cfg.with_overrides(point), key) for key in point} for point in sweep.points
    ]
    if args.threads is not None:
        sweep.threads = args.threads
    pipeline = PipelineConfig.from_dict(_section(doc, "pipeline"))
    pipeline.validate()
    out = _output_dir(args, doc)

    logger.info("=" * 80)
    logger.info(f"Starting {name} sweep")
    logger.info("=" * 80)
    start_time = time.time()
    results = run_sweep(cfg, sweep, pipeline)

    resolved = {name: asdict(cfg), "sweep": asdict(sweep), "pipeline": asdict(pipeline)}
    seed = cfg.master_seed
    write_sweep_raw(results, str(out / f"{name}_raw.csv"), seed, resolved)
    write_sweep_agg(results, str(out / f"{name}_agg.csv"), seed, resolved)
    x_label, x_of, group_of = _plot_axes(sweep)
    plot = SVGPlot(f"{name}: RMSE of the estimated effect", x_label, "RMSE")
    metadata = {"tool": f"lsps-engine {__version__}", "seed": seed, "resolved_config": resolved}
    plot.write(rmse_series(results, x_of, group_of), str(out / f"{name}_rmse.svg"), metadata)
    logger.info(f"✓ Wrote {name} outputs to {out} in {time.time() - start_time:.2f}s")
    print(ConsoleFormatter().format_sweep(results, use_color=sys.stdout.isatty()))
    return EXIT_OK


def cmd_sim1(args: argparse.Namespace) -> int:
    return _run_simulation(args, "sim1", Sim1Config, "sigma2", SIM1_SIGMA2_GRID)


def cmd_sim2(args: argparse.Namespace) -> int:
    return _run_simulation(args, "sim2", Sim2Config, "n,m", SIM2_GRID)


def _resolve(path: Optional[str], base: Path) -> Optional[str]:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else base / p)


def load_cohort(study: StudyConfig, base: Path) -> CohortDataset:
    """Load the cohort the study's inputs section describes."""
    inputs = study.inputs
    if inputs.format == "sparse":
        return load_sparse(
            _resolve(inputs.triplets, base),
            _resolve(inputs.dictionary, base),
            _resolve(inputs.subjects, base),
        )
    schema = ColumnSchema(
        treatment=inputs.treatment,
        outcome=inputs.outcome,
        time=inputs.time,
        event=inputs.event,
        subject_id=inputs.subject_id,
    )
    return load_dense_csv(_resolve(inputs.path, base), schema)


def exit_code_for(report: AnalysisReport) -> int:
    """Balance failure outranks equipoise failure."""
    if not report.balance.passed:
        return EXIT_BALANCE
    if not report.equipoise.passed:
        return EXIT_EQUIPOISE
    return EXIT_OK


def _run_study(args: argparse.Namespace, command: str, estimate: bool) -> int:
    doc = _load(args, required=True)
    study = StudyConfig.from_dict(doc)
    pipeline = study.pipeline
    if args.strata is not None:
        pipeline.n_strata = args.strata
    if args.trim:
        pipeline.trim = True
    if args.seed is not None:
        pipeline.seed = args.seed
    if args.threads is not None:
        pipeline.threads = args.threads
    if args.exclude is not None:
        pipeline.exclude = list(pipeline.exclude) + read_exclusion_list(args.exclude)
    study.validate()
    out = _output_dir(args, doc)

    base = Path(args.config).resolve().parent
    data = load_cohort(study, base)
    report = run_analysis(data, pipeline, estimate=estimate)

    resolved = study.to_dict()
    resolved["output_dir"] = str(out)
    JSONFormatter().write(report, str(out / "report.json"), command, pipeline.seed, resolved)
    write_balance(report.balance, str(out / "balance.csv"), pipeline.seed, resolved)
    logger.info(f"✓ Wrote report.json and balance.csv to {out}")
    print(ConsoleFormatter().format(report, use_color=sys.stdout.isatty()))
    exit_code = exit_code_for(report)
    logger.info(f"{command} completed with exit code {exit_code}")
    return exit_code


def cmd_analyze(args: argparse.Namespace) -> int:
    return _run_study(args, "analyze", estimate=True)


def cmd_diagnose(args: argparse.Namespace) -> int:
    return _run_study(args, "diagnose", estimate=False)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config document")
    common.add_argument("--out", help="Output directory (default: config output_dir or .)")
    common.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    common.add_argument("--debug", action="store_true", help="Enable debug logging")

    parser = argparse.ArgumentParser(
        prog="lsps",
        description="Large-scale propensity score analyses and pinpointability simulations",
    )
    parser.add_argument("--version", "-V", action="version", version=f"lsps {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler, help_text in (
        ("sim1", cmd_sim1, "Direct pinpointability sweep over the noise variance on u"),
        ("sim2", cmd_sim2, "Latent pinpointability sweep over (N, M)"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument(
            "--threads", type=int, help="Worker processes (default: machine parallelism)"
        )
        p.set_defaults(handler=handler)

    for name, handler, help_text in (
        ("analyze", cmd_analyze, "Run the full pipeline on a cohort and estimate the effect"),
        ("diagnose", cmd_diagnose, "Run the pipeline diagnostics without estimating the effect"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--strata", type=int, help="Number of propensity strata (default: 10)")
        p.add_argument(
            "--trim", action="store_true", help="Drop subjects outside the treated score range"
        )
        p.add_argument("--exclude", help="File listing covariates to exclude, one per line")
        p.add_argument(
            "--threads", type=int, help="Cross-validation folds fitted concurrently (default: 1)"
        )
        p.set_defaults(handler=handler)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    log_level = logging.WARNING
    if args.debug:
        log_level = logging.DEBUG
    elif args.verbose:
        log_level = logging.INFO
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    logging.getLogger("lsps").setLevel(log_level)

    try:
        return args.handler(args)
    except LspsError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=args.debug)
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.command} failed with error: {e}", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
