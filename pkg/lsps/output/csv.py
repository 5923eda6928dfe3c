"""CSV writers for the balance table and simulation sweeps.

Every file opens with `# ` provenance lines (tool version, seed, resolved
config) ahead of the header; pandas reads them back with `comment="#"`.
"""

import json
from typing import Any, Dict, List, Sequence

import pandas as pd

from .. import __version__
from ..models import BalanceReport, SimResult
from .json import TOOL_NAME

RAW_COLUMNS = ["sweep_param", "value", "method", "replicate", "estimate", "ps_rmse", "r2"]
AGG_COLUMNS = [
    "sweep_param",
    "value",
    "method",
    "bias",
    "variance",
    "rmse",
    "rmse_propensity",
    "r2",
    "mean_estimate",
    "n_failed",
]
BALANCE_COLUMNS = ["covariate", "name", "smd_before", "smd_after"]


def provenance_lines(seed: int, resolved_config: Dict[str, Any]) -> List[str]:
    return [
        f"# tool: {TOOL_NAME} {__version__}",
        f"# seed: {seed}",
        f"# resolved_config: {json.dumps(resolved_config, sort_keys=True)}",
    ]


def _write(frame: pd.DataFrame, path: str, header: Sequence[str]) -> None:
    with open(path, "w", newline="") as f:
        for line in header:
            f.write(line + "\n")
        frame.to_csv(f, index=False, float_format="%.10g", lineterminator="\n")


def write_balance(
    report: BalanceReport, path: str, seed: int, resolved_config: Dict[str, Any]
) -> None:
    """balance.csv: one row per covariate in index order."""
    frame = pd.DataFrame(
        [(r.index, r.name, r.smd_before, r.smd_after) for r in report.rows],
        columns=BALANCE_COLUMNS,
    )
    _write(frame, path, provenance_lines(seed, resolved_config))


def write_sweep_raw(
    results: Sequence[SimResult], path: str, seed: int, resolved_config: Dict[str, Any]
) -> None:
    """Long format: one row per (point, method, replicate)."""
    rows = [
        (result.param, result.value, r.method.value, r.replicate, r.estimate, r.ps_rmse, r.r2)
        for result in results
        for r in result.records
    ]
    _write(pd.DataFrame(rows, columns=RAW_COLUMNS), path, provenance_lines(seed, resolved_config))


def write_sweep_agg(
    results: Sequence[SimResult], path: str, seed: int, resolved_config: Dict[str, Any]
) -> None:
    """One row per (point, method)."""
    rows = [
        (
            result.param,
            result.value,
            method.value,
            summary.bias,
            summary.variance,
            summary.rmse,
            summary.rmse_propensity,
            result.r2_pinpoint,
            summary.mean_estimate,
            summary.n_failed,
        )
        for result in results
        for method, summary in result.methods.items()
    ]
    _write(pd.DataFrame(rows, columns=AGG_COLUMNS), path, provenance_lines(seed, resolved_config))
