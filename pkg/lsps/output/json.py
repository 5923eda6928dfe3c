"""JSON report formatter."""

import json
from typing import Any, Dict

from .. import __version__
from ..models import AnalysisReport

TOOL_NAME = "lsps-engine"


class JSONFormatter:
    """Formatter for report.json."""

    def format(
        self,
        report: AnalysisReport,
        command: str,
        seed: int,
        resolved_config: Dict[str, Any],
    ) -> Dict[str, Any]:
        """
        Format an analysis report with its provenance.

        Returns:
            JSON-serializable dictionary
        """
        return {
            "version": "1.0",
            "tool": {"name": TOOL_NAME, "version": __version__},
            "command": command,
            "seed": seed,
            "resolved_config": resolved_config,
            "diagnostics": {
                "equipoise_pass": report.equipoise.passed,
                "balance_pass": report.balance.passed,
                "caution": report.caution,
            },
            **report.to_dict(),
        }

    def write(
        self,
        report: AnalysisReport,
        output_path: str,
        command: str,
        seed: int,
        resolved_config: Dict[str, Any],
    ) -> None:
        """Write report.json."""
        json_data = self.format(report, command, seed, resolved_config)
        with open(output_path, "w") as f:
            json.dump(json_data, f, indent=2, allow_nan=False)
