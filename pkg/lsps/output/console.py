"""Console output formatter for human-readable summaries."""

from typing import Sequence

from ..models import AnalysisReport, AteEstimate, HazardRatioEstimate, SimResult


class ConsoleFormatter:
    """Formatter for console output."""

    PASS = "\033[92m"  # Green
    FAIL = "\033[91m"  # Red
    WARN = "\033[93m"  # Yellow
    RESET = "\033[0m"
    BOLD = "\033[1m"

    def _c(self, code: str, text: str, use_color: bool) -> str:
        return f"{code}{text}{self.RESET}" if use_color else text

    def _verdict(self, passed: bool, use_color: bool) -> str:
        if passed:
            return self._c(self.PASS, "PASS", use_color)
        return self._c(self.FAIL, "FAIL", use_color)

    def _effect_line(self, label: str, effect, use_color: bool) -> str:
        if isinstance(effect, HazardRatioEstimate):
            lo, hi = effect.ci95
            return (
                f"  {label}: HR {effect.hr:.4f} (95% CI {lo:.4f}-{hi:.4f}), "
                f"{effect.n_events} events"
            )
        assert isinstance(effect, AteEstimate)
        lo, hi = effect.ci95
        return (
            f"  {label}: ATE {effect.nu_hat:.4f} "
            f"(95% CI {lo:.4f} to {hi:.4f}, se {effect.se:.4f})"
        )

    def format(self, report: AnalysisReport, use_color: bool = True) -> str:
        """
        Format an analysis report for the terminal.

        Args:
            report: Pipeline result
            use_color: Whether to use ANSI color codes
        """
        output = [self._c(self.BOLD, "\nLSPS Analysis", use_color), "=" * 80]
        fit = report.propensity.fit
        output.append(
            f"Propensity model: λ={fit.lam:.4g}, {fit.n_nonzero} of "
            f"{len(fit.coefficients)} covariate(s) selected"
        )
        if report.instruments.flagged:
            names = ", ".join(c.name for c in report.instruments.flagged)
            output.append(self._c(self.WARN, f"Possible instruments: {names}", use_color))
        if report.excluded:
            output.append(f"Excluded: {', '.join(report.excluded)}")
        eq = report.equipoise
        output.append(
            f"Equipoise: {eq.fraction_in_band:.1%} in [{eq.band[0]}, {eq.band[1]}] "
            f"{self._verdict(eq.passed, use_color)}"
        )
        bal = report.balance
        worst = (
            "n/a" if bal.max_abs_adjusted_smd == float("inf") else f"{bal.max_abs_adjusted_smd:.4f}"
        )
        output.append(
            f"Balance: {report.stratification.k} strata, max |SMD| {worst} "
            f"{self._verdict(bal.passed, use_color)}"
        )
        if report.effect is not None:
            output.append("-" * 80)
            output.append(self._effect_line("Adjusted", report.effect, use_color))
            if report.unadjusted is not None:
                output.append(self._effect_line("Unadjusted", report.unadjusted, use_color))
            if report.caution:
                output.append(self._c(self.WARN, "  Interpret with caution", use_color))
        if report.warnings:
            output.append("-" * 80)
            output.append(f"{len(report.warnings)} warning(s):")
            for warning in report.warnings:
                output.append(f"  - {warning}")
        output.append("=" * 80)
        return "\n".join(output) + "\n"

    def format_sweep(self, results: Sequence[SimResult], use_color: bool = True) -> str:
        """One line per (point, method) with bias and RMSE."""
        output = [self._c(self.BOLD, "\nSweep Results", use_color), "=" * 80]
        for result in results:
            r2 = "" if result.r2_pinpoint is None else f"  R²={result.r2_pinpoint:.3f}"
            output.append(f"{result.param}={result.value}{r2}")
            for method, summary in result.methods.items():
                failed = f"  ({summary.n_failed} failed)" if summary.n_failed else ""
                output.append(
                    f"  {method.value:<11} bias {summary.bias:+.4f}  "
                    f"rmse {summary.rmse:.4f}{failed}"
                )
        output.append("=" * 80)
        return "\n".join(output) + "\n"
