"""
Output formatters for coverage reports, ablations and training logs.

CSV files carry a header row naming their columns. Numbers are written with
17 significant digits so reruns with the same seeds produce identical files.
The summary table is rendered with rich for the console.
"""

import csv
import logging
from io import StringIO
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from rich.console import Console
from rich.table import Table

from models import AblationKind, AblationResult, CoverageReport
from services.coverage_metrics import TrajectoryIntervals, coverage_histogram

logger = logging.getLogger(__name__)


def _num(value: float) -> str:
    return "inf" if value == float("inf") else f"{value:.17g}"


def _csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    output = StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) if isinstance(v, float) else v for v in row])
    return output.getvalue()


def format_report_csv(reports: Sequence[CoverageReport]) -> str:
    """One row per report: model, alpha, mean coverage (fraction and percent), lengths, sizes."""
    header = [
        "model", "conformalized", "alpha", "mean_coverage", "mean_coverage_percent",
        "mean_length", "unbounded", "n_traj", "n_eval",
    ]
    rows = [
        [
            r.model, int(r.conformalized), float(r.alpha), float(r.mean_coverage), float(100.0 * r.mean_coverage),
            float(r.mean_length), r.unbounded_count, r.n_traj, r.n_eval,
        ]
        for r in reports
    ]
    return _csv(header, rows)


def format_coverages_csv(reports: Sequence[CoverageReport]) -> str:
    """Per-trajectory coverages C_j of every report."""
    rows = [
        [r.model, int(r.conformalized), j, float(c)]
        for r in reports
        for j, c in enumerate(r.coverages)
    ]
    return _csv(["model", "conformalized", "trajectory", "coverage"], rows)


def format_lengths_csv(reports: Sequence[CoverageReport]) -> str:
    """Flattened interval lengths, trajectory-major."""
    rows = [
        [r.model, int(r.conformalized), i // r.n_eval, i % r.n_eval, float(length)]
        for r in reports
        for i, length in enumerate(r.lengths)
    ]
    return _csv(["model", "conformalized", "trajectory", "point", "length"], rows)


def format_trajectory_csv(intervals: TrajectoryIntervals) -> str:
    """One row per mesh point: coordinates, reference, prediction, conformalized and baseline bounds."""
    d = intervals.X.shape[1]
    coords = ["x"] if d == 1 else [f"x{i}" for i in range(d)]
    header = ["model", "trajectory", *coords, "G", "G_hat", "lo", "hi", "baseline_lo", "baseline_hi"]
    shape = intervals.G.shape
    columns = [
        intervals.G,
        intervals.G_hat,
        np.broadcast_to(intervals.conformal.lo, shape),
        np.broadcast_to(intervals.conformal.hi, shape),
        np.broadcast_to(intervals.baseline.lo, shape),
        np.broadcast_to(intervals.baseline.hi, shape),
    ]
    rows = [
        [intervals.model, intervals.trajectory, *(float(v) for v in intervals.X[i]), *(float(c[i]) for c in columns)]
        for i in range(shape[0])
    ]
    return _csv(header, rows)


def format_histogram_csv(edges: Sequence[float], counts: Sequence[int]) -> str:
    rows = [[float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(len(counts))]
    return _csv(["bin_lo", "bin_hi", "count"], rows)


def format_ablation_csv(result: AblationResult, n: int) -> str:
    """Per-round coverages C_k of one calibration size."""
    if result.kind is not AblationKind.CALIB_SIZE:
        raise ValueError("Per-round coverages only exist for the calibration-size ablation")
    rows = [[k, n, float(c)] for k, c in enumerate(result.round_coverages[n])]
    return _csv(["round", "n", "coverage"], rows)


def format_ablation_summary_csv(result: AblationResult) -> str:
    rows = []
    for n in result.n_values:
        values = np.asarray(result.round_coverages[n])
        rows.append([n, result.rounds, result.n_val, float(values.mean()), float(values.std())])
    return _csv(["n", "rounds", "n_val", "mean_coverage", "std_coverage"], rows)


def format_loss_log_csv(history: Iterable[object]) -> str:
    """Training loss log with columns epoch, loss, lr."""
    return _csv(["epoch", "loss", "lr"], [[h.epoch, float(h.loss), float(h.lr)] for h in history])  # type: ignore[attr-defined]


def write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")
    logger.debug(f"Wrote {path}")
    return path


class ReportWriter:
    """Writes the evaluation and ablation CSV files into one directory."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)

    def write_reports(self, reports: Sequence[CoverageReport], bins: int = 20) -> List[Path]:
        written = [
            write_text(self.out_dir / "report.csv", format_report_csv(reports)),
            write_text(self.out_dir / "coverages.csv", format_coverages_csv(reports)),
            write_text(self.out_dir / "lengths.csv", format_lengths_csv(reports)),
        ]
        conformal = [r for r in reports if r.conformalized]
        if conformal:
            edges, counts = coverage_histogram(conformal[0], bins)
            written.append(write_text(self.out_dir / "coverage_hist.csv", format_histogram_csv(edges, counts)))
        return written

    def write_trajectory(self, intervals: TrajectoryIntervals) -> Path:
        return write_text(self.out_dir / "trajectory_intervals.csv", format_trajectory_csv(intervals))

    def write_ablation(self, result: AblationResult) -> List[Path]:
        if result.kind is AblationKind.ADAPTIVITY:
            text = format_histogram_csv(result.bin_edges, result.counts)
            return [write_text(self.out_dir / "length_hist.csv", text)]
        written = [
            write_text(self.out_dir / f"ablation_n{n}.csv", format_ablation_csv(result, n)) for n in result.n_values
        ]
        written.append(write_text(self.out_dir / "ablation_summary.csv", format_ablation_summary_csv(result)))
        return written


def summary_table(reports: Sequence[CoverageReport], title: Optional[str] = None) -> Table:
    """Rich table comparing conformalized and baseline coverage and length."""
    table = Table(title=title or "Coverage summary")
    table.add_column("Model", style="cyan", no_wrap=True)
    table.add_column("Intervals", style="magenta")
    table.add_column("alpha", justify="right")
    table.add_column("Coverage %", style="green", justify="right")
    table.add_column("Coverage", justify="right")
    table.add_column("Mean length", style="yellow", justify="right")
    table.add_column("Unbounded", justify="right", style="dim")
    for r in reports:
        table.add_row(
            r.model,
            "conformalized" if r.conformalized else "baseline",
            f"{r.alpha:g}",
            f"{100.0 * r.mean_coverage:.2f}",
            f"{r.mean_coverage:.4f}",
            f"{r.mean_length:.4g}",
            str(r.unbounded_count),
        )
    return table


def print_summary(console: Console, reports: Sequence[CoverageReport], title: Optional[str] = None) -> None:
    console.print(summary_table(reports, title))


def ablation_table(result: AblationResult) -> Table:
    if result.kind is AblationKind.ADAPTIVITY:
        table = Table(title="Interval-length adaptivity")
        table.add_column("Bins", justify="right")
        table.add_column("Lengths", justify="right")
        table.add_column("std / mean", style="green", justify="right")
        table.add_row(str(len(result.counts)), str(sum(result.counts)), f"{result.adaptivity:.4f}")
        return table
    table = Table(title=f"Coverage vs calibration size ({result.rounds} rounds, n_val={result.n_val})")
    table.add_column("n", justify="right", style="cyan")
    table.add_column("Mean coverage", justify="right", style="green")
    table.add_column("Std", justify="right", style="yellow")
    for n in result.n_values:
        values = np.asarray(result.round_coverages[n])
        table.add_row(str(n), f"{values.mean():.4f}", f"{values.std():.4f}")
    return table
