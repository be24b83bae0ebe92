"""On-disk artifacts: prediction CSVs, per-run reports and plot-ready series.

Every numeric column is written with four decimals so that re-running with
the same inputs yields byte-identical files.
"""

from __future__ import annotations

import contextlib
import csv
import os
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

from semscale.classifier import Prediction
from semscale.errors import DataError, SemscaleError

if TYPE_CHECKING:
    from semscale.experiment import ExperimentReport, IterationResult, MetricBundle

RESULTS_HEADER = ("filepath", "classification")
RESOLVED_HEADER = ("filepath", "classification", "base_class")
REPORT_HEADER = ("k", "n_surfaces", "accuracy_pct", "delta_from_prev", "cumulative_delta_from_base")
FIG_HEADERS = {
    "fig1_trends.csv": ("dataset", "k", "accuracy_pct"),
    "fig2_cumulative_mean.csv": ("k", "mean_cumulative_delta_from_base", "n_datasets"),
    "fig3_delta_mean.csv": ("k", "mean_delta_from_prev", "n_datasets"),
    "fig4_group_means.csv": ("size_group", "mean_peak_delta", "n_datasets"),
    "fig5_peaks.csv": ("dataset", "initial_category_count", "peak_k", "peak_delta"),
}
LOCK_NAME = ".semscale.lock"


class OutputLocked(SemscaleError):
    pass


def fmt(x: float) -> str:
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def _write_rows(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        writer.writerows(rows)


def write_results_csv(predictions: Sequence[Prediction], path: str | os.PathLike) -> None:
    """Write ``filepath,classification`` with the predicted surface label."""
    if not predictions:
        raise ValueError("no predictions to write")
    _write_rows(path, RESULTS_HEADER, ((p.record_path, p.surface) for p in predictions))


def write_resolved_csv(predictions: Sequence[Prediction], path: str | os.PathLike) -> None:
    _write_rows(path, RESOLVED_HEADER, ((p.record_path, p.surface, p.base) for p in predictions))


def read_results_csv(path: str | os.PathLike) -> list[tuple[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != RESULTS_HEADER:
        raise DataError(f"{path}: header must be {','.join(RESULTS_HEADER)}")
    return [(r[0], r[1]) for r in rows[1:]]


def write_history_csv(history: Sequence[IterationResult], path: str | os.PathLike) -> None:
    rows = (
        (r.k, r.n_surfaces, fmt(r.accuracy_pct), fmt(r.delta_from_prev), fmt(r.cumulative_delta_from_base))
        for r in history
    )
    _write_rows(path, REPORT_HEADER, rows)


def write_iteration_report(report: ExperimentReport, directory: str | os.PathLike) -> None:
    """Write ``report.csv`` and ``summary.txt`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_history_csv(report.history, out / "report.csv")
    summary = [
        f"dataset_name={report.dataset_name}",
        f"initial_category_count={report.initial_category_count}",
        f"iterations={len(report.history)}",
        f"stop_reason={report.stop_reason.value}",
        f"peak_k={report.peak_k}",
        f"peak_delta={fmt(report.peak_delta)}",
        f"size_group={report.size_group}",
    ]
    with open(out / "summary.txt", "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(summary) + "\n")


def read_iteration_report(directory: str | os.PathLike) -> ExperimentReport:
    """Rebuild an ExperimentReport from ``report.csv`` + ``summary.txt``."""
    from semscale.experiment import ExperimentReport, IterationResult

    d = Path(directory)
    try:
        with open(d / "report.csv", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        summary_text = (d / "summary.txt").read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{d}: not an experiment output directory ({exc.strerror})") from exc
    if not rows or tuple(rows[0]) != REPORT_HEADER:
        raise DataError(f"{d / 'report.csv'}: unexpected header")
    summary = dict(line.split("=", 1) for line in summary_text.splitlines() if "=" in line)
    try:
        history = tuple(
            IterationResult(
                k=int(r[0]),
                n_surfaces=int(r[1]),
                accuracy_pct=float(r[2]),
                delta_from_prev=float(r[3]),
                cumulative_delta_from_base=float(r[4]),
                predictions_path=str(d / f"predictions_k{int(r[0]):02d}.csv"),
            )
            for r in rows[1:]
        )
        return ExperimentReport(
            dataset_name=summary["dataset_name"],
            initial_category_count=int(summary["initial_category_count"]),
            history=history,
            stop_reason=summary["stop_reason"],
        )
    except (KeyError, ValueError, IndexError) as exc:
        raise DataError(f"{d}: malformed report ({exc})") from exc


def emit_plot_series(bundle: MetricBundle, directory: str | os.PathLike) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    tables = {
        "fig1_trends.csv": [(name, k, fmt(acc)) for name, series in bundle.trends for k, acc in series],
        "fig2_cumulative_mean.csv": [(p.k, fmt(p.mean), p.n_datasets) for p in bundle.cumulative_mean],
        "fig3_delta_mean.csv": [(p.k, fmt(p.mean), p.n_datasets) for p in bundle.delta_mean],
        "fig4_group_means.csv": [(g.size_group, fmt(g.mean_peak_delta), g.n_datasets) for g in bundle.group_means],
        "fig5_peaks.csv": [(p.dataset, p.initial_category_count, p.peak_k, fmt(p.peak_delta)) for p in bundle.peaks],
    }
    written = []
    for name, rows in tables.items():
        _write_rows(out / name, FIG_HEADERS[name], rows)
        written.append(out / name)
    return written


@contextlib.contextmanager
def output_lock(directory: str | os.PathLike) -> Iterator[Path]:
    """Hold an exclusive lock file so two runs never share an output dir."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise OutputLocked(f"{out} is in use by another run (remove {lock} if stale)") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)
