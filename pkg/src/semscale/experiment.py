"""Iterate expand -> embed -> classify -> measure until accuracy stops moving."""

from __future__ import annotations

import enum
import itertools
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from semscale.backend import EmbeddingBackend
from semscale.classifier import LabelMatrix, Prediction, accuracy, classify_many
from semscale.dataset import Dataset
from semscale.labels import BUILTIN_TEMPLATES, TemplateList, build_equivalence_map

log = logging.getLogger(__name__)

SMALL_GROUP_THRESHOLD = 10


class StopReason(str, enum.Enum):
    STAGNATED = "stagnated"
    DECREASED = "decreased"
    FLUCTUATED = "fluctuated"
    EXHAUSTED_TEMPLATES = "exhausted_templates"
    MAX_K = "max_k"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class IterationResult:
    k: int
    accuracy_pct: float
    delta_from_prev: float
    cumulative_delta_from_base: float
    n_surfaces: int
    predictions_path: str = ""
    predictions: tuple[Prediction, ...] = field(default=(), compare=False, repr=False)


@dataclass(frozen=True)
class StopPolicy:
    """Stopping thresholds, in accuracy percentage points.

    ``early_stop=False`` disables the stagnated/decreased/fluctuated rules so
    a run only ends at ``max_k`` or when templates run out.
    """

    epsilon_pp: float = 0.1
    patience: int = 2
    max_k: int = 15
    schedule: str = "sequential"
    geometric_base: int = 2
    early_stop: bool = True

    def __post_init__(self) -> None:
        if not self.epsilon_pp > 0:
            raise ValueError("epsilon_pp must be > 0")
        if self.patience < 1 or self.max_k < 1:
            raise ValueError("patience and max_k must be >= 1")
        if self.schedule not in ("sequential", "geometric"):
            raise ValueError(f"schedule must be sequential or geometric, got {self.schedule!r}")
        if self.geometric_base < 2:
            raise ValueError("geometric base must be >= 2")

    def iterations(self) -> Iterator[int]:
        if self.schedule == "sequential":
            yield from itertools.count()
        else:
            yield 0
            k = 1
            while True:
                yield k
                k *= self.geometric_base


@dataclass(frozen=True)
class ExperimentReport:
    dataset_name: str
    initial_category_count: int
    history: tuple[IterationResult, ...]
    stop_reason: StopReason

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        object.__setattr__(self, "stop_reason", StopReason(self.stop_reason))
        if not self.history:
            raise ValueError("report needs at least one iteration")

    @property
    def peak_delta(self) -> float:
        return max(r.cumulative_delta_from_base for r in self.history)

    @property
    def peak_k(self) -> int:
        best = self.peak_delta
        return next(r.k for r in self.history if r.cumulative_delta_from_base == best)

    @property
    def size_group(self) -> str:
        return size_group(self.initial_category_count)


def size_group(initial_category_count: int) -> str:
    return "small" if initial_category_count < SMALL_GROUP_THRESHOLD else "large"


def detect_stop(history: Sequence[IterationResult], policy: StopPolicy) -> StopReason | None:
    """Return why the run should stop now, or ``None`` to continue.

    Rules look at ``delta_from_prev`` of iterations after the baseline.
    Precedence: decreased > fluctuated > stagnated > max_k.
    """
    if not history:
        raise ValueError("history must be non-empty")
    eps = policy.epsilon_pp
    deltas = [r.delta_from_prev for r in history[1:]]
    if policy.early_stop and deltas:
        if deltas[-1] < -eps:
            return StopReason.DECREASED
        last3 = deltas[-3:]
        if (
            len(last3) == 3
            and all(abs(d) >= eps for d in last3)
            and all((a > 0) != (b > 0) for a, b in zip(last3, last3[1:]))
        ):
            return StopReason.FLUCTUATED
        recent = deltas[-policy.patience :]
        if len(recent) == policy.patience and all(abs(d) < eps for d in recent):
            return StopReason.STAGNATED
    if history[-1].k >= policy.max_k:
        return StopReason.MAX_K
    return None


def predictions_filename(k: int) -> str:
    return f"predictions_k{k:02d}.csv"


def resolved_filename(k: int) -> str:
    return f"resolved_k{k:02d}.csv"


def run_iteration(
    dataset: Dataset,
    templates: TemplateList,
    k: int,
    backend: EmbeddingBackend,
    *,
    history: Sequence[IterationResult] = (),
    output_dir: str | os.PathLike | None = None,
    exceptions: Mapping[str, str] | None = None,
) -> IterationResult:
    """Measure accuracy at iteration ``k``.

    ``history`` supplies the baseline and previous accuracies for the delta
    fields; with an empty history this iteration is its own baseline.
    """
    from semscale.report import write_resolved_csv, write_results_csv

    eq = build_equivalence_map(dataset.classes, templates, k, exceptions)
    label_vecs = backend.embed_texts(eq.surfaces)
    labels = LabelMatrix(eq.surfaces, np.vstack(label_vecs), k)
    image_vecs = np.vstack(backend.embed_images(dataset.records, root=dataset.root))
    preds = classify_many(image_vecs, labels, eq, [r.path for r in dataset.records])
    acc = accuracy(preds, dataset)

    base_acc = history[0].accuracy_pct if history else acc
    prev_acc = history[-1].accuracy_pct if history else acc
    pred_path = ""
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        pred_path = str(out / predictions_filename(k))
        write_results_csv(preds, pred_path)
        write_resolved_csv(preds, out / resolved_filename(k))
    log.info("k=%d surfaces=%d accuracy=%.2f%%", k, len(eq), acc)
    return IterationResult(
        k=k,
        accuracy_pct=acc,
        delta_from_prev=acc - prev_acc,
        cumulative_delta_from_base=acc - base_acc,
        n_surfaces=len(eq),
        predictions_path=pred_path,
        predictions=tuple(preds),
    )


def run_experiment(
    dataset: Dataset,
    templates: TemplateList = BUILTIN_TEMPLATES,
    policy: StopPolicy | None = None,
    backend: EmbeddingBackend | None = None,
    *,
    output_dir: str | os.PathLike | None = None,
    exceptions: Mapping[str, str] | None = None,
) -> ExperimentReport:
    from semscale.report import write_history_csv, write_iteration_report

    if backend is None:
        raise ValueError("an embedding backend is required")
    policy = policy or StopPolicy()
    # surface collisions must surface before any backend traffic
    build_equivalence_map(dataset.classes, templates, min(templates.max_k, policy.max_k), exceptions)

    history: list[IterationResult] = []
    reason: StopReason | None = None
    try:
        for k in policy.iterations():
            # a geometric step can overshoot both limits; report the tighter one
            if history and k > policy.max_k and policy.max_k <= templates.max_k:
                reason = StopReason.MAX_K
                break
            if k > templates.max_k:
                reason = StopReason.EXHAUSTED_TEMPLATES
                break
            history.append(
                run_iteration(
                    dataset, templates, k, backend, history=history, output_dir=output_dir, exceptions=exceptions
                )
            )
            reason = detect_stop(history, policy)
            if reason is not None:
                break
    except Exception as exc:
        exc.partial_history = list(history)  # type: ignore[attr-defined]
        if output_dir is not None and history:
            write_history_csv(history, Path(output_dir) / "report.csv")
        raise

    assert reason is not None
    report = ExperimentReport(dataset.name, dataset.initial_category_count, tuple(history), reason)
    if output_dir is not None:
        write_iteration_report(report, output_dir)
    return report


class SeriesPoint(NamedTuple):
    k: int
    mean: float
    n_datasets: int


class GroupMean(NamedTuple):
    size_group: str
    mean_peak_delta: float
    n_datasets: int


class PeakEntry(NamedTuple):
    dataset: str
    initial_category_count: int
    peak_k: int
    peak_delta: float


@dataclass(frozen=True)
class MetricBundle:
    trends: tuple[tuple[str, tuple[tuple[int, float], ...]], ...]
    cumulative_mean: tuple[SeriesPoint, ...]
    delta_mean: tuple[SeriesPoint, ...]
    group_means: tuple[GroupMean, ...]
    peaks: tuple[PeakEntry, ...]


def _mean_by_k(reports: Sequence[ExperimentReport], attr: str, min_k: int = 0) -> tuple[SeriesPoint, ...]:
    buckets: dict[int, list[float]] = {}
    for rep in reports:
        for r in rep.history:
            if r.k >= min_k:
                buckets.setdefault(r.k, []).append(getattr(r, attr))
    return tuple(SeriesPoint(k, float(np.mean(v)), len(v)) for k, v in sorted(buckets.items()))


def compute_metric_series(reports: Sequence[ExperimentReport]) -> MetricBundle:
    """Aggregate reports into per-figure series.

    A mean at iteration k only includes datasets whose history reached k.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("at least one report is required")
    trends = tuple((rep.dataset_name, tuple((r.k, r.accuracy_pct) for r in rep.history)) for rep in reports)
    groups: dict[str, list[float]] = {}
    for rep in reports:
        groups.setdefault(rep.size_group, []).append(rep.peak_delta)
    group_means = tuple(GroupMean(g, float(np.mean(groups[g])), len(groups[g])) for g in ("small", "large") if g in groups)
    peaks = tuple(PeakEntry(rep.dataset_name, rep.initial_category_count, rep.peak_k, rep.peak_delta) for rep in reports)
    return MetricBundle(
        trends=trends,
        cumulative_mean=_mean_by_k(reports, "cumulative_delta_from_base"),
        delta_mean=_mean_by_k(reports, "delta_from_prev", min_k=1),
        group_means=group_means,
        peaks=peaks,
    )
