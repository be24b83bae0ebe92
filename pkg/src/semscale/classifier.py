"""Cosine-argmax zero-shot classification and percentage accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from semscale.dataset import Dataset
from semscale.errors import CoverageMismatch, DimensionMismatch, UnknownSurface, ZeroVector
from semscale.labels import EquivalenceMap


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vectors have shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class LabelMatrix:
    surfaces: tuple[str, ...]
    vectors: np.ndarray
    iteration: int

    def __post_init__(self) -> None:
        surfaces = tuple(self.surfaces)
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(surfaces):
            raise DimensionMismatch("need exactly one label vector per surface")
        if len(set(surfaces)) != len(surfaces):
            raise ValueError("surfaces must be unique")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            raise ZeroVector("label vectors must be non-zero")
        vectors = vectors / norms[:, None]
        vectors.setflags(write=False)
        object.__setattr__(self, "surfaces", surfaces)
        object.__setattr__(self, "vectors", vectors)

    def __len__(self) -> int:
        return len(self.surfaces)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Prediction:
    record_path: str
    surface: str
    base: str
    score: float


def _check_compatible(labels: LabelMatrix, eq: EquivalenceMap) -> None:
    if len(labels) == 0:
        raise ValueError("label matrix is empty")
    if labels.iteration != eq.iteration:
        raise UnknownSurface(f"label matrix is for iteration {labels.iteration}, map for {eq.iteration}")
    missing = [s for s in labels.surfaces if s not in eq.surface_to_base]
    if missing:
        raise UnknownSurface(f"surfaces not in equivalence map: {missing[:5]}")


def _scores(image_vecs: np.ndarray, labels: LabelMatrix) -> np.ndarray:
    if image_vecs.shape[-1] != labels.dim:
        raise DimensionMismatch(f"image dim {image_vecs.shape[-1]} != label dim {labels.dim}")
    norms = np.linalg.norm(image_vecs, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("image vector is zero")
    # score each distinct label row once: BLAS may round identical rows
    # differently depending on their position, which would break exact ties
    uniq, inverse = np.unique(labels.vectors, axis=0, return_inverse=True)
    scores = np.clip((image_vecs / norms) @ uniq.T, -1.0, 1.0)
    return scores[:, inverse.reshape(-1)]


def classify(image_vec, labels: LabelMatrix, eq: EquivalenceMap, record_path: str = "") -> Prediction:
    """Pick the most similar surface; exact ties go to the lowest index."""
    _check_compatible(labels, eq)
    x = np.asarray(image_vec, dtype=np.float64)
    scores = _scores(x[None, :], labels)[0]
    i = int(np.argmax(scores))
    surface = labels.surfaces[i]
    return Prediction(record_path, surface, eq.surface_to_base[surface], float(scores[i]))


def classify_many(
    image_vecs, labels: LabelMatrix, eq: EquivalenceMap, record_paths: Sequence[str]
) -> list[Prediction]:
    """Vectorised :func:`classify` over the rows of ``image_vecs``."""
    _check_compatible(labels, eq)
    x = np.asarray(image_vecs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(record_paths):
        raise DimensionMismatch("need one image vector per record path")
    scores = _scores(x, labels)
    best = np.argmax(scores, axis=1)
    best_scores = scores[np.arange(len(best)), best]
    out = []
    for path, i, sc in zip(record_paths, best.tolist(), best_scores.tolist()):
        surface = labels.surfaces[i]
        out.append(Prediction(path, surface, eq.surface_to_base[surface], sc))
    return out


def accuracy(predictions: Iterable[Prediction], truth: Dataset) -> float:
    """Percentage of records whose predicted base class equals the truth."""
    preds = list(predictions)
    by_path = {p.record_path: p for p in preds}
    truth_paths = {r.path for r in truth.records}
    missing = sorted(truth_paths - by_path.keys())
    extra = sorted(by_path.keys() - truth_paths)
    if missing or extra or len(by_path) != len(preds):
        raise CoverageMismatch(missing, extra)
    correct = sum(1 for r in truth.records if by_path[r.path].base == r.true_class)
    return 100.0 * correct / len(truth.records)
