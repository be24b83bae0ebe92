"""Offline generative model of noisy label and image embeddings.

Each class has a latent unit prototype. Label ``t`` of class ``c`` is
``normalize(prototype_c + sigma_label * g)`` (template 0 is the prototype
itself) and image ``i`` is ``normalize(prototype_c + sigma_image * h)``, with
``g`` and ``h`` standard-normal vectors.

Randomness comes from PCG64 generators seeded through ``numpy.random.SeedSequence``
with entropy ``[seed, purpose, ...keys]``::

    prototypes   [seed, 0, attempt]
    label noise  [seed, 1, trial, class, template]
    image noise  [seed, 2, trial, class, image]

so every vector has its own stream and adding images or templates never
shifts any other draw.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from semscale.backend import EmbeddingBackend
from semscale.classifier import LabelMatrix, accuracy, classify_many
from semscale.dataset import Dataset, ImageRecord
from semscale.errors import DegenerateWorld, UnknownSurface
from semscale.labels import BUILTIN_TEMPLATES, EquivalenceMap, TemplateList, render

PURPOSE_PROTOTYPE = 0
PURPOSE_LABEL = 1
PURPOSE_IMAGE = 2
MAX_RESAMPLES = 100
DEGENERATE_COS = 1.0 - 1e-9


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=-1, keepdims=True)


@dataclass(frozen=True)
class SyntheticWorld:
    n_classes: int
    dim: int
    sigma_image: float
    sigma_label: float
    seed: int
    prototypes: np.ndarray = field(repr=False, compare=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SyntheticWorld):
            return NotImplemented
        return self.params == other.params and np.array_equal(self.prototypes, other.prototypes)

    __hash__ = None  # type: ignore[assignment]

    @property
    def params(self) -> tuple:
        return (self.n_classes, self.dim, self.sigma_image, self.sigma_label, self.seed)

    @property
    def class_names(self) -> tuple[str, ...]:
        width = max(2, len(str(self.n_classes - 1)))
        return tuple(f"class_{c:0{width}d}" for c in range(self.n_classes))

    def label_vector(self, c: int, t: int, trial: int = 0) -> np.ndarray:
        proto = self.prototypes[c]
        if t == 0 or self.sigma_label == 0:
            return proto.copy()
        noise = _rng(self.seed, PURPOSE_LABEL, trial, c, t).standard_normal(self.dim)
        v = proto + self.sigma_label * noise
        return v / np.linalg.norm(v)

    def image_vector(self, c: int, i: int, trial: int = 0) -> np.ndarray:
        proto = self.prototypes[c]
        if self.sigma_image == 0:
            return proto.copy()
        noise = _rng(self.seed, PURPOSE_IMAGE, trial, c, i).standard_normal(self.dim)
        v = proto + self.sigma_image * noise
        return v / np.linalg.norm(v)


def generate_world(n_classes: int, dim: int, sigma_image: float, sigma_label: float, seed: int) -> SyntheticWorld:
    if n_classes < 2:
        raise ValueError("a world needs at least 2 classes")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if sigma_image < 0 or sigma_label < 0:
        raise ValueError("noise scales must be non-negative")
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    for attempt in range(MAX_RESAMPLES):
        protos = _unit_rows(_rng(seed, PURPOSE_PROTOTYPE, attempt).standard_normal((n_classes, dim)))
        gram = protos @ protos.T
        np.fill_diagonal(gram, -1.0)
        if gram.max() <= DEGENERATE_COS:
            protos.setflags(write=False)
            return SyntheticWorld(n_classes, dim, float(sigma_image), float(sigma_label), seed, protos)
    raise DegenerateWorld(f"could not draw {n_classes} distinct prototypes in dim {dim}")


def surface_name(world: SyntheticWorld, c: int, t: int) -> str:
    name = world.class_names[c]
    return name if t == 0 else f"{name}~t{t}"


def world_equivalence(world: SyntheticWorld, k: int) -> EquivalenceMap:
    """Equivalence map over the simulator's own surface names."""
    names = world.class_names
    surfaces = tuple(surface_name(world, c, t) for t in range(k + 1) for c in range(world.n_classes))
    s2b = {s: names[i % world.n_classes] for i, s in enumerate(surfaces)}
    b2s = {names[c]: tuple(surface_name(world, c, t) for t in range(k + 1)) for c in range(world.n_classes)}
    return EquivalenceMap(s2b, b2s, k, surfaces)


def sample_labels(world: SyntheticWorld, k: int, trial: int = 0) -> LabelMatrix:
    if k < 0:
        raise ValueError("k must be >= 0")
    surfaces, vecs = [], []
    for t in range(k + 1):
        for c in range(world.n_classes):
            surfaces.append(surface_name(world, c, t))
            vecs.append(world.label_vector(c, t, trial))
    return LabelMatrix(tuple(surfaces), np.vstack(vecs), k)


def image_path(world: SyntheticWorld, c: int, i: int, n_per_class: int) -> str:
    width = max(4, len(str(n_per_class - 1)))
    return f"sim://{world.class_names[c]}/img_{i:0{width}d}"


def sample_images(world: SyntheticWorld, n_per_class: int, trial: int = 0) -> Dataset:
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    names = world.class_names
    records = [
        ImageRecord(image_path(world, c, i, n_per_class), names[c], world.image_vector(c, i, trial))
        for c in range(world.n_classes)
        for i in range(n_per_class)
    ]
    return Dataset.from_records(records, name=f"sim-c{world.n_classes}-d{world.dim}-s{world.seed}")


def _trial_accuracies(world: SyntheticWorld, ks: Sequence[int], n_per_class: int, trial: int) -> list[float]:
    data = sample_images(world, n_per_class, trial)
    x = np.vstack([r.embedding for r in data.records])
    paths = [r.path for r in data.records]
    full = sample_labels(world, max(ks), trial)
    out = []
    for k in ks:
        n = world.n_classes * (k + 1)
        labels = LabelMatrix(full.surfaces[:n], full.vectors[:n], k)
        out.append(accuracy(classify_many(x, labels, world_equivalence(world, k), paths), data))
    return out


@dataclass(frozen=True)
class MonteCarloCurve:
    ks: tuple[int, ...]
    per_trial: np.ndarray  # shape (n_trials, len(ks))

    @property
    def mean(self) -> np.ndarray:
        return self.per_trial.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        n = self.per_trial.shape[0]
        if n < 2:
            return np.zeros(len(self.ks))
        return self.per_trial.std(axis=0, ddof=1) / math.sqrt(n)

    def at(self, k: int) -> tuple[float, float]:
        i = self.ks.index(k)
        return float(self.mean[i]), float(self.stderr[i])


def monte_carlo_curve(
    world: SyntheticWorld, ks: Sequence[int], n_per_class: int, n_trials: int, workers: int = 1
) -> MonteCarloCurve:
    """Accuracy at each k averaged over ``n_trials`` label/image resamplings.

    A trial's draws depend only on ``(seed, trial)``, so every k sees the same
    samples and ``workers > 1`` gives results identical to a serial run.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    ks = tuple(int(k) for k in ks)
    if not ks or min(ks) < 0:
        raise ValueError("ks must be non-empty and non-negative")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda tr: _trial_accuracies(world, ks, n_per_class, tr), range(n_trials)))
    else:
        rows = [_trial_accuracies(world, ks, n_per_class, tr) for tr in range(n_trials)]
    return MonteCarloCurve(ks, np.asarray(rows, dtype=np.float64))


def monte_carlo_accuracy(
    world: SyntheticWorld, k: int, n_per_class: int, n_trials: int, workers: int = 1
) -> tuple[float, float]:
    """Mean accuracy percentage at ``k`` and its standard error."""
    return monte_carlo_curve(world, (k,), n_per_class, n_trials, workers).at(k)


class SimulatorBackend(EmbeddingBackend):
    """Serves a world's label vectors under template-generated surface names.

    Surface ``render(class_c, templates[t])`` gets ``world.label_vector(c, t)``.
    Images must carry their embeddings (see :func:`sample_images`).
    """

    def __init__(self, world: SyntheticWorld, templates: TemplateList = BUILTIN_TEMPLATES, trial: int = 0):
        super().__init__()
        self.world = world
        self.trial = trial
        self._index: dict[str, tuple[int, int]] = {}
        for c, name in enumerate(world.class_names):
            for t, tmpl in enumerate(templates.entries):
                self._index.setdefault(render(name, tmpl), (c, t))

    @property
    def identity(self) -> str:
        return "simulator:" + ":".join(map(str, self.world.params)) + f":trial={self.trial}"

    def _compute_texts(self, labels: list[str]) -> list[np.ndarray]:
        out = []
        for s in labels:
            if s not in self._index:
                raise UnknownSurface(f"simulator has no label {s!r}")
            out.append(self.world.label_vector(*self._index[s], self.trial))
        return out

    def _compute_images(self, records, root):
        raise UnknownSurface("simulator images must carry embeddings")


def simulated_dataset(world: SyntheticWorld, n_per_class: int, templates: TemplateList = BUILTIN_TEMPLATES):
    """Dataset plus matching backend, ready for :func:`run_experiment`."""
    return sample_images(world, n_per_class), SimulatorBackend(world, templates)
