"""Dataset ingestion: folder-per-class trees and answer-key CSVs."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Iterable

import numpy as np

from semscale.errors import AmbiguousLayout, DataError, DuplicatePath, EmptyDataset, MalformedRow

IMAGE_EXTENSIONS = frozenset({".jpg", ".jpeg", ".png", ".bmp", ".webp"})


def normalize_class(name: str) -> str:
    return name.strip()


@dataclass(frozen=True)
class Layout:
    """Rule for reading the ground-truth class out of an image path.

    ``parent_dir`` takes the directory holding the file; ``path_component``
    takes the directory at ``index`` (0-based, counted from the scan root).
    """

    kind: str = "parent_dir"
    index: int = 0

    @classmethod
    def parent_dir(cls) -> Layout:
        return cls("parent_dir")

    @classmethod
    def path_component(cls, index: int) -> Layout:
        if index < 0:
            raise ValueError("path_component index must be non-negative")
        return cls("path_component", index)

    @classmethod
    def parse(cls, text: str) -> Layout:
        text = text.strip()
        if text == "parent_dir":
            return cls.parent_dir()
        name, sep, idx = text.partition(":")
        if name == "path_component" and sep and idx.strip().isdigit():
            return cls.path_component(int(idx))
        raise ValueError(f"unknown layout {text!r} (expected parent_dir or path_component:N)")

    def __str__(self) -> str:
        return self.kind if self.kind == "parent_dir" else f"path_component:{self.index}"


@dataclass(frozen=True)
class ImageRecord:
    path: str
    true_class: str
    embedding: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.path:
            raise DataError("image record path must be non-empty")
        if self.embedding is not None:
            vec = np.asarray(self.embedding, dtype=np.float64)
            if vec.ndim != 1 or abs(float(np.linalg.norm(vec)) - 1.0) > 1e-6:
                raise DataError(f"{self.path}: cached embedding must be a unit-length vector")
            vec.setflags(write=False)
            object.__setattr__(self, "embedding", vec)


@dataclass(frozen=True)
class Dataset:
    """Immutable list of records plus the ordered set of base classes.

    ``root`` is where relative record paths are read from; it is ``None``
    for synthetic datasets and for answer keys whose paths are used as-is.
    """

    records: tuple[ImageRecord, ...]
    classes: tuple[str, ...]
    name: str = "dataset"
    root: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.records:
            raise EmptyDataset(f"dataset {self.name!r} has no records")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("duplicate class names")
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            raise DataError("record paths must be unique")
        seen = {r.true_class for r in self.records}
        if seen != set(self.classes):
            raise DataError("classes must equal the set of record classes")

    @classmethod
    def from_records(cls, records: Iterable[ImageRecord], name: str = "dataset", root: str | None = None) -> Dataset:
        """Sort records by path and derive the class set in sorted order."""
        ordered = sorted(records, key=lambda r: r.path)
        classes = sorted({r.true_class for r in ordered})
        return cls(tuple(ordered), tuple(classes), name=name, root=root)

    @property
    def initial_category_count(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.records)


def extract_class_from_path(path: str, layout: Layout) -> str:
    if not path:
        raise AmbiguousLayout(path, "empty path")
    pure = PurePosixPath(path.replace(os.sep, "/"))
    parts = pure.parts[1:] if pure.is_absolute() else pure.parts
    dirs = parts[:-1]
    if layout.kind == "parent_dir":
        if not dirs:
            raise AmbiguousLayout(path, "file has no parent directory")
        name = dirs[-1]
    elif layout.kind == "path_component":
        if layout.index >= len(dirs):
            raise AmbiguousLayout(path, f"no directory component at index {layout.index}")
        name = dirs[layout.index]
    else:
        raise ValueError(f"unknown layout kind {layout.kind!r}")
    name = normalize_class(name)
    if not name:
        raise AmbiguousLayout(path, "class directory name is blank")
    return name


def _is_image(name: str) -> bool:
    return os.path.splitext(name)[1].lower() in IMAGE_EXTENSIONS


def scan_dataset(root: str | os.PathLike, layout: Layout | None = None, name: str | None = None) -> Dataset:
    """Walk ``root`` and label every image file by ``layout``.

    Record paths are POSIX paths relative to ``root``.
    """
    layout = layout or Layout.parent_dir()
    base = Path(root)
    if not base.is_dir():
        raise DataError(f"dataset root {str(base)!r} is not a readable directory")
    rel_paths: list[str] = []
    for dirpath, dirnames, filenames in os.walk(base):
        dirnames.sort()
        for fname in filenames:
            if _is_image(fname):
                rel_paths.append(Path(dirpath, fname).relative_to(base).as_posix())
    if not rel_paths:
        raise EmptyDataset(f"no image files under {str(base)!r}")
    rel_paths.sort()
    records = [ImageRecord(p, extract_class_from_path(p, layout)) for p in rel_paths]
    return Dataset.from_records(records, name=name or base.resolve().name, root=str(base))


def parse_answer_key(path: str | os.PathLike) -> dict[str, str]:
    """Read a ``filepath,label`` CSV into a path -> class mapping."""
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_answer_key_text(text)


def parse_answer_key_text(text: str) -> dict[str, str]:
    reader = csv.reader(io.StringIO(text))
    mapping: dict[str, str] = {}
    header_seen = False
    for row in reader:
        line = reader.line_num
        if not header_seen:
            if [c.strip() for c in row] != ["filepath", "label"]:
                raise MalformedRow(line, "header must be 'filepath,label'")
            header_seen = True
            continue
        if not row:
            continue
        if len(row) != 2:
            raise MalformedRow(line, f"expected 2 columns, got {len(row)}")
        fpath, label = row[0].strip(), normalize_class(row[1])
        if not fpath or not label:
            raise MalformedRow(line, "empty filepath or label")
        if fpath in mapping:
            raise DuplicatePath(fpath, line)
        mapping[fpath] = label
    if not header_seen:
        raise MalformedRow(1, "missing header row")
    return mapping


def write_answer_key(mapping: dict[str, str], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filepath", "label"])
        for fpath in sorted(mapping):
            writer.writerow([fpath, mapping[fpath]])


def dataset_from_answer_key(path: str | os.PathLike, name: str | None = None, root: str | None = None) -> Dataset:
    """Build a Dataset from an answer key; paths are kept exactly as written."""
    mapping = parse_answer_key(path)
    if not mapping:
        raise EmptyDataset(f"answer key {str(path)!r} has no rows")
    records = [ImageRecord(p, c) for p, c in mapping.items()]
    key_path = Path(path)
    return Dataset.from_records(records, name=name or key_path.stem, root=root)
