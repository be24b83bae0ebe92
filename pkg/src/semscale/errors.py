"""Exception hierarchy.

``DataError`` covers bad inputs (CLI exit code 3); ``BackendError`` covers
embedding-service failures (exit code 2).
"""

from __future__ import annotations


class SemscaleError(Exception):
    pass


class DataError(SemscaleError):
    pass


class BackendError(SemscaleError):
    pass


class EmptyDataset(DataError):
    pass


class AmbiguousLayout(DataError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path


class MalformedRow(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class DuplicatePath(DataError):
    def __init__(self, path: str, line: int):
        super().__init__(f"line {line}: duplicate filepath {path!r}")
        self.path = path
        self.line = line


class IterationOutOfRange(DataError):
    pass


class SurfaceCollision(DataError):
    def __init__(self, collisions: dict[str, tuple[str, ...]]):
        detail = "; ".join(f"{s!r} <- {', '.join(map(repr, bases))}" for s, bases in collisions.items())
        super().__init__(f"surface labels resolve to more than one class: {detail}")
        self.collisions = collisions


class MalformedTemplateLine(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class UnknownSurface(DataError):
    pass


class CoverageMismatch(DataError):
    def __init__(self, missing: list[str], extra: list[str]):
        super().__init__(f"predictions do not cover the dataset: {len(missing)} missing, {len(extra)} extra")
        self.missing = missing
        self.extra = extra


class ZeroVector(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class DegenerateWorld(DataError):
    pass


class FileUnreadable(DataError):
    def __init__(self, path: str, reason: str = ""):
        super().__init__(f"cannot read {path}" + (f": {reason}" if reason else ""))
        self.path = path


class BackendUnavailable(BackendError):
    pass


class ProtocolError(BackendError):
    pass
