"""Text/image embedding backends.

Two implementations share one interface: :class:`RemoteBackend` talks to a
JSON-over-HTTP embedding service, :class:`SyntheticBackend` derives vectors
from a seeded generator. Both return unit vectors, preserve input order and
cache results so a label or image is embedded at most once per backend.

Wire protocol (remote)::

    POST {base_url}{text_endpoint}   {"texts": [...]}       -> {"embeddings": [[...], ...]}
    POST {base_url}{image_endpoint}  {"images_b64": [...]}  -> {"embeddings": [[...], ...]}
"""

from __future__ import annotations

import base64
import hashlib
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from semscale.dataset import ImageRecord
from semscale.errors import BackendUnavailable, FileUnreadable, ProtocolError

log = logging.getLogger(__name__)

CACHE_ENV = "SEMSCALE_CACHE_DIR"


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "synthetic"
    base_url: str = ""
    text_endpoint: str = "/embed/text"
    image_endpoint: str = "/embed/image"
    batch_size: int = 32
    max_in_flight: int = 4
    timeout_ms: int = 30_000
    retries: int = 3
    seed: int = 0
    dim: int = 64
    image_noise: float = 0.5
    token: str | None = None
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("remote", "synthetic"):
            raise ValueError(f"backend kind must be 'remote' or 'synthetic', got {self.kind!r}")
        if self.batch_size < 1 or self.max_in_flight < 1:
            raise ValueError("batch_size and max_in_flight must be >= 1")
        if self.retries < 0 or self.timeout_ms <= 0:
            raise ValueError("retries must be >= 0 and timeout_ms > 0")
        if self.kind == "remote" and not self.base_url:
            raise ValueError("remote backend requires base_url")
        if self.kind == "synthetic" and self.dim < 1:
            raise ValueError("dim must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class HealthStatus:
    ok: bool
    reason: str | None = None

    def __str__(self) -> str:
        return "ok" if self.ok else f"unavailable({self.reason})"


def unit(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    n = np.linalg.norm(vec)
    if not np.isfinite(n) or n == 0:
        raise ProtocolError("embedding is zero or non-finite")
    return vec / n


def stable_hash64(*parts: str | int) -> int:
    """Process- and platform-independent 64-bit hash (BLAKE2b)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


class DiskCache:
    """One ``.npy`` file per vector, named by the SHA-256 of its key."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)

    @staticmethod
    def key(identity: str, kind: str, payload: bytes) -> str:
        h = hashlib.sha256()
        for part in (identity.encode("utf-8"), kind.encode("utf-8"), payload):
            h.update(len(part).to_bytes(8, "big"))
            h.update(part)
        return h.hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        p = self._path(key)
        if not p.exists():
            return None
        try:
            return np.load(p, allow_pickle=False)
        except (OSError, ValueError):
            return None

    def put(self, key: str, vec: np.ndarray) -> None:
        p = self._path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(f".{os.getpid()}.tmp")
        with open(tmp, "wb") as fh:
            np.save(fh, vec, allow_pickle=False)
        os.replace(tmp, p)


class EmbeddingBackend:
    """Shared caching and ordering logic; subclasses implement ``_compute_*``."""

    def __init__(self, cache_dir: str | os.PathLike | None = None):
        self._text_cache: dict[str, np.ndarray] = {}
        self._image_cache: dict[str, np.ndarray] = {}
        self.disk = DiskCache(cache_dir) if cache_dir else None

    @property
    def identity(self) -> str:
        raise NotImplementedError

    def _compute_texts(self, labels: list[str]) -> list[np.ndarray]:
        raise NotImplementedError

    def _compute_images(self, records: list[ImageRecord], root: str | None) -> list[np.ndarray]:
        raise NotImplementedError

    def healthcheck(self) -> HealthStatus:
        return HealthStatus(True)

    def embed_texts(self, labels: Sequence[str]) -> list[np.ndarray]:
        labels = list(labels)
        if not labels:
            raise ValueError("labels must be non-empty")
        if any(not s for s in labels):
            raise ValueError("labels must not contain empty strings")
        todo: list[str] = []
        for s in labels:
            if s in self._text_cache or s in todo:
                continue
            hit = self.disk.get(DiskCache.key(self.identity, "text", s.encode("utf-8"))) if self.disk else None
            if hit is not None:
                self._text_cache[s] = hit
            else:
                todo.append(s)
        if todo:
            vecs = self._compute_texts(todo)
            for s, v in zip(todo, vecs):
                v = unit(v)
                self._text_cache[s] = v
                if self.disk:
                    self.disk.put(DiskCache.key(self.identity, "text", s.encode("utf-8")), v)
        return [self._text_cache[s] for s in labels]

    def embed_images(self, records: Sequence[ImageRecord], root: str | None = None) -> list[np.ndarray]:
        records = list(records)
        if not records:
            raise ValueError("records must be non-empty")
        todo: list[ImageRecord] = []
        queued: set[str] = set()
        for r in records:
            if r.embedding is not None or r.path in self._image_cache or r.path in queued:
                continue
            todo.append(r)
            queued.add(r.path)
        if todo:
            for r, v in zip(todo, self._compute_images(todo, root)):
                self._image_cache[r.path] = unit(v)
        return [r.embedding if r.embedding is not None else self._image_cache[r.path] for r in records]


class SyntheticBackend(EmbeddingBackend):
    """Deterministic stand-in for a real model.

    A label's vector is a standard-normal draw seeded by
    ``stable_hash64(seed, "text", label)``. An image's vector is its class
    label's vector plus noise of norm about ``image_noise``, seeded by its path,
    so images of one class cluster around that class's base label.
    """

    def __init__(self, cfg: BackendConfig):
        super().__init__(cfg.cache_dir)
        self.cfg = cfg

    @property
    def identity(self) -> str:
        c = self.cfg
        return f"synthetic:seed={c.seed}:dim={c.dim}:noise={c.image_noise!r}"

    def _draw(self, *key: str | int) -> np.ndarray:
        ss = np.random.SeedSequence(stable_hash64(self.cfg.seed, *key))
        return np.random.Generator(np.random.PCG64(ss)).standard_normal(self.cfg.dim)

    def text_vector(self, label: str) -> np.ndarray:
        return unit(self._draw("text", label))

    def _compute_texts(self, labels: list[str]) -> list[np.ndarray]:
        return [self.text_vector(s) for s in labels]

    def _compute_images(self, records: list[ImageRecord], root: str | None) -> list[np.ndarray]:
        scale = self.cfg.image_noise / math.sqrt(self.cfg.dim)
        return [unit(self.text_vector(r.true_class) + scale * self._draw("image", r.path)) for r in records]


class RemoteBackend(EmbeddingBackend):
    BACKOFF_START_S = 0.25

    def __init__(self, cfg: BackendConfig, transport: httpx.BaseTransport | None = None):
        super().__init__(cfg.cache_dir)
        self.cfg = cfg
        headers = {"content-type": "application/json"}
        if cfg.token:
            headers["authorization"] = f"Bearer {cfg.token}"
        self._client = httpx.Client(
            base_url=cfg.base_url.rstrip("/"),
            headers=headers,
            timeout=cfg.timeout_ms / 1000.0,
            transport=transport,
        )
        self._dim: int | None = None

    @property
    def identity(self) -> str:
        c = self.cfg
        return f"remote:{c.base_url.rstrip('/')}|{c.text_endpoint}|{c.image_endpoint}"

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> RemoteBackend:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _request_once(self, endpoint: str, body: dict, expected: int) -> list[np.ndarray]:
        resp = self._client.post(endpoint, json=body)
        if resp.status_code >= 400:
            raise httpx.HTTPStatusError(f"HTTP {resp.status_code}", request=resp.request, response=resp)
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{endpoint}: response is not JSON") from exc
        embs = payload.get("embeddings") if isinstance(payload, dict) else None
        if not isinstance(embs, list):
            raise ProtocolError(f"{endpoint}: response lacks an 'embeddings' list")
        if len(embs) != expected:
            raise ProtocolError(f"{endpoint}: sent {expected} inputs, got {len(embs)} embeddings")
        try:
            arr = np.asarray(embs, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"{endpoint}: embeddings are not a numeric matrix") from exc
        if arr.ndim != 2 or arr.shape[1] == 0:
            raise ProtocolError(f"{endpoint}: embeddings have inconsistent dimensions")
        if not np.all(np.isfinite(arr)):
            raise ProtocolError(f"{endpoint}: embeddings contain non-finite values")
        return list(arr)

    def _request(self, endpoint: str, body: dict, expected: int) -> list[np.ndarray]:
        delay = self.BACKOFF_START_S
        last: Exception | None = None
        for attempt in range(self.cfg.retries + 1):
            if attempt:
                time.sleep(delay)
                delay *= 2
            try:
                return self._request_once(endpoint, body, expected)
            except httpx.HTTPStatusError as exc:
                code = exc.response.status_code
                if code < 500 and code != 429:
                    raise ProtocolError(f"{endpoint}: HTTP {code}") from exc
                last = exc
            except httpx.TransportError as exc:
                last = exc
            log.warning("request to %s failed (attempt %d): %s", endpoint, attempt + 1, last)
        raise BackendUnavailable(f"{self.cfg.base_url}{endpoint}: {last}") from last

    def _batched(self, endpoint: str, field_name: str, items: list[str]) -> list[np.ndarray]:
        size = self.cfg.batch_size
        batches = [items[i : i + size] for i in range(0, len(items), size)]

        def run(batch: list[str]) -> list[np.ndarray]:
            return self._request(endpoint, {field_name: batch}, len(batch))

        if len(batches) == 1 or self.cfg.max_in_flight == 1:
            results = [run(b) for b in batches]
        else:
            with ThreadPoolExecutor(max_workers=min(self.cfg.max_in_flight, len(batches))) as pool:
                results = list(pool.map(run, batches))
        out = [v for batch in results for v in batch]
        dims = {v.shape[0] for v in out}
        if self._dim is not None:
            dims.add(self._dim)
        if len(dims) != 1:
            raise ProtocolError(f"{endpoint}: embedding dimension mismatch {sorted(dims)}")
        self._dim = dims.pop()
        return out

    def _compute_texts(self, labels: list[str]) -> list[np.ndarray]:
        return self._batched(self.cfg.text_endpoint, "texts", labels)

    def _read_image(self, record: ImageRecord, root: str | None) -> bytes:
        path = Path(record.path)
        if root is not None and not path.is_absolute():
            path = Path(root) / path
        try:
            return path.read_bytes()
        except OSError as exc:
            raise FileUnreadable(record.path, exc.strerror or str(exc)) from exc

    def _compute_images(self, records: list[ImageRecord], root: str | None) -> list[np.ndarray]:
        blobs = [self._read_image(r, root) for r in records]
        results: list[np.ndarray | None] = [None] * len(records)
        todo_idx: list[int] = []
        keys: list[str | None] = [None] * len(records)
        for i, blob in enumerate(blobs):
            if self.disk:
                keys[i] = DiskCache.key(self.identity, "image", hashlib.sha256(blob).digest())
                results[i] = self.disk.get(keys[i])
            if results[i] is None:
                todo_idx.append(i)
        if todo_idx:
            encoded = [base64.b64encode(blobs[i]).decode("ascii") for i in todo_idx]
            for i, v in zip(todo_idx, self._batched(self.cfg.image_endpoint, "images_b64", encoded)):
                results[i] = unit(v)
                if self.disk:
                    self.disk.put(keys[i], results[i])
        return results  # type: ignore[return-value]

    def healthcheck(self) -> HealthStatus:
        try:
            self._request_once(self.cfg.text_endpoint, {"texts": ["healthcheck"]}, 1)
        except httpx.TimeoutException:
            return HealthStatus(False, "timeout")
        except httpx.TransportError:
            return HealthStatus(False, "connection")
        except (httpx.HTTPStatusError, ProtocolError):
            return HealthStatus(False, "protocol")
        return HealthStatus(True)


def make_backend(cfg: BackendConfig) -> EmbeddingBackend:
    if cfg.cache_dir is None and os.environ.get(CACHE_ENV):
        cfg = replace(cfg, cache_dir=os.environ[CACHE_ENV])
    if cfg.kind == "remote":
        return RemoteBackend(cfg)
    return SyntheticBackend(cfg)


def healthcheck(cfg: BackendConfig) -> HealthStatus:
    backend = make_backend(cfg)
    try:
        return backend.healthcheck()
    finally:
        if isinstance(backend, RemoteBackend):
            backend.close()
