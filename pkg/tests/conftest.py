from __future__ import annotations

import hashlib
import json
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest


def _vec(payload: str, dim: int) -> list[float]:
    seed = int.from_bytes(hashlib.sha256(payload.encode()).digest()[:8], "big")
    return np.random.default_rng(seed).standard_normal(dim).tolist()


class StubEmbeddingServer:
    """Counting JSON embedding service on localhost.

    ``mode`` can be switched per test: "ok", "short" (one embedding too few),
    "garbage" (non-JSON body), "error500".
    """

    def __init__(self, dim: int = 8):
        self.dim = dim
        self.mode = "ok"
        self.requests: Counter[str] = Counter()
        self.batch_sizes: dict[str, list[int]] = {}
        self.bodies: list[dict] = []
        self.headers: list[dict] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("content-length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with stub._lock:
                    stub.requests[self.path] += 1
                    stub.bodies.append(body)
                    stub.headers.append(dict(self.headers))
                if self.path == "/embed/text":
                    items = body.get("texts", [])
                elif self.path == "/embed/image":
                    items = body.get("images_b64", [])
                else:
                    self.send_response(404)
                    self.end_headers()
                    return
                with stub._lock:
                    stub.batch_sizes.setdefault(self.path, []).append(len(items))
                if stub.mode == "error500":
                    self.send_response(500)
                    self.end_headers()
                    return
                if stub.mode == "garbage":
                    data = b"not json"
                else:
                    embs = [_vec(x, stub.dim) for x in items]
                    if stub.mode == "short":
                        embs = embs[:-1]
                    data = json.dumps({"embeddings": embs}).encode()
                self.send_response(200)
                self.send_header("content-type", "application/json")
                self.send_header("content-length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def reset(self) -> None:
        self.requests.clear()
        self.batch_sizes.clear()
        self.bodies.clear()
        self.headers.clear()


@pytest.fixture
def stub_server():
    stub = StubEmbeddingServer()
    stub.thread.start()
    yield stub
    stub.server.shutdown()
    stub.server.server_close()


def make_tree(root: Path, files: dict[str, bytes] | list[str]) -> Path:
    if isinstance(files, list):
        files = {f: f.encode() for f in files}
    for rel, data in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
    return root


@pytest.fixture
def image_tree(tmp_path):
    """5 classes x 6 images, each file with distinct bytes."""
    files = {f"cls{c}/img_{i}.jpg": f"class {c} image {i}".encode() for c in range(5) for i in range(6)}
    return make_tree(tmp_path / "images", files)


_ACCEPTANCE: dict[int, list[bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _ACCEPTANCE.setdefault(marker.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(_ACCEPTANCE):
        status = "PASS" if all(_ACCEPTANCE[ac]) else "FAIL"
        terminalreporter.write_line(f"AC{ac}: {status}")
