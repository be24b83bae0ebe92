"""Flat ``key=value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment line; blank lines are
ignored. Keys are grouped by prefix (``dataset.``, ``backend.``,
``policy.``, ``simulator.``) plus the top-level ``output`` and
``templates``. See README for the full table.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Mapping

from semscale.backend import BackendConfig
from semscale.dataset import Layout
from semscale.experiment import StopPolicy


class ConfigError(ValueError):
    pass


_BACKEND_TYPES = {f.name: f.type for f in dataclasses.fields(BackendConfig)}
BACKEND_KEYS = {f"backend.{name}" for name in _BACKEND_TYPES}
POLICY_KEYS = {"policy.epsilon_pp", "policy.patience", "policy.max_k", "policy.schedule", "policy.early_stop"}
DATASET_KEYS = {"dataset.root", "dataset.layout", "dataset.answer_key", "dataset.name", "dataset.exceptions"}
SIMULATOR_KEYS = {
    "simulator.classes",
    "simulator.dim",
    "simulator.sigma_image",
    "simulator.sigma_label",
    "simulator.n_per_class",
    "simulator.worlds",
    "simulator.seed",
}
TOP_KEYS = {"output", "templates"}
KNOWN_KEYS = BACKEND_KEYS | POLICY_KEYS | DATASET_KEYS | SIMULATOR_KEYS | TOP_KEYS


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def load_config_file(path: str | os.PathLike) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc


def _as_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _convert(raw: str, typ: str, key: str):
    try:
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
        if typ.startswith("bool"):
            return _as_bool(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: invalid value {raw!r}") from exc
    if "None" in typ and raw.lower() in ("", "none"):
        return None
    return raw


def backend_config(values: Mapping[str, str]) -> BackendConfig:
    kwargs = {}
    for name, typ in _BACKEND_TYPES.items():
        key = f"backend.{name}"
        if key in values:
            kwargs[name] = _convert(values[key], str(typ), key)
    try:
        return BackendConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def stop_policy(values: Mapping[str, str]) -> StopPolicy:
    kwargs: dict = {}
    if "policy.epsilon_pp" in values:
        kwargs["epsilon_pp"] = _convert(values["policy.epsilon_pp"], "float", "policy.epsilon_pp")
    if "policy.patience" in values:
        kwargs["patience"] = _convert(values["policy.patience"], "int", "policy.patience")
    if "policy.max_k" in values:
        kwargs["max_k"] = _convert(values["policy.max_k"], "int", "policy.max_k")
    if "policy.early_stop" in values:
        kwargs["early_stop"] = _as_bool(values["policy.early_stop"])
    if "policy.schedule" in values:
        name, _, base = values["policy.schedule"].partition(":")
        kwargs["schedule"] = name.strip()
        if base:
            kwargs["geometric_base"] = _convert(base, "int", "policy.schedule")
    try:
        return StopPolicy(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class RunConfig:
    backend: BackendConfig
    policy: StopPolicy
    output_dir: str
    dataset_root: str | None = None
    layout: Layout = field(default_factory=Layout.parent_dir)
    answer_key: str | None = None
    dataset_name: str | None = None
    templates: str | None = None
    exceptions: str | None = None

    @classmethod
    def from_values(cls, values: Mapping[str, str]) -> RunConfig:
        root = values.get("dataset.root") or None
        key = values.get("dataset.answer_key") or None
        if root and key:
            raise ConfigError("set exactly one of dataset.root and dataset.answer_key, not both")
        if not root and not key:
            raise ConfigError("a dataset source is required (dataset.root or dataset.answer_key)")
        if not values.get("output"):
            raise ConfigError("output directory is required (output=DIR or --output DIR)")
        try:
            layout = Layout.parse(values.get("dataset.layout", "parent_dir"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(
            backend=backend_config(values),
            policy=stop_policy(values),
            output_dir=values["output"],
            dataset_root=root,
            layout=layout,
            answer_key=key,
            dataset_name=values.get("dataset.name") or None,
            templates=values.get("templates") or None,
            exceptions=values.get("dataset.exceptions") or None,
        )
