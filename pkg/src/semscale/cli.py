"""``semscale`` command line.

Exit codes: 0 success, 1 usage/config error, 2 backend failure, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from semscale.backend import BackendConfig, RemoteBackend, make_backend
from semscale.config import KNOWN_KEYS, ConfigError, RunConfig, backend_config, load_config_file, stop_policy
from semscale.dataset import dataset_from_answer_key, scan_dataset
from semscale.errors import BackendError, DataError
from semscale.experiment import ExperimentReport, compute_metric_series, run_experiment
from semscale.labels import BUILTIN_TEMPLATES, load_plural_exceptions, load_user_templates
from semscale.report import OutputLocked, emit_plot_series, output_lock, read_iteration_report
from semscale.simulator import generate_world, simulated_dataset

log = logging.getLogger("semscale")

EXIT_OK, EXIT_USAGE, EXIT_BACKEND, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2, which means "backend" here
        raise UsageError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--output", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--schedule", help="sequential | geometric[:BASE]")
    p.add_argument("--max-k", type=int)
    p.add_argument("--epsilon", type=float, help="stop threshold in percentage points")
    p.add_argument("--patience", type=int)
    p.add_argument("--no-early-stop", action="store_true", help="run until max_k or templates run out")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semscale", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", allow_abbrev=False, help="run an experiment on a real dataset")
    _add_common(run)

    sim = sub.add_parser("simulate", allow_abbrev=False, help="run experiments on synthetic worlds")
    _add_common(sim)
    sim.add_argument("--classes", type=int)
    sim.add_argument("--dim", type=int)
    sim.add_argument("--sigma-image", type=float)
    sim.add_argument("--sigma-label", type=float)
    sim.add_argument("--n-per-class", type=int)
    sim.add_argument("--worlds", type=int, help="number of worlds (seeds seed, seed+1, ...)")

    rep = sub.add_parser("report", allow_abbrev=False, help="aggregate experiment outputs into plot series")
    rep.add_argument("inputs", nargs="+", help="experiment output dirs (or parents of them)")
    rep.add_argument("--output", required=True)
    rep.add_argument("-v", "--verbose", action="store_true")

    hc = sub.add_parser("healthcheck", allow_abbrev=False, help="probe the embedding backend")
    hc.add_argument("--config")
    hc.add_argument("-v", "--verbose", action="store_true")
    return parser


def _parse_overrides(extra: Sequence[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    items = list(extra)
    while items:
        tok = items.pop(0)
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key, eq, value = tok[2:].partition("=")
        if not eq:
            if not items:
                raise UsageError(f"missing value for {tok}")
            value = items.pop(0)
        if key not in KNOWN_KEYS:
            raise UsageError(f"unknown option {tok}")
        out[key] = value
    return out


def _collect_values(args: argparse.Namespace, extra: Sequence[str], seed_key: str) -> dict[str, str]:
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    values.update(_parse_overrides(extra))
    flags = {
        "output": getattr(args, "output", None),
        seed_key: getattr(args, "seed", None),
        "policy.schedule": getattr(args, "schedule", None),
        "policy.max_k": getattr(args, "max_k", None),
        "policy.epsilon_pp": getattr(args, "epsilon", None),
        "policy.patience": getattr(args, "patience", None),
    }
    if getattr(args, "no_early_stop", False):
        flags["policy.early_stop"] = "false"
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    return values


def _print_summary(report: ExperimentReport) -> None:
    last = report.history[-1]
    print(
        f"{report.dataset_name}: {len(report.history)} iterations, "
        f"baseline {report.history[0].accuracy_pct:.2f}% -> final {last.accuracy_pct:.2f}%, "
        f"peak +{report.peak_delta:.2f} pp at k={report.peak_k}, stop={report.stop_reason.value}"
    )


def cmd_run(args: argparse.Namespace, extra: Sequence[str]) -> int:
    cfg = RunConfig.from_values(_collect_values(args, extra, "backend.seed"))
    templates = load_user_templates(cfg.templates) if cfg.templates else BUILTIN_TEMPLATES
    exceptions = load_plural_exceptions(cfg.exceptions) if cfg.exceptions else None
    if cfg.dataset_root:
        dataset = scan_dataset(cfg.dataset_root, cfg.layout, name=cfg.dataset_name)
    else:
        dataset = dataset_from_answer_key(cfg.answer_key, name=cfg.dataset_name)
    backend = make_backend(cfg.backend)
    try:
        status = backend.healthcheck()
        if not status.ok:
            print(f"semscale: backend {status}", file=sys.stderr)
            return EXIT_BACKEND
        with output_lock(cfg.output_dir) as out:
            report = run_experiment(dataset, templates, cfg.policy, backend, output_dir=out, exceptions=exceptions)
    finally:
        if isinstance(backend, RemoteBackend):
            backend.close()
    _print_summary(report)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, extra: Sequence[str]) -> int:
    values = _collect_values(args, extra, "simulator.seed")
    for flag, key in (
        ("classes", "simulator.classes"),
        ("dim", "simulator.dim"),
        ("sigma_image", "simulator.sigma_image"),
        ("sigma_label", "simulator.sigma_label"),
        ("n_per_class", "simulator.n_per_class"),
        ("worlds", "simulator.worlds"),
    ):
        if getattr(args, flag) is not None:
            values[key] = str(getattr(args, flag))
    if not values.get("output"):
        raise ConfigError("output directory is required (--output DIR)")
    try:
        n_classes = int(values.get("simulator.classes", 20))
        dim = int(values.get("simulator.dim", 64))
        sigma_image = float(values.get("simulator.sigma_image", 0.6))
        sigma_label = float(values.get("simulator.sigma_label", 0.4))
        n_per_class = int(values.get("simulator.n_per_class", 50))
        n_worlds = int(values.get("simulator.worlds", 1))
        seed = int(values.get("simulator.seed", 42))
    except ValueError as exc:
        raise ConfigError(f"invalid simulator setting: {exc}") from exc
    if n_worlds < 1:
        raise ConfigError("simulator.worlds must be >= 1")
    policy = stop_policy(values)
    templates = load_user_templates(values["templates"]) if values.get("templates") else BUILTIN_TEMPLATES

    reports = []
    with output_lock(values["output"]) as out:
        for i in range(n_worlds):
            world = generate_world(n_classes, dim, sigma_image, sigma_label, (seed + i) % 2**64)
            dataset, backend = simulated_dataset(world, n_per_class, templates)
            report = run_experiment(dataset, templates, policy, backend, output_dir=out / f"world_{i:02d}")
            _print_summary(report)
            reports.append(report)
        emit_plot_series(compute_metric_series(reports), out)
    return EXIT_OK


def _report_dirs(inputs: Sequence[str]) -> list[Path]:
    dirs: list[Path] = []
    for item in inputs:
        p = Path(item)
        if (p / "report.csv").exists():
            dirs.append(p)
            continue
        found = sorted(d for d in p.iterdir() if (d / "report.csv").exists()) if p.is_dir() else []
        if not found:
            raise DataError(f"{p}: no report.csv found")
        dirs.extend(found)
    return dirs


def cmd_report(args: argparse.Namespace, extra: Sequence[str]) -> int:
    if extra:
        raise UsageError(f"unexpected arguments {' '.join(extra)}")
    reports = [read_iteration_report(d) for d in _report_dirs(args.inputs)]
    with output_lock(args.output) as out:
        for path in emit_plot_series(compute_metric_series(reports), out):
            print(path)
    return EXIT_OK


def cmd_healthcheck(args: argparse.Namespace, extra: Sequence[str]) -> int:
    values = _collect_values(args, extra, "backend.seed")
    cfg: BackendConfig = backend_config(values)
    backend = make_backend(cfg)
    try:
        status = backend.healthcheck()
    finally:
        if isinstance(backend, RemoteBackend):
            backend.close()
    print(status)
    return EXIT_OK if status.ok else EXIT_BACKEND


COMMANDS = {"run": cmd_run, "simulate": cmd_simulate, "report": cmd_report, "healthcheck": cmd_healthcheck}


def cli_main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
        )
        return COMMANDS[args.command](args, extra)
    except (UsageError, ConfigError, OutputLocked, ValueError) as exc:
        print(f"semscale: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"semscale: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataError, OSError) as exc:
        print(f"semscale: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
