"""Command line entry point ``glauber-kit``.

``glauber-kit run --config <path> --out <dir> [--seed N] [--replicas N] [--jobs N]``
runs one experiment and writes ``manifest.json``, ``rows.tsv`` and
``summary.json``. ``glauber-kit validate --config <path>`` prints the
normalized configuration. Exit codes: 0 pass, 1 a test failed, 2 usage or
configuration error. ``GLAUBER_KIT_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .experiments import ConfigError, run_experiment, validate_config

OUT_ENV = "GLAUBER_KIT_OUT"
EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glauber-kit", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, default=None,
                     help=f"output directory (default: ${OUT_ENV})")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--replicas", type=int, default=None)
    run.add_argument("--jobs", type=int, default=None)
    val = sub.add_parser("validate", help="check a config and print its normalized form")
    val.add_argument("--config", required=True, type=Path)
    return parser


def load_config(path: Path, **overrides) -> dict:
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError([("config", f"cannot read {path}: {exc.strerror}")]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([("config", f"not valid YAML: {exc}")]) from exc
    return validate_config(raw, **overrides)


def _report_errors(err: ConfigError) -> None:
    for path, msg in err.errors:
        print(f"config error: {path}: {msg}", file=sys.stderr)


def _versions() -> dict:
    return {"glauber_kit": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        _report_errors(err)
        return EXIT_USAGE
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return EXIT_PASS


def cmd_run(args) -> int:
    out = args.out or (Path(os.environ[OUT_ENV]) if os.environ.get(OUT_ENV) else None)
    if out is None:
        print(f"glauber-kit: error: --out not given and ${OUT_ENV} not set", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, seed=args.seed, replicas=args.replicas, jobs=args.jobs)
    except ConfigError as err:
        _report_errors(err)
        return EXIT_USAGE
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg, "seed": cfg["seed"], "versions": _versions(),
                "started": started, "runtime_seconds": elapsed}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "rows.tsv").write_text(result.rows_text())
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    status = "PASS" if result.passed else "FAIL"
    failed = [k for k, v in result.checks.items() if not v]
    print(f"{result.kind}: {status}" + (f" (failed: {', '.join(failed)})" if failed else ""))
    return EXIT_PASS if result.passed else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "validate": cmd_validate}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
