"""Command-line entry point: ``tailrisk <stage|run> --config FILE --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import os

# single-threaded BLAS keeps strict runs bit-reproducible; must precede numpy
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from importlib import resources  # noqa: E402

import numpy as np  # noqa: E402

from .config import ConfigError, load_config, output_dir  # noqa: E402
from .econ.garch import FitError  # noqa: E402
from .nn.train import TrainingError  # noqa: E402
from .pipeline import STAGES, StageError, run_pipeline, run_stage  # noqa: E402
from .timeseries import DataError  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
log = logging.getLogger("tailrisk")


def fixture_config_path():
    return resources.files("tailrisk") / "data" / "fixture.toml"


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tailrisk", description="Dynamic tail-risk protection pipeline.")
    ap.add_argument("command", choices=list(STAGES) + ["run"], help="stage to run, or 'run' for all")
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--config", help="TOML run configuration")
    src.add_argument("--fixture", action="store_true", help="use the bundled synthetic fixture config")
    ap.add_argument("--out", help="output directory (default: run.output_dir or $TAILRISK_OUTPUT_DIR)")
    ap.add_argument("--data", help="override data.path")
    ap.add_argument("--gaps", choices=("error", "ffill"), help="gap policy for ingestion")
    ap.add_argument("--seed", type=int, help="override run.seed")
    ap.add_argument("--workers", type=int, help="worker processes (ignored in strict mode)")
    ap.add_argument("--no-strict", action="store_true", help="allow parallel workers")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def _classify(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return EXIT_CONFIG
    if isinstance(cause, (FitError, TrainingError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(cause, (DataError, FileNotFoundError, ValueError, KeyError)):
        return EXIT_DATA
    return EXIT_NUMERIC


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"data": {}, "run": {}}
    if args.data:
        overrides["data"]["path"] = args.data
    if args.gaps:
        overrides["data"]["gaps"] = args.gaps
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    if args.workers is not None:
        overrides["run"]["workers"] = args.workers
    if args.no_strict:
        overrides["run"]["strict"] = False
    try:
        if args.fixture:
            with resources.as_file(fixture_config_path()) as path:
                cfg = load_config(path, overrides)
        else:
            if not args.config:
                raise ConfigError("pass --config FILE or --fixture")
            cfg = load_config(args.config, overrides)
        out = output_dir(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            manifest = run_pipeline(cfg, out)
            print(f"wrote {len(manifest['files'])} artifacts to {out} (config {manifest['config_hash'][:12]})")
        else:
            run_stage(cfg, out, args.command)
    except Exception as exc:  # noqa: BLE001  mapped to an exit code below
        code = _classify(exc)
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return code
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
