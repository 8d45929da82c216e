"""Command line entry point.

    python -m fewfermions spectrum --config configs/spectrum_4up1down.toml --out runs/fig1

Exit codes: 0 success, 1 acceptance criteria failed (``oracle`` only),
2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import KINDS, ConfigError, ExperimentConfig, load_config
from .solver import DENSE_THRESHOLD, ConvergenceError, PropagationError

EXIT_OK, EXIT_FAILED_CHECKS, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("fewfermions")


def _thread_limit(n: int | None):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _write_manifest(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _base_manifest(command: str, threads: int | None) -> dict:
    return {
        "artifact": "fewfermions",
        "version": __version__,
        "command": command,
        "threads": threads,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__},
    }


def _resolve_out(args, cfg: ExperimentConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return Path("runs") / args.command


def run_experiment_command(args) -> int:
    try:
        cfg = load_config(args.config, kind=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    # imported late so `validate-config` stays light
    from .experiments import Experiment

    out_dir = _resolve_out(args, cfg)
    manifest = _base_manifest(args.command, args.threads)
    manifest.update(config=cfg.to_dict(), config_path=str(args.config), basis_dim=cfg.sector.dim)
    log.info("%s: sector %s, dimension %d", args.command, cfg.sector, cfg.sector.dim)
    start = time.perf_counter()
    exp = Experiment(cfg, out_dir)
    status, code, error = "complete", EXIT_OK, None
    try:
        with _thread_limit(args.threads):
            exp.run()
    except ConfigError as exc:
        status, code, error = "config-error", EXIT_CONFIG, str(exc)
        print(f"config error: {exc}", file=sys.stderr)
    except (ConvergenceError, PropagationError, np.linalg.LinAlgError) as exc:
        status, code, error = "solver-failure", EXIT_SOLVER, f"{type(exc).__name__}: {exc}"
        print(f"solver failure: {exc}; partial outputs kept as *.partial.csv", file=sys.stderr)
    rec = exp.record
    manifest.update(
        status=status,
        error=error,
        fermi_energy=rec.fermi_energy,
        solver={"requested": cfg.solver.method, "used": sorted(rec.methods), "k": cfg.solver.k,
                "block_size": cfg.solver.block_size, "dense_threshold": DENSE_THRESHOLD},
        tolerances={"eigen_residual": cfg.solver.tol,
                    "propagation": cfg.dynamics.tol if cfg.dynamics else None,
                    "matrix_drop": 1e-14},
        outputs=rec.outputs,
        warnings=rec.warnings,
        details=rec.extra,
        wall_time_s=time.perf_counter() - start,
    )
    _write_manifest(out_dir, manifest)
    if code == EXIT_OK:
        print(f"wrote {', '.join(rec.outputs)} to {out_dir}")
    return code


def validate_config_command(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: kind={cfg.kind} sector=({cfg.n_orb} orbitals, {cfg.n_up} up, {cfg.n_down} down) "
          f"dim={cfg.sector.dim} g-points={len(cfg.g_values)}")
    return EXIT_OK


def oracle_command(args) -> int:
    from . import acceptance

    numbers = None
    if args.criteria:
        try:
            numbers = [int(x) for x in args.criteria.split(",")]
        except ValueError:
            print(f"config error: --criteria expects a comma-separated list, got {args.criteria!r}",
                  file=sys.stderr)
            return EXIT_CONFIG
        unknown = set(numbers) - set(acceptance.CRITERIA)
        if unknown:
            print(f"config error: unknown criteria {sorted(unknown)}", file=sys.stderr)
            return EXIT_CONFIG
    out_dir = Path(args.out) if args.out else Path("runs") / "oracle"
    manifest = _base_manifest("oracle", args.threads)
    start = time.perf_counter()
    try:
        with _thread_limit(args.threads):
            results = acceptance.run(numbers, report=print)
    except (ConvergenceError, PropagationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        manifest.update(status="solver-failure", error=str(exc), wall_time_s=time.perf_counter() - start)
        _write_manifest(out_dir, manifest)
        return EXIT_SOLVER
    path = acceptance.write_csv(results, out_dir / "acceptance.csv")
    passed = all(r.passed for r in results)
    manifest.update(status="complete", all_passed=passed, outputs=[path.name],
                    criteria=[r.as_dict() for r in results], wall_time_s=time.perf_counter() - start)
    _write_manifest(out_dir, manifest)
    return EXIT_OK if passed else EXIT_FAILED_CHECKS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewfermions", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML experiment file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="BLAS thread count")

    for kind in KINDS:
        common(sub.add_parser(kind, help=f"{kind} dataset"))
    common(sub.add_parser("validate-config", help="check a config and exit"))
    p = sub.add_parser("oracle", help="run the acceptance checks")
    common(p, config_required=False)
    p.add_argument("--criteria", help="comma-separated subset, e.g. 1,2,5")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which matches the config code
        return int(exc.code or 0)
    if args.threads is not None and args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "validate-config":
        return validate_config_command(args)
    if args.command == "oracle":
        return oracle_command(args)
    return run_experiment_command(args)


if __name__ == "__main__":
    sys.exit(main())
