"""Command-line driver: config in, ``estimates.csv`` / ``fields_*.csv`` / ``manifest.json`` out.

Exit codes: 0 success, 1 bad config or arguments, 2 solver failure,
3 audit failure (all artifacts are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from crossdiff.config import ConfigError, RunConfig, format_config, parse_config
from crossdiff.estimates import EstimateLedger, audit_duality, audit_entropy, audit_mass
from crossdiff.stepper import StepFailure, run
from crossdiff.system import entropy_admissible

log = logging.getLogger("crossdiff")

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 0, 1, 2, 3


def _number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_estimates(path: Path, ledger: EstimateLedger) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EstimateLedger.columns)
        for row in ledger.rows():
            writer.writerow([_number(v) for v in row])


def write_fields(path: Path, cfg: RunConfig, k: int, t: float, U: np.ndarray) -> None:
    g = cfg.grid
    with path.open("w", newline="") as fh:
        fh.write(
            f"# dim={g.dim} extents={','.join(map(str, g.extents))} "
            f"lengths={','.join(map(repr, g.lengths))} k={k} t={t!r} order=C\n"
        )
        writer = csv.writer(fh)
        writer.writerow([f"u_{i + 1}" for i in range(U.shape[0])])
        for row in U.reshape(U.shape[0], -1).T:
            writer.writerow([repr(float(v)) for v in row])


class _Snapshots:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg, self.out = cfg, out
        self.stride = cfg.stride
        self.n_steps = cfg.scheme.n_steps
        self.files: list[str] = []

    def __call__(self, k, t, U, report) -> None:
        if k % self.stride == 0 or k == self.n_steps:
            name = f"fields_{k:06d}.csv"
            write_fields(self.out / name, self.cfg, k, t, U)
            self.files.append(name)


def _aggregate(ledger: EstimateLedger, reports) -> dict:
    if not reports:
        return {"steps": 0}
    iters = [r.iterations for r in reports]
    return {
        "steps": len(reports),
        "fp_iterations_total": int(sum(iters)),
        "fp_iterations_max": int(max(iters)),
        "fp_iterations_mean": float(np.mean(iters)),
        "newton_steps": sum(r.solver_path == "newton" for r in reports),
        "max_residual": float(max(r.final_residual for r in reports)),
        "min_value": float(min(r.min_value for r in reports)),
        "max_mbar": float(max(r.mbar_used for r in reports)),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossdiff", description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True, type=Path, help="run configuration file")
    p.add_argument("--out", type=Path, help="output directory (overrides [output] directory)")
    p.add_argument("--steps", type=int, help="override [scheme] n_steps")
    p.add_argument("--tau", type=float, help="override [scheme] tau")
    p.add_argument("--no-audits", action="store_true", help="skip the estimate audits")
    p.add_argument("--snapshot-stride", type=int, help="write fields every K steps")
    p.add_argument("--seed", type=int, help="seed for sampled checks")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_cli(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    manifest: dict = {"format_version": FORMAT_VERSION, "status": "started", "errors": []}
    out = args.out
    try:
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
        cfg = cfg.with_overrides(
            steps=args.steps,
            tau=args.tau,
            stride=args.snapshot_stride,
            seed=args.seed,
            audits=False if args.no_audits else None,
            directory=str(out) if out is not None else None,
        )
        out = Path(cfg.output.directory)
        out.mkdir(parents=True, exist_ok=True)
        U0 = cfg.build_initial(base=args.config.parent)
        if not np.all(np.isfinite(U0)) or np.any(U0 <= 0):
            raise ConfigError(["initial data must be finite and strictly positive"])
    except (ConfigError, OSError) as exc:
        problems = exc.problems if isinstance(exc, ConfigError) else [str(exc)]
        for line in problems:
            print(f"config error: {line}", file=sys.stderr)
        if out is not None:
            manifest.update(status="config error", errors=problems, exit_code=EXIT_CONFIG)
            Path(out).mkdir(parents=True, exist_ok=True)
            _write_manifest(Path(out), manifest)
        return EXIT_CONFIG

    manifest["config_text"] = format_config(cfg)
    manifest["config"] = cfg.to_dict()
    system, grid, scheme = cfg.build_system(), cfg.build_grid(), cfg.build_scheme()
    ledger = EstimateLedger(system, grid, scheme.tau)
    snaps = _Snapshots(cfg, out)

    if cfg.output.audits:
        adm = entropy_admissible(system, seed=cfg.seed)
        manifest["admissibility"] = {"status": adm.status, "l_det": adm.l_det}
        if adm.status == "inadmissible":
            log.warning("entropy structure is inadmissible (det L = %.3g)", adm.l_det)

    start = time.perf_counter()
    exit_code = EXIT_OK
    reports = []
    try:
        traj = run(
            system, grid, U0, scheme, store_every=max(1, scheme.n_steps), callbacks=[ledger, snaps]
        )
        reports = traj.reports
        manifest["status"] = "completed"
    except StepFailure as exc:
        exit_code = EXIT_SOLVER
        manifest["status"] = "solver failure"
        manifest["errors"].append(f"step {exc.step_index}: {exc}")
        print(f"solver failure at step {exc.step_index}: {exc}", file=sys.stderr)
    manifest["wall_clock_s"] = time.perf_counter() - start
    manifest["step_reports"] = _aggregate(ledger, reports)

    write_estimates(out / "estimates.csv", ledger)
    manifest["files"] = ["estimates.csv", *snaps.files]

    audits = {}
    if cfg.output.audits and exit_code == EXIT_OK:
        results = [
            audit_mass(ledger),
            audit_duality(ledger),
            audit_entropy(ledger, slack=cfg.output.entropy_slack, K=cfg.output.entropy_K, seed=cfg.seed),
        ]
        for res in results:
            audits[res.name] = {
                "passed": res.passed,
                "status": res.status,
                "margin": res.margin,
                "details": res.details,
            }
            log.info(res.line())
            if not res.passed:
                manifest["errors"].append(f"audit {res.name}: {res.status}")
        if not all(r.passed for r in results):
            exit_code = EXIT_AUDIT
            print("audit failure: " + ", ".join(r.name for r in results if not r.passed), file=sys.stderr)
    manifest["audits"] = audits if cfg.output.audits else "disabled"
    manifest["exit_code"] = exit_code
    _write_manifest(out, manifest)
    return exit_code


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2) + "\n")


def main() -> int:
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
