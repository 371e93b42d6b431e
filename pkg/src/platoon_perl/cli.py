"""Command-line entry point for running experiments and exporting plot data.

    platoon-perl run --scenario variable --error affine --controller mpc_q --seed 7
    platoon-perl run --matrix paper --seed 0 --seed 1 --out runs/matrix
    platoon-perl export-plots runs/matrix

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import traceback
from collections import defaultdict
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .config import ConfigError, HarnessConfig, load_config
from .metrics import METRIC_KEYS, compute_metrics, results_table, write_table_csv
from .residual_nn import MlpModel, pretrain_identity
from .scenario import CONTROLLERS, run_experiment

log = logging.getLogger("platoon_perl")

OUT_ENV = "PLATOON_PERL_OUT"
DEFAULT_OUT = "runs"
TRAJECTORY_COLUMNS = ("step", "time", "vehicle", "p_ref", "p", "v_ref", "v", "a", "u_p", "u_r",
                      "u_a", "infeasible_flag")
EVENT_COLUMNS = ("step", "time", "event", "min_spacing", "max_spacing")
MATRIX_TESTS = [(s, e) for s in ("uniform", "variable") for e in ("affine", "quadratic")]


def _num(x) -> str:
    return repr(float(x))


def write_trajectory_csv(tlog, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for k in range(tlog.n_steps):
            t = _num(round(k * tlog.dt, 10))
            for i in range(tlog.n_vehicles):
                w.writerow([k, t, i, _num(tlog.p_ref[k, i]), _num(tlog.p[k, i]),
                            _num(tlog.v_ref[k, i]), _num(tlog.v[k, i]), _num(tlog.a[k, i]),
                            _num(tlog.u_p[k, i]), _num(tlog.u_r[k, i]), _num(tlog.u_a[k, i]),
                            int(tlog.infeasible[k])])


def write_events_csv(tlog, path) -> int:
    """Spacing-bound exits and infeasible MPC steps, one row per flagged step."""
    gaps = tlog.spacings()
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for k in range(tlog.n_steps):
            t = _num(round(k * tlog.dt, 10))
            lo = _num(gaps[k].min()) if gaps.shape[1] else "NA"
            hi = _num(gaps[k].max()) if gaps.shape[1] else "NA"
            if tlog.spacing_violation[k]:
                w.writerow([k, t, "spacing_violation", lo, hi])
                n += 1
            if tlog.infeasible[k]:
                w.writerow([k, t, "mpc_infeasible", lo, hi])
                n += 1
    return n


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "platoon_perl": pkg}


def cells(cfg: HarnessConfig):
    """(scenario kind, error kind, controller, seed) tuples to run."""
    tests = MATRIX_TESTS if cfg.matrix == "paper" else [(cfg.scenario.kind, cfg.error_kind)]
    controllers = CONTROLLERS if cfg.matrix == "paper" else cfg.controllers
    return [(s, e, c, seed) for s, e in tests for c in controllers for seed in cfg.seeds]


def run(cfg: HarnessConfig) -> int:
    """Run every configured cell and write artifacts under ``cfg.out_dir``."""
    if cfg.out_dir is None:
        cfg.out_dir = os.environ.get(OUT_ENV) or DEFAULT_OUT
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    files: list[Path] = [out / "config.json"]
    failures = []
    reports = defaultdict(list)
    nn_model = None
    for scen, err, ctrl, seed in cells(cfg):
        cell = out / f"{scen}_{err}_{ctrl}_seed{seed}"
        cell.mkdir(exist_ok=True)
        try:
            if ctrl == "mpc_nn" and nn_model is None:
                n = cfg.nn
                nn_model = pretrain_identity(MlpModel.init(n.sizes, n.seed, n.learning_rate),
                                             n.pretrain_lo, n.pretrain_hi, n.pretrain_samples,
                                             n.pretrain_epochs, seed=n.seed)
            spec = dataclasses.replace(cfg.scenario, kind=scen)
            dist = dataclasses.replace(cfg.disturbance(seed), kind=err)
            tlog = run_experiment(spec, ctrl, dist, cfg.mpc, cfg.q_learning, cfg.nn, seed,
                                  nn_model=nn_model)
        except Exception as exc:  # keep going; record the failure
            log.error("cell %s failed: %s", cell.name, exc)
            failures.append({"cell": cell.name, "error": repr(exc),
                             "traceback": traceback.format_exc()})
            continue
        if tlog.spacing_violation.any():
            log.warning("cell %s: spacing left [%g, %g] m at %d steps", cell.name,
                        *tlog.spacing_bounds, int(tlog.spacing_violation.sum()))
        if tlog.infeasible.any():
            log.warning("cell %s: MPC infeasible at %d steps (softened)", cell.name,
                        int(tlog.infeasible.sum()))
        report = compute_metrics(tlog)
        reports[seed].append(report)
        write_trajectory_csv(tlog, cell / "trajectory.csv")
        write_events_csv(tlog, cell / "events.csv")
        write_table_csv(results_table([report]), cell / "metrics.csv")
        files += [cell / "trajectory.csv", cell / "events.csv", cell / "metrics.csv"]

    for seed, reps in reports.items():
        path = out / f"table_seed{seed}.csv"
        write_table_csv(results_table(reps), path)
        files.append(path)
    if reports:
        path = out / "table.csv"
        write_table_csv(results_table(_mean_reports(reports)), path)
        files.append(path)

    manifest = {
        "config_hash": cfg.digest(),
        "seeds": list(cfg.seeds),
        "versions": _versions(),
        "status": "failed" if failures else "ok",
        "failures": failures,
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 2 if failures else 0


def _mean_reports(reports: dict):
    from .metrics import MetricReport
    groups = defaultdict(list)
    for reps in reports.values():
        for r in reps:
            groups[(r.scenario, r.error_kind, r.controller)].append(r)
    out = []
    for (scen, err, ctrl), reps in groups.items():
        vals = {k: float(np.mean([getattr(r, k) for r in reps])) for k in METRIC_KEYS}
        out.append(MetricReport(**vals, controller=ctrl, scenario=scen, error_kind=err))
    return out


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def export_plot_data(run_dir) -> list[Path]:
    """Write ``fig_time_space.csv`` and ``fig_velocity_error.csv`` from a run directory.

    Raises FileNotFoundError naming every artifact that is missing.
    """
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing artifacts in {run_dir}: manifest.json")
    manifest = json.loads(manifest_path.read_text())
    trajs = sorted(p for p in manifest["files"] if p.endswith("trajectory.csv"))
    missing = [p for p in manifest["files"] if not (run_dir / p).exists()]
    if missing or not trajs:
        raise FileNotFoundError(f"missing artifacts in {run_dir}: "
                                f"{', '.join(missing) or 'no trajectory.csv listed'}")
    ts_path, ve_path = run_dir / "fig_time_space.csv", run_dir / "fig_velocity_error.csv"
    with open(ts_path, "w", newline="") as ts_fh, open(ve_path, "w", newline="") as ve_fh:
        ts = csv.writer(ts_fh, lineterminator="\n")
        ve = csv.writer(ve_fh, lineterminator="\n")
        ts.writerow(["scenario", "error_kind", "controller", "seed", "vehicle", "time", "p_ref", "p"])
        ve.writerow(["scenario", "error_kind", "controller", "seed", "time", "v_err_mean",
                     "v_err_min", "v_err_max"])
        for rel in trajs:
            scen, err, ctrl, seed = _parse_cell(Path(rel).parent.name)
            rows = _read_csv(run_dir / rel)
            by_step = defaultdict(list)
            for r in rows:
                ts.writerow([scen, err, ctrl, seed, r["vehicle"], r["time"], r["p_ref"], r["p"]])
                by_step[(int(r["step"]), r["time"])].append(float(r["v"]) - float(r["v_ref"]))
            for (_, t), errs in sorted(by_step.items()):
                ve.writerow([scen, err, ctrl, seed, t, _num(np.mean(errs)), _num(min(errs)),
                             _num(max(errs))])
    return [ts_path, ve_path]


def _parse_cell(name: str):
    scen, err, rest = name.split("_", 2)
    ctrl, seed = rest.rsplit("_seed", 1)
    return scen, err, ctrl, int(seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="platoon-perl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run experiments")
    r.add_argument("--config", type=Path)
    r.add_argument("--scenario", choices=("uniform", "variable"))
    r.add_argument("--error", choices=("none", "affine", "quadratic"))
    r.add_argument("--controller", action="append", choices=CONTROLLERS)
    r.add_argument("--seed", action="append", type=int)
    r.add_argument("--matrix", choices=("paper",))
    r.add_argument("--out", type=Path)
    e = sub.add_parser("export-plots", help="write plot-ready series from a run directory")
    e.add_argument("run_dir", type=Path)
    return p


def effective_config(args) -> HarnessConfig:
    cfg = load_config(args.config) if args.config else HarnessConfig()
    if args.scenario:
        cfg.scenario = dataclasses.replace(cfg.scenario, kind=args.scenario)
    if args.error:
        cfg.error_kind = args.error
    if args.controller:
        cfg.controllers = list(args.controller)
    if args.seed:
        cfg.seeds = list(args.seed)
    if args.matrix:
        cfg.matrix = args.matrix
    if args.out:
        cfg.out_dir = str(args.out)
    elif cfg.out_dir is None:
        cfg.out_dir = os.environ.get(OUT_ENV) or DEFAULT_OUT
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "export-plots":
        try:
            for path in export_plot_data(args.run_dir):
                print(path)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return 0
    try:
        cfg = effective_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        code = run(cfg)
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    print(cfg.out_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
