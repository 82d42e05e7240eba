"""Command-line entry point: ``riskcbf {calibrate,simulate,benchmark,gradcheck}``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 calibration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .conformal import build_calibration_set, nonconformity_score, record_stream
from .config import RunConfig, load_config
from .exceptions import ConfigError, InsufficientCalibration
from .gradcheck import collision_suite, volume_suite
from .simulation import METHODS, TRAJECTORY_COLUMNS, run_benchmark, simulate

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_CALIBRATION = 0, 1, 2, 3

logger = logging.getLogger("riskcbf")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def calibrate(cfg: RunConfig) -> dict:
    """Build the calibration set and return the serializable result."""
    _, res = build_calibration_set(cfg.seed, cfg.sensor(), cfg.n_cal, cfg.alpha, cfg.environment(), cfg.shape(),
                                   cfg.min_points, cfg.calibration_margin)
    out = res.to_dict()
    if cfg.n_test > 0:
        test = record_stream(cfg.seed, cfg.n_cal, cfg.n_test, cfg.sensor(), cfg.environment(), cfg.shape(),
                             cfg.min_points, cfg.calibration_margin)
        out["n_test"] = cfg.n_test
        out["test_coverage"] = sum(nonconformity_score(r) <= res.delta for r in test) / cfg.n_test
    return out


def resolve_delta(cfg: RunConfig, out_dir: Path) -> float:
    """Inflation from the config, else a matching ``calibration.json`` in ``out_dir``, else a fresh calibration."""
    if cfg.delta is not None:
        return float(cfg.delta)
    path = out_dir / "calibration.json"
    if path.exists():
        data = json.loads(path.read_text())
        if (data.get("alpha"), data.get("n_cal"), data.get("seed")) == (cfg.alpha, cfg.n_cal, cfg.seed):
            return float(data["delta"])
    logger.info("no stored calibration for this configuration; calibrating")
    data = calibrate(cfg)
    _write_json(path, data)
    return float(data["delta"])


def cmd_calibrate(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = calibrate(cfg)
    _write_json(out / "calibration.json", data)
    print(f"delta = {data['delta']:.6f}")
    if "test_coverage" in data:
        print(f"held-out coverage = {data['test_coverage']:.4f} over {data['n_test']} records")
    return EXIT_OK


def _method(args, cfg: RunConfig, name: str | None = None) -> str:
    m = (name or args.method or cfg.methods[0]).strip().lower()
    if m not in METHODS:
        raise ConfigError(f"unknown method {m!r}; choose from {list(METHODS)}")
    return m


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method = _method(args, cfg)
    delta = resolve_delta(cfg, out)
    o = simulate(cfg.seed, method, cfg.trial_params(), cfg.environment(), delta)
    with open(out / f"trial_{cfg.seed}_{method}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        w.writerows(zip(*(o.trajectory[c] for c in TRAJECTORY_COLUMNS)))
    summary = o.summary()
    summary["delta"] = delta
    _write_json(out / f"outcome_{cfg.seed}_{method}.json", summary)
    status = "success" if o.success else "collision" if o.collision else "timeout"
    print(f"seed={cfg.seed} method={method} outcome={status} steps={o.steps} "
          f"min_true_gamma={o.min_true_gamma:.4f} infeasible_steps={o.infeasible_steps}")
    return EXIT_OK


BENCH_COLUMNS = ("method", "n_trials", "success_rate", "collision_rate", "timeout_rate", "mean_wall_time",
                 "mean_min_gamma", "infeasible_step_rate", "premise_held_rate")


def cmd_benchmark(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = [_method(args, cfg, m) for m in args.method.split(",")] if args.method else list(cfg.methods)
    delta = resolve_delta(cfg, out)
    workers = cfg.workers or os.cpu_count() or 1
    rows, outcomes = run_benchmark(cfg.trial_params(), cfg.environment(), cfg.trials, methods, cfg.seed, delta,
                                   workers)
    trials = []
    for o in outcomes:
        d = o.summary()
        d.pop("volume_trace")
        trials.append(d)
    _write_json(out / "benchmark.json", {"delta": delta, "master_seed": cfg.seed, "n_trials": cfg.trials,
                                         "methods": rows, "trials": trials})
    with open(out / "benchmark.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    print(f"{'method':<15}{'success':>9}{'collision':>11}{'timeout':>9}{'wall [s]':>10}{'infeas/step':>13}")
    for r in rows:
        print(f"{r['method']:<15}{r['success_rate']:>9.3f}{r['collision_rate']:>11.3f}{r['timeout_rate']:>9.3f}"
              f"{r['mean_wall_time']:>10.2f}{r['infeasible_step_rate']:>13.4f}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    n = args.instances if args.instances is not None else cfg.gradcheck_instances
    if n < 1:
        raise ConfigError("instances must be positive")
    ctol = args.tol if args.tol is not None else cfg.gradcheck_collision_tol
    vtol = args.tol if args.tol is not None else cfg.gradcheck_volume_tol
    reports = [collision_suite(n, cfg.seed, cfg.gradcheck_step, ctol, cfg.shape()),
               volume_suite(n, cfg.seed, cfg.gradcheck_step, vtol, cfg.shape(), cfg.input_box, cfg.kappa, cfg.gamma0)]
    for r in reports:
        print(f"{r.name:<10} n={r.n_instances:<5} max_rel_error={r.max_rel_error:.3e} tol={r.tolerance:.1e} "
              f"{'PASS' if r.passed else 'FAIL'}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "gradcheck.json", [r.to_dict() for r in reports])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat-key YAML configuration")
    common.add_argument("--seed", type=int, help="seed (master seed for benchmark)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="riskcbf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="calibrate the obstacle inflation")
    s = sub.add_parser("simulate", parents=[common], help="run one closed-loop trial")
    s.add_argument("--method", metavar="NAME", help=f"one of {', '.join(METHODS)}")
    b = sub.add_parser("benchmark", parents=[common], help="paired benchmark across methods")
    b.add_argument("--trials", type=int, metavar="N")
    b.add_argument("--method", "--methods", dest="method", metavar="NAME",
                   help="restrict to these methods (comma-separated)")
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    g.add_argument("--instances", "--trials", dest="instances", type=int, metavar="N")
    g.add_argument("--tol", type=float, help="override both suite tolerances")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.workers is not None:
        changes["workers"] = args.workers
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    return cfg.replace(**changes) if changes else cfg


COMMANDS = {"calibrate": cmd_calibrate, "simulate": cmd_simulate, "benchmark": cmd_benchmark,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientCalibration as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION


if __name__ == "__main__":
    sys.exit(main())
