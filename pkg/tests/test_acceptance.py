"""Acceptance suite: each test checks one criterion at its stated tolerance and time budget."""
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from riskcbf.collision import min_scaling
from riskcbf.conformal import build_calibration_set, inflate, nonconformity_score, record_stream
from riskcbf.feasibility import FeasiblePolytope, box_rows, max_inscribed_ellipsoid, volume_of
from riskcbf.geometry import Ellipsoid, RobotShape, RobotState, robot_ellipse
from riskcbf.gradcheck import collision_suite, volume_suite
from riskcbf.perception import Environment, EnvironmentConfig, SensorConfig, lidar_scan
from riskcbf.qp import solve_safety_qp
from riskcbf.simulation import METHODS, TrialParams, run_benchmark, simulate, trial_environment

from .oracles import inscribed_grid_search, random_polytope
from .test_qp import random_instance, safety_qp_oracle

pytestmark = pytest.mark.slow

ALPHA, N_CAL, N_TEST, SEED = 0.05, 5000, 2000, 0


@pytest.fixture(scope="module")
def calibration():
    t0 = time.perf_counter()
    sensor, env, shape = SensorConfig(), EnvironmentConfig(), RobotShape()
    _, res = build_calibration_set(SEED, sensor, N_CAL, ALPHA, env, shape)
    held_out = record_stream(SEED, N_CAL, N_TEST, sensor, env, shape)
    coverage = float(np.mean([nonconformity_score(r) <= res.delta for r in held_out]))
    return res, coverage, time.perf_counter() - t0


def test_conformal_coverage(calibration, report):
    res, coverage, elapsed = calibration
    bound = 0.95 - 3 * math.sqrt(0.05 * 0.95 / N_TEST)
    ok = report(1, "conformal coverage", coverage >= bound and elapsed < 120,
                f"containment {coverage:.4f} (>= {bound:.4f}) on {N_TEST} held-out records, {elapsed:.1f} s")
    assert ok


def test_inflation_in_range(calibration, report):
    res = calibration[0]
    ok = report(2, "inflation sanity", 1.0 < res.delta < 3.0, f"delta = {res.delta:.4f}, expected in (1, 3)")
    assert ok


def test_collision_analytic_cases(report):
    t0 = time.perf_counter()
    unit = Ellipsoid([0.0, 0.0], np.eye(2))
    g1, l1, _ = min_scaling(Ellipsoid([3.0, 0.0], np.eye(2)), unit)
    g2, l2, _ = min_scaling(Ellipsoid([4.0, 0.0], np.diag([0.25, 1.0])), unit)
    elapsed = time.perf_counter() - t0
    err = max(abs(g1 - 4), abs(l1 - 2), abs(g2 - 2.25), abs(l2 - 0.75))
    ok = report(3, "collision analytic cases", err <= 1e-8 and elapsed < 1.0,
                f"max error {err:.1e} (<= 1e-8), {elapsed * 1e3:.1f} ms")
    assert ok


def test_gradient_suites(report):
    t0 = time.perf_counter()
    col = collision_suite(200, seed=0, step=1e-5, tol=1e-4)
    vol = volume_suite(200, seed=0, step=1e-5, tol=2e-3)
    elapsed = time.perf_counter() - t0
    ok = report(4, "gradient suites", col.passed and vol.passed and elapsed < 120,
                f"collision {col.max_rel_error:.2e} (<= 1e-4), volume {vol.max_rel_error:.2e} (<= 2e-3) "
                f"on 200 instances each, {elapsed:.1f} s")
    assert ok


def test_inscribed_ellipse_exactness(report):
    E = max_inscribed_ellipsoid(FeasiblePolytope(*box_rows((-1.0, 1.0, -0.5, 0.5))))
    box_err = max(np.max(np.abs(E.H - np.diag([1.0, 0.5]))), np.max(np.abs(E.c)), abs(volume_of(E) - math.pi / 2))
    rng = np.random.default_rng(2024)
    worst = -math.inf
    for _ in range(50):
        A, b = random_polytope(rng)
        worst = max(worst, max_inscribed_ellipsoid(FeasiblePolytope(A, b)).v_star - inscribed_grid_search(A, b))
    ok = report(5, "inscribed ellipse", box_err <= 1e-6 and worst <= 1e-4,
                f"box error {box_err:.1e} (<= 1e-6); worst objective minus oracle {worst:.1e} (<= 1e-4) on 50 polytopes")
    assert ok


def test_qp_exactness(report):
    rng = np.random.default_rng(99)
    obj_err = kkt = 0.0
    for _ in range(500):
        u_r, M, P, vc = random_instance(rng)
        sol = solve_safety_qp(u_r, M, P, vc)
        obj_err = max(obj_err, abs(sol.objective - safety_qp_oracle(u_r, M, P, vc)))
        kkt = max(kkt, sol.kkt_residual)
    ok = report(6, "QP exactness", obj_err <= 1e-7 and kkt <= 1e-8,
                f"objective error {obj_err:.1e} (<= 1e-7), KKT residual {kkt:.1e} (<= 1e-8) on 500 instances")
    assert ok


def test_safety_invariance(report):
    """Proposed trials are run on consecutive seeds until 50 of them keep the solver successful and the
    slack within budget at every step, or the time budget runs out."""
    budget, wanted = 600.0, 50
    params, env_cfg = TrialParams(), EnvironmentConfig()
    _, res = build_calibration_set(SEED, params.sensor, N_CAL, ALPHA, env_cfg, params.shape)
    t0 = time.perf_counter()
    qualifying, violations, run = [], 0, 0
    while len(qualifying) < wanted and time.perf_counter() - t0 < budget:
        o = simulate(run, "proposed", params, env_cfg, res.delta, keep_trajectory=False)
        run += 1
        if o.premise_held:
            qualifying.append(o)
            if o.collision or o.min_true_gamma < 1.0 or not all(v > 0 for _, v in o.volume_trace):
                violations += 1
    elapsed = time.perf_counter() - t0
    ok = report(7, "safety invariance", len(qualifying) >= wanted and violations == 0 and elapsed < budget,
                f"{len(qualifying)} of {run} Proposed trials met the premise (need {wanted}); "
                f"{violations} with contact or V <= 0; {elapsed:.0f} s")
    assert ok


def test_benchmark_ordering(report):
    params, env_cfg = TrialParams(), EnvironmentConfig()
    _, res = build_calibration_set(SEED, params.sensor, N_CAL, ALPHA, env_cfg, params.shape)
    t0 = time.perf_counter()
    rows, outcomes = run_benchmark(params, env_cfg, 100, METHODS, 1000, res.delta, os.cpu_count() or 1)
    elapsed = time.perf_counter() - t0
    r = {row["method"]: row for row in rows}
    cluttered = {s for s in range(1000, 1100) if len(trial_environment(s, env_cfg, params.shape).obstacles) >= 6}
    nf = [o for o in outcomes if o.method == "nofeasibility" and o.seed in cluttered]
    nf_rate = sum(o.infeasible_steps for o in nf) / max(1, sum(o.steps for o in nf))
    solved = [o for o in outcomes if o.method == "proposed" and o.all_solved]
    p_rate = sum(o.infeasible_steps for o in solved) / max(1, sum(o.steps for o in solved))
    checks = {
        "success": r["proposed"]["success_rate"] >= r["uninflated"]["success_rate"],
        "collision": r["proposed"]["collision_rate"] <= r["uninflated"]["collision_rate"],
        "nofeasibility infeasible": nf_rate > 0,
        "proposed infeasible on solved runs": p_rate == 0,
        "runtime": elapsed < 1800,
    }
    detail = (f"success P/U/N {r['proposed']['success_rate']:.2f}/{r['uninflated']['success_rate']:.2f}/"
              f"{r['nofeasibility']['success_rate']:.2f}, collision P/U {r['proposed']['collision_rate']:.2f}/"
              f"{r['uninflated']['collision_rate']:.2f}, NoFeasibility infeasible-step rate {nf_rate:.3f} on "
              f"{len(cluttered)} cluttered seeds, Proposed {p_rate:.3f} on {len(solved)} solved runs, "
              f"{elapsed:.0f} s; failed: {[k for k, v in checks.items() if not v] or 'none'}")
    ok = report(8, "benchmark ordering", all(checks.values()), detail)
    assert ok


def test_inflation_law(report):
    rng = np.random.default_rng(8)
    worst, n = 0.0, 0
    while n < 100:
        c, s = rng.uniform(-3, 3, 2), rng.uniform(0.3, 1.5, 2)
        th = rng.uniform(0, math.pi)
        R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        E = Ellipsoid(c, R @ np.diag(1 / s**2) @ R.T)
        robot = robot_ellipse([*rng.uniform(-3, 3, 2), rng.uniform(-math.pi, math.pi)], RobotShape())
        g = min_scaling(E, robot)[0]
        if g == 0.0:
            continue
        delta = rng.uniform(1.0, 4.0)
        worst = max(worst, abs(min_scaling(inflate(E, delta), robot)[0] - g / delta) / max(1.0, g))
        n += 1
    ok = report(9, "inflation law", worst <= 1e-9, f"max deviation {worst:.1e} (<= 1e-9) on 100 pairs")
    assert ok


def test_ray_noise_statistics(report):
    # a tiny obstacle surrounding the sensor returns every ray, so each measured range carries one noise draw
    env = Environment([Ellipsoid([0.0, 0.0], np.eye(2) / 400.0)], np.array([9.0, 9.0]), RobotState(0.0, 0.0, 0.0))
    cfg = SensorConfig(n_rays=1000, max_range=50.0)
    rng = np.random.default_rng(10)
    noise = np.concatenate([(lambda s: s.measured_ranges - s.true_ranges)(lidar_scan([0.0, 0.0, 0.0], env, cfg, rng))
                            for _ in range(100)])
    mean, sigma = noise.mean(), 1.5 / math.sqrt(noise.size)
    p = stats.kstest(noise, "expon", args=(0.0, 1.5)).pvalue
    ok = report(10, "ray noise", abs(mean - 1.5) <= 3 * sigma and p > 0.01,
                f"mean {mean:.4f} over {noise.size} rays (1.5 +- {3 * sigma:.4f}), KS p = {p:.3f} (> 0.01)")
    assert ok
