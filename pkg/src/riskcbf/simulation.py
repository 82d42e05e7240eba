"""Closed-loop trials and the paired three-method benchmark."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .collision import min_scaling
from .conformal import ConformalInflator, inflate
from .dynamics import unicycle_step, wrap_angle
from .exceptions import CycleDetected, EmptyInterior, NoConvergence, SolverFailure
from .feasibility import assemble_polytope, max_inscribed_ellipsoid, volume_cbf
from .geometry import Ellipsoid, RobotShape, RobotState, robot_ellipse
from .perception import (
    Environment,
    EnvironmentConfig,
    SensorConfig,
    fit_clusters,
    generate_environment,
    lidar_scan,
)
from .qp import ControlSolution, Status, solve_plain_qp, solve_safety_qp, slack_within_budget

logger = logging.getLogger(__name__)

METHODS = ("proposed", "uninflated", "nofeasibility")
TRAJECTORY_COLUMNS = ("t", "p_x", "p_y", "theta", "v", "omega", "epsilon", "V", "h_min", "status")


@dataclass(frozen=True)
class TrialParams:
    kappa: float = 3.3
    kappa_v: float = 1.1
    gamma0: float = 1.2
    V0: float = 0.01
    M_diag: tuple = (1.0, 1.0)
    dt: float = 0.02
    horizon: float = 60.0
    success_radius: float = 0.1
    input_box: tuple = (-1.0, 1.0, -0.5, 0.5)
    k_omega: float = 2.0
    k_p: float = 1.0
    min_points: int = 3
    second_order: str = "fd"
    shape: RobotShape = field(default_factory=RobotShape)
    sensor: SensorConfig = field(default_factory=SensorConfig)

    @property
    def M(self) -> np.ndarray:
        return np.diag(np.asarray(self.M_diag, dtype=float))


@dataclass
class TrialOutcome:
    success: bool
    collision: bool
    timeout: bool
    steps: int
    min_true_gamma: float
    wall_time: float
    volume_trace: list
    method: str = ""
    seed: int = 0
    infeasible_steps: int = 0
    unsolved_steps: int = 0
    premise_violations: int = 0
    trajectory: dict = field(default_factory=dict, repr=False)

    @property
    def all_solved(self) -> bool:
        return self.unsolved_steps == 0

    @property
    def premise_held(self) -> bool:
        return self.unsolved_steps == 0 and self.premise_violations == 0

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("trajectory")
        d["volume_trace"] = [[float(t), float(v)] for t, v in self.volume_trace]
        return d


def nominal_control(x, goal, k_omega: float = 2.0, k_p: float = 1.0, input_box=(-1.0, 1.0, -0.5, 0.5)) -> np.ndarray:
    """Goal-seeking reference ``(v_r, omega_r)`` clamped to the input box."""
    x = RobotState(*map(float, x))
    dx, dy = goal[0] - x.p_x, goal[1] - x.p_y
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return np.zeros(2)
    e_th = wrap_angle(x.theta - math.atan2(dy, dx))
    v_min, v_max, w_min, w_max = input_box
    return np.array([
        min(max(k_p * dist * math.cos(e_th), v_min), v_max),
        min(max(-k_omega * e_th, w_min), w_max),
    ])


@dataclass
class StepResult:
    solution: ControlSolution
    V: float = float("nan")
    h_min: float = float("nan")
    label: str = "solved"
    premise_ok: bool = True


def safe_control(x, obstacles: Sequence[Ellipsoid], u_r, params: TrialParams, feasibility: bool = True) -> StepResult:
    """One filter step over already-inflated obstacle estimates.

    With ``feasibility`` the volume barrier row enters the QP; otherwise only
    the hard rows are enforced. Inputs with an empty interior fall back to the
    hard-row controller and are labelled ``no_interior``.
    """
    P = assemble_polytope(x, params.shape, obstacles, params.input_box, params.kappa, params.gamma0, params.second_order)
    h_min = min((r.h for r in P.cbf_rows), default=float("nan"))
    if not feasibility:
        sol = solve_plain_qp(u_r, params.M, P)
        return StepResult(sol, h_min=h_min, label=sol.status.value)
    try:
        E = max_inscribed_ellipsoid(P)
    except (EmptyInterior, NoConvergence):
        sol = solve_plain_qp(u_r, params.M, P)
        label = "infeasible" if sol.status is Status.INFEASIBLE else "no_interior"
        return StepResult(sol, V=0.0, h_min=h_min, label=label, premise_ok=False)
    vc = volume_cbf(x, P, E, params.V0, params.kappa_v)
    sol = solve_safety_qp(u_r, params.M, P, vc)
    ok = sol.solved and slack_within_budget(sol, params.kappa_v, params.V0)
    return StepResult(sol, V=vc.V, h_min=h_min, label=sol.status.value, premise_ok=ok)


def true_min_gamma(x, env: Environment, shape: RobotShape) -> float:
    R = robot_ellipse(x, shape)
    return min((min_scaling(E, R)[0] for E in env.obstacles), default=float("inf"))


def run_trial(env: Environment, method: str, params: TrialParams, delta: float, seed, keep_trajectory: bool = True) -> TrialOutcome:
    """Simulate one episode; ``seed`` keys the sensor-noise stream.

    ``delta`` is ignored for ``uninflated``, which always uses the raw fits.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    rng = np.random.default_rng(seed)
    scale = 1.0 if method == "uninflated" else float(delta)
    feasibility = method != "nofeasibility"
    n_steps = int(round(params.horizon / params.dt))
    x = env.start
    cols = {c: [] for c in TRAJECTORY_COLUMNS}
    vtrace = []
    min_gamma = true_min_gamma(x, env, params.shape)
    infeasible = unsolved = violations = 0
    success = collision = False
    t0 = time.perf_counter()
    step = 0
    while step < n_steps:
        if min_gamma < 1.0:
            collision = True
            break
        if math.hypot(x.p_x - env.goal[0], x.p_y - env.goal[1]) <= params.success_radius:
            success = True
            break
        scan = lidar_scan(x, env, params.sensor, rng)
        obstacles = [inflate(E, scale) for E in fit_clusters(scan, params.min_points).values()]
        u_r = nominal_control(x, env.goal, params.k_omega, params.k_p, params.input_box)
        try:
            res = safe_control(x, obstacles, u_r, params, feasibility)
        except (SolverFailure, CycleDetected) as exc:
            logger.warning("step %d: solver failure (%s); commanding zero input", step, exc)
            res = StepResult(ControlSolution(np.zeros(2), 0.0, float("inf"), Status.DEGRADED), label="failure", premise_ok=False)
        sol = res.solution
        if sol.status is Status.INFEASIBLE:
            infeasible += 1
        if res.label != "solved":
            unsolved += 1
        elif feasibility and not res.premise_ok:
            violations += 1
        t = step * params.dt
        if keep_trajectory:
            for c, val in zip(TRAJECTORY_COLUMNS, (t, x.p_x, x.p_y, x.theta, sol.u[0], sol.u[1], sol.epsilon, res.V, res.h_min, res.label)):
                cols[c].append(val)
        if feasibility:
            vtrace.append((t, res.V))
        x = unicycle_step(x, sol.u, params.dt)
        step += 1
        min_gamma = min(min_gamma, true_min_gamma(x, env, params.shape))
    else:
        # the last integration step may have ended in contact or at the goal
        if min_gamma < 1.0:
            collision = True
        elif math.hypot(x.p_x - env.goal[0], x.p_y - env.goal[1]) <= params.success_radius:
            success = True
    return TrialOutcome(
        success=success,
        collision=collision,
        timeout=not (success or collision),
        steps=step,
        min_true_gamma=float(min_gamma),
        wall_time=time.perf_counter() - t0,
        volume_trace=vtrace,
        method=method,
        seed=int(seed[0]) if isinstance(seed, (list, tuple)) else int(seed),
        infeasible_steps=infeasible,
        unsolved_steps=unsolved,
        premise_violations=violations,
        trajectory=cols,
    )


def trial_environment(seed: int, env_config: EnvironmentConfig, shape: RobotShape) -> Environment:
    return generate_environment(np.random.default_rng([seed, 0]), env_config, shape)


def noise_seed(seed: int, method: str) -> list:
    return [seed, 1, METHODS.index(method)]


def simulate(seed: int, method: str, params: TrialParams, env_config: EnvironmentConfig, delta: float,
             keep_trajectory: bool = True) -> TrialOutcome:
    """Trial ``seed``: the environment depends on ``seed`` only, the noise on ``(seed, method)``."""
    env = trial_environment(seed, env_config, params.shape)
    out = run_trial(env, method, params, delta, noise_seed(seed, method), keep_trajectory)
    out.seed = int(seed)
    return out


def _simulate_job(args):
    seed, method, params, env_config, delta = args
    return simulate(seed, method, params, env_config, delta, keep_trajectory=False)


def summarize(outcomes: Sequence[TrialOutcome], methods: Sequence[str]) -> list[dict]:
    """Per-method success, collision and timeout rates, wall time and margin statistics."""
    rows = []
    for m in methods:
        rs = sorted((o for o in outcomes if o.method == m), key=lambda o: o.seed)
        n = len(rs)
        if n == 0:
            continue
        steps = sum(o.steps for o in rs)
        rows.append({
            "method": m,
            "n_trials": n,
            "success_rate": sum(o.success for o in rs) / n,
            "collision_rate": sum(o.collision for o in rs) / n,
            "timeout_rate": sum(o.timeout for o in rs) / n,
            "mean_wall_time": float(np.mean([o.wall_time for o in rs])),
            "mean_min_gamma": float(np.mean([o.min_true_gamma for o in rs])),
            "infeasible_step_rate": sum(o.infeasible_steps for o in rs) / max(steps, 1),
            "premise_held_rate": sum(o.premise_held for o in rs) / n,
        })
    return rows


def run_benchmark(params: TrialParams, env_config: EnvironmentConfig, n_trials: int, methods: Sequence[str],
                  master_seed: int, delta: float, workers: int = 1) -> tuple[list[dict], list[TrialOutcome]]:
    """Paired benchmark: trial ``k`` uses seed ``master_seed + k`` for every method."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    jobs = [(master_seed + k, m, params, env_config, delta) for k in range(n_trials) for m in methods]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_simulate_job, jobs, chunksize=1))
    else:
        outcomes = [_simulate_job(j) for j in jobs]
    return summarize(outcomes, methods), outcomes


class SafetyFilter(BaseEstimator):
    """Calibrated safety filter.

    ``fit(records)`` learns the obstacle inflation from calibration records
    (``delta_``; forced to 1 for ``method="uninflated"``). ``predict(X)``
    maps rows ``(state, point_clouds, u_ref)`` to filtered inputs.
    """

    def __init__(self, method: str = "proposed", alpha: float = 0.05, kappa: float = 3.3, kappa_v: float = 1.1,
                 gamma0: float = 1.2, V0: float = 0.01, input_box=(-1.0, 1.0, -0.5, 0.5), min_points: int = 3):
        self.method = method
        self.alpha = alpha
        self.kappa = kappa
        self.kappa_v = kappa_v
        self.gamma0 = gamma0
        self.V0 = V0
        self.input_box = input_box
        self.min_points = min_points

    def _params(self) -> TrialParams:
        return TrialParams(kappa=self.kappa, kappa_v=self.kappa_v, gamma0=self.gamma0, V0=self.V0,
                           input_box=tuple(self.input_box), min_points=self.min_points)

    def fit(self, X, y=None):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        self.inflator_ = ConformalInflator(alpha=self.alpha).fit(X)
        self.delta_ = 1.0 if self.method == "uninflated" else self.inflator_.delta_
        return self

    def step(self, x, point_clouds, u_ref) -> StepResult:
        """Fit, inflate and filter for one state; clouds with too few points are ignored."""
        from .geometry import mvee_fit

        check_is_fitted(self, "delta_")
        obstacles = [inflate(mvee_fit(c), self.delta_) for c in point_clouds if len(c) >= self.min_points]
        return safe_control(x, obstacles, np.asarray(u_ref, dtype=float), self._params(), self.method != "nofeasibility")

    def predict(self, X) -> np.ndarray:
        return np.array([self.step(x, clouds, u).solution.u for x, clouds, u in X])
