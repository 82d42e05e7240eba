"""Finite-difference checks of the collision and volume barrier gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .collision import min_scaling, min_scaling_grad
from .exceptions import EmptyInterior, NoConvergence
from .feasibility import assemble_polytope, max_inscribed_ellipsoid, volume_cbf, volume_of
from .geometry import Ellipsoid, RobotShape, RobotState, robot_ellipse


@dataclass
class SuiteReport:
    name: str
    n_instances: int
    max_rel_error: float
    tolerance: float
    errors: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def to_dict(self) -> dict:
        return {"suite": self.name, "n_instances": self.n_instances, "max_rel_error": self.max_rel_error,
                "tolerance": self.tolerance, "passed": self.passed}


def rel_error(g: np.ndarray, g_ref: np.ndarray) -> float:
    """``||g - g_ref|| / ||g_ref||`` in the Euclidean norm."""
    return float(np.linalg.norm(g - g_ref) / max(np.linalg.norm(g_ref), 1e-300))


def _random_ellipse(rng, center, axis_range=(0.3, 1.5)) -> Ellipsoid:
    a = rng.uniform(*axis_range, size=2)
    th = rng.uniform(0, math.pi)
    c, s = math.cos(th), math.sin(th)
    R = np.array([[c, -s], [s, c]])
    return Ellipsoid(np.asarray(center, dtype=float), R @ np.diag(1.0 / a**2) @ R.T)


def collision_instance(rng, shape: RobotShape, gamma_range=(1.05, 200.0)):
    """Random obstacle and robot pose with the scaling factor inside ``gamma_range``."""
    while True:
        E = _random_ellipse(rng, rng.uniform(-3, 3, size=2))
        x = np.array([*rng.uniform(-3, 3, size=2), rng.uniform(-math.pi, math.pi)])
        g = min_scaling(E, robot_ellipse(x, shape))[0]
        if gamma_range[0] < g < gamma_range[1]:
            return x, E


def central_difference(f, x: np.ndarray, step: float) -> np.ndarray:
    g = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = step
        g[k] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def collision_suite(n: int, seed: int = 0, step: float = 1e-5, tol: float = 1e-4,
                    shape: RobotShape | None = None) -> SuiteReport:
    """Analytic scaling-factor gradient against central differences of a fresh solve."""
    shape = shape or RobotShape()
    rng = np.random.default_rng([seed, 11])
    errs = []
    for _ in range(n):
        x, E = collision_instance(rng, shape)
        g = min_scaling_grad(x, shape, E).grad_x
        g_fd = central_difference(lambda y: min_scaling(E, robot_ellipse(y, shape))[0], x, step)
        errs.append(rel_error(g, g_fd))
    return SuiteReport("collision", n, max(errs), tol, errs)


def _volume(x, shape, obstacles, box, kappa, gamma0) -> float:
    P = assemble_polytope(x, shape, obstacles, box, kappa, gamma0)
    return volume_of(max_inscribed_ellipsoid(P))


def volume_instance(rng, shape: RobotShape, box=(-1.0, 1.0, -0.5, 0.5), kappa=3.3, gamma0=1.2, V0=0.01,
                    kappa_v=1.1, min_grad=1e-6):
    """Random pose with 1-3 nearby obstacles whose rows shape the inscribed ellipse.

    Instances where no collision row is active, or where a multiplier sits
    near the activity threshold, are redrawn: the volume is not differentiable
    at active-set changes.
    """
    while True:
        x = np.array([0.0, 0.0, rng.uniform(-math.pi, math.pi)])
        obstacles = []
        for _ in range(int(rng.integers(1, 4))):
            ang = rng.uniform(-math.pi, math.pi)
            obstacles.append(_random_ellipse(rng, rng.uniform(1.2, 2.5) * np.array([math.cos(ang), math.sin(ang)]),
                                             (0.3, 1.0)))
        R = robot_ellipse(x, shape)
        if min(min_scaling(E, R)[0] for E in obstacles) <= 1.05:
            continue
        P = assemble_polytope(x, shape, obstacles, box, kappa, gamma0)
        try:
            Ein = max_inscribed_ellipsoid(P)
        except (EmptyInterior, NoConvergence):
            continue
        if Ein.near_degenerate or not any(P.kinds[j] != "bound" for j in Ein.active_set):
            continue
        vc = volume_cbf(x, P, Ein, V0, kappa_v)
        if np.linalg.norm(vc.dV_dx) < min_grad:
            continue
        return x, obstacles, vc


def volume_suite(n: int, seed: int = 0, step: float = 1e-5, tol: float = 2e-3, shape: RobotShape | None = None,
                 box=(-1.0, 1.0, -0.5, 0.5), kappa=3.3, gamma0=1.2) -> SuiteReport:
    """Volume gradient against central differences that re-assemble and re-solve at each perturbed state."""
    shape = shape or RobotShape()
    rng = np.random.default_rng([seed, 13])
    errs = []
    for _ in range(n):
        x, obstacles, vc = volume_instance(rng, shape, box, kappa, gamma0)
        g_fd = central_difference(lambda y: _volume(y, shape, obstacles, box, kappa, gamma0), x, step)
        errs.append(rel_error(vc.dV_dx, g_fd))
    return SuiteReport("volume", n, max(errs), tol, errs)


def run_suites(n: int, seed: int = 0, step: float = 1e-5, collision_tol: float = 1e-4,
               volume_tol: float = 2e-3) -> list[SuiteReport]:
    return [collision_suite(n, seed, step, collision_tol), volume_suite(n, seed, step, volume_tol)]
