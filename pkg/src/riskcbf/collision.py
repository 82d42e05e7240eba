"""Minimum scaling factor between an obstacle ellipse and the robot footprint.

The primal problem ``min F_O(p) s.t. F_R(p) <= 1`` is solved through its
one-dimensional dual: for a multiplier ``lam`` the stationary point is
``p(lam) = (Q_O + lam Q_R)^{-1} (Q_O mu_O + lam Q_R mu_R)`` and the optimal
multiplier is the root of ``F_R(p(lam)) - 1``, which is strictly decreasing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import dynamics
from ._jit import njit
from .exceptions import SolverFailure
from .geometry import Ellipsoid, RobotShape, RobotState, robot_ellipse, robot_shape_matrix, scaling_state_grad

ROOT_TOL = 1e-13


@dataclass(frozen=True)
class ScalingResult:
    gamma_star: float
    lambda_star: float
    p_star: np.ndarray
    grad_x: np.ndarray


@dataclass(frozen=True)
class CbfRow:
    h: float
    lf_h: float
    lg_h: np.ndarray
    kappa: float
    scaling: Optional[ScalingResult] = None


@njit(cache=True)
def _min_scaling_kernel(qa, qb, qc, ra, rb, rc, d0x, d0y, tol, max_iter):
    # returns (gamma, lam, wx, wy, status): 0 ok, 1 no bracket, 2 no convergence
    rx = qa * d0x + qb * d0y
    ry = qb * d0x + qc * d0y
    hi = 1.0
    ghi = 0.0
    bracketed = False
    for _ in range(200):
        a, b, c = qa + hi * ra, qb + hi * rb, qc + hi * rc
        det = a * c - b * b
        wx = (c * rx - b * ry) / det
        wy = (-b * rx + a * ry) / det
        ghi = ra * wx * wx + 2 * rb * wx * wy + rc * wy * wy - 1.0
        if ghi < 0.0:
            bracketed = True
            break
        hi *= 2.0
    if not bracketed:
        return 0.0, 0.0, 0.0, 0.0, 1
    lo = 0.0
    x = hi
    status = 2
    for _ in range(max_iter):
        a, b, c = qa + x * ra, qb + x * rb, qc + x * rc
        det = a * c - b * b
        ia, ib, ic = c / det, -b / det, a / det
        wx = ia * rx + ib * ry
        wy = ib * rx + ic * ry
        gx = ra * wx * wx + 2 * rb * wx * wy + rc * wy * wy - 1.0
        if abs(gx) <= tol:
            status = 0
            break
        if gx > 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4.0 * 2.220446049250313e-16 * max(abs(lo), abs(hi)):
            # the multiplier is pinned to machine precision even if |g| is not below tol
            status = 0
            break
        sx = ra * wx + rb * wy
        sy = rb * wx + rc * wy
        dg = -2.0 * (ia * sx * sx + 2 * ib * sx * sy + ic * sy * sy)
        step = x - gx / dg if dg != 0.0 else -1.0
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        x = step
    a, b, c = qa + x * ra, qb + x * rb, qc + x * rc
    det = a * c - b * b
    wx = (c * rx - b * ry) / det
    wy = (-b * rx + a * ry) / det
    ex, ey = wx - d0x, wy - d0y
    gamma = qa * ex * ex + 2 * qb * ex * ey + qc * ey * ey
    return gamma, x, wx, wy, status


def min_scaling(E_obs: Ellipsoid, E_rob: Ellipsoid) -> tuple[float, float, np.ndarray]:
    """Return ``(gamma_star, lambda_star, p_star)``.

    When the obstacle center lies inside the robot the constraint is inactive
    and ``(0, 0, mu_O)`` is returned.
    """
    if E_obs.dim != 2 or E_rob.dim != 2:
        raise ValueError("min_scaling is implemented for planar ellipses only")
    (qa, qb), (_, qc) = E_obs.shape
    (ra, rb), (_, rc) = E_rob.shape
    d0x, d0y = E_obs.center - E_rob.center
    if ra * d0x * d0x + 2 * rb * d0x * d0y + rc * d0y * d0y <= 1.0:
        return 0.0, 0.0, E_obs.center.copy()
    # the dual residual F_R(p(lam)) - 1 is strictly decreasing; Newton with bisection safeguard
    gamma, lam, wx, wy, status = _min_scaling_kernel(
        float(qa), float(qb), float(qc), float(ra), float(rb), float(rc), float(d0x), float(d0y), ROOT_TOL, 200
    )
    if status == 1:
        raise SolverFailure("could not bracket the dual multiplier")
    if status == 2:
        raise SolverFailure("dual root finding did not converge")
    return float(gamma), float(lam), E_rob.center + np.array([wx, wy])


def kkt_residual(E_obs: Ellipsoid, E_rob: Ellipsoid, lam: float, p) -> float:
    """Norm of the stationarity residual of the scaling problem."""
    p = np.asarray(p, dtype=float)
    r = 2.0 * E_obs.shape @ (p - E_obs.center) + lam * 2.0 * E_rob.shape @ (p - E_rob.center)
    return float(np.linalg.norm(r))


@njit(cache=True)
def _scaling_grad_kernel(cx, cy, qa, qb, qc, px, py, th, ia, ib, tol):
    # robot shape matrix and its heading derivative, then the dual solve and the pose gradient
    c, s = math.cos(th), math.sin(th)
    ra = ia * c * c + ib * s * s
    rb = (ia - ib) * c * s
    rc = ia * s * s + ib * c * c
    c2, s2 = math.cos(2.0 * th), math.sin(2.0 * th)
    k = ia - ib
    d0x, d0y = cx - px, cy - py
    if ra * d0x * d0x + 2.0 * rb * d0x * d0y + rc * d0y * d0y <= 1.0:
        return 0.0, 0.0, d0x, d0y, 0.0, 0.0, 0.0, 0
    gamma, lam, wx, wy, status = _min_scaling_kernel(qa, qb, qc, ra, rb, rc, d0x, d0y, tol, 200)
    g0 = -2.0 * lam * (ra * wx + rb * wy)
    g1 = -2.0 * lam * (rb * wx + rc * wy)
    g2 = lam * k * (-s2 * wx * wx + 2.0 * c2 * wx * wy + s2 * wy * wy)
    return gamma, lam, wx, wy, g0, g1, g2, status


def min_scaling_grad(x, s: RobotShape, E_obs: Ellipsoid) -> ScalingResult:
    """Scaling factor and its gradient with respect to the robot pose.

    Sensitivity of the optimal value equals the gradient of the Lagrangian,
    ``lam * dF_R(p*, theta_R(x)) / dx`` with ``p*`` held fixed.
    """
    px, py, th = (float(v) for v in x)
    (qa, qb), (_, qc) = E_obs.shape
    cx, cy = E_obs.center
    gamma, lam, wx, wy, g0, g1, g2, status = _scaling_grad_kernel(
        float(cx), float(cy), float(qa), float(qb), float(qc), px, py, th,
        1.0 / s.semi_axis_a**2, 1.0 / s.semi_axis_b**2, ROOT_TOL,
    )
    if status == 1:
        raise SolverFailure("could not bracket the dual multiplier")
    if status == 2:
        raise SolverFailure("dual root finding did not converge")
    p = np.array([px + wx, py + wy])
    return ScalingResult(float(gamma), float(lam), p, np.array([g0, g1, g2]))


def grad_jacobian_fd(x, s: RobotShape, E_obs: Ellipsoid, step: float = 1e-5) -> np.ndarray:
    """``d(grad_x)/dx`` by central differences of the analytic gradient."""
    x = np.asarray(x, dtype=float)
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        gp = min_scaling_grad(x + e, s, E_obs).grad_x
        gm = min_scaling_grad(x - e, s, E_obs).grad_x
        J[:, k] = (gp - gm) / (2.0 * step)
    return J


def grad_jacobian_kkt(x, s: RobotShape, E_obs: Ellipsoid) -> np.ndarray:
    """``d(grad_x)/dx`` by differentiating the KKT system of the scaling problem."""
    x = RobotState(*map(float, x))
    res = min_scaling_grad(x, s, E_obs)
    if res.gamma_star == 0.0:
        return np.zeros((3, 3))
    Q, dQ, ddQ = robot_shape_matrix(x.theta, s)
    lam = res.lambda_star
    d = res.p_star - np.array([x.p_x, x.p_y])
    Qd, dQd = Q @ d, dQ @ d
    dmu = np.hstack([np.eye(2), np.zeros((2, 1))])
    e_th = np.array([0.0, 0.0, 1.0])
    K = np.zeros((3, 3))
    K[:2, :2] = 2.0 * E_obs.shape + 2.0 * lam * Q
    K[:2, 2] = 2.0 * Qd
    K[2, :2] = 2.0 * Qd
    rhs = np.zeros((3, 3))
    rhs[:2] = 2.0 * lam * Q @ dmu - 2.0 * lam * np.outer(dQd, e_th)
    rhs[2] = 2.0 * Qd @ dmu - (d @ dQd) * e_th
    sol = np.linalg.solve(K, rhs)
    dp, dlam = sol[:2], sol[2]
    grad_F = np.concatenate([-2.0 * Qd, [d @ dQd]])
    dgradF_dp = np.vstack([-2.0 * Q, 2.0 * dQd])
    dgradF_dx = np.zeros((3, 3))
    dgradF_dx[:2, :2] = 2.0 * Q
    dgradF_dx[:2, 2] = -2.0 * dQd
    dgradF_dx[2, :2] = -2.0 * dQd
    dgradF_dx[2, 2] = d @ ddQ @ d
    return np.outer(grad_F, dlam) + lam * (dgradF_dp @ dp + dgradF_dx)


def cbf_row(
    x,
    s: RobotShape,
    E_obs: Ellipsoid,
    gamma0: float,
    kappa: float,
    drift: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> CbfRow:
    """Collision CBF ``h = gamma* - gamma0`` with its Lie derivatives along the unicycle."""
    if not gamma0 > 1.0:
        raise ValueError("gamma0 must exceed 1")
    if not kappa > 0.0:
        raise ValueError("kappa must be positive")
    res = min_scaling_grad(x, s, E_obs)
    lf = 0.0 if drift is None else float(res.grad_x @ drift(np.asarray(x, dtype=float)))
    lg = res.grad_x @ dynamics.input_matrix(x)
    return CbfRow(res.gamma_star - gamma0, lf, lg, kappa, res)
