"""Feasible input polytope, its largest inscribed ellipse and the volume barrier.

The inscribed ellipse ``{H w + c : ||w|| <= 1}`` of ``{u : A u <= b}`` maximizes
``log det H`` subject to ``||H a_j|| + a_j^T c <= b_j``. It is solved by a
log-barrier method over the upper triangle of ``H`` and ``c``; multipliers
come from the final barrier parameter as ``1 / (t * slack)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import dynamics
from ._jit import njit
from .collision import CbfRow, cbf_row, grad_jacobian_fd, grad_jacobian_kkt
from .exceptions import EmptyInterior, NoConvergence
from .geometry import Ellipsoid, RobotShape

logger = logging.getLogger(__name__)

ACTIVE_RTOL = 1e-5
_ZERO_ROW = 1e-12

Jacobian = Callable[[], tuple[np.ndarray, np.ndarray]]


def _constant_row() -> tuple[np.ndarray, np.ndarray]:
    return np.zeros((2, 3)), np.zeros(3)


@dataclass
class FeasiblePolytope:
    """Half-space rows ``A u <= b`` tagged by origin.

    ``kinds[j]`` is ``"bound"`` for input limits or the obstacle index for a
    collision row. ``jacobians[j]()`` returns ``(da_j/dx, db_j/dx)`` with
    shapes ``(2, 3)`` and ``(3,)``; it is evaluated lazily because only active
    rows need it.
    """

    A: np.ndarray
    b: np.ndarray
    kinds: list = field(default_factory=list)
    jacobians: list = field(default_factory=list)
    cbf_rows: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape != (self.b.size, 2):
            raise ValueError(f"A must be (k, 2) with k={self.b.size}, got {self.A.shape}")
        if not self.kinds:
            self.kinds = ["bound"] * self.b.size
        if not self.jacobians:
            self.jacobians = [_constant_row] * self.b.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def contains(self, u, tol: float = 0.0) -> bool:
        return bool(np.all(self.A @ np.asarray(u, dtype=float) <= self.b + tol))


@dataclass
class InscribedEllipsoid:
    H: np.ndarray
    c: np.ndarray
    v_star: float
    multipliers: np.ndarray
    active_set: np.ndarray
    slacks: np.ndarray
    iterations: int
    t_final: float
    near_degenerate: bool = False


@dataclass(frozen=True)
class VolumeCbf:
    V: float
    h_v: float
    lf_hv: float
    lg_hv: np.ndarray
    kappa_v: float
    dV_dx: np.ndarray


def box_rows(input_box: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``v_min <= v <= v_max, w_min <= w <= w_max`` for ``input_box = (v_min, v_max, w_min, w_max)``."""
    v_min, v_max, w_min, w_max = map(float, input_box)
    if not (v_min < v_max and w_min < w_max):
        raise ValueError(f"degenerate input box {input_box}")
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([v_max, -v_min, w_max, -w_min])
    return A, b


def _cbf_row_jacobian(x, shape, obstacle, row: CbfRow, second_order: str) -> Jacobian:
    x = np.array(x, dtype=float)

    def jac():
        res = row.scaling
        if res.gamma_star == 0.0:
            return np.zeros((2, 3)), np.zeros(3)
        if second_order == "kkt":
            J = grad_jacobian_kkt(x, shape, obstacle)
        else:
            J = grad_jacobian_fd(x, shape, obstacle)
        G = dynamics.input_matrix(x)
        th = x[2]
        # lg_h = G^T grad_x, differentiated through both factors
        dlg = G.T @ J
        dlg[0, 2] += -math.sin(th) * res.grad_x[0] + math.cos(th) * res.grad_x[1]
        return -dlg, row.kappa * res.grad_x

    return jac


def assemble_polytope(
    x,
    shape: RobotShape,
    obstacles: Sequence[Ellipsoid],
    input_box: Sequence[float],
    kappas: float | Sequence[float],
    gamma0: float,
    second_order: str = "fd",
) -> FeasiblePolytope:
    """Input-bound rows followed by one ``-L_g h_i u <= kappa_i h_i + L_f h_i`` row per obstacle."""
    if second_order not in ("fd", "kkt"):
        raise ValueError("second_order must be 'fd' or 'kkt'")
    A0, b0 = box_rows(input_box)
    if np.isscalar(kappas):
        kappas = [float(kappas)] * len(obstacles)
    if len(kappas) != len(obstacles):
        raise ValueError("need one kappa per obstacle")
    A, b = [A0], [b0]
    kinds = ["bound"] * 4
    jacs: list = [_constant_row] * 4
    rows = []
    for i, (E, k) in enumerate(zip(obstacles, kappas)):
        row = cbf_row(x, shape, E, gamma0, k)
        A.append(-row.lg_h[None, :])
        b.append([k * row.h + row.lf_h])
        kinds.append(i)
        jacs.append(_cbf_row_jacobian(x, shape, E, row, second_order))
        rows.append(row)
    return FeasiblePolytope(np.vstack(A), np.concatenate(b), kinds, jacs, rows)


@njit(cache=True)
def _clip_polygon(A, b, bound):
    # Sutherland-Hodgman clipping of the bounding square by each half-plane in turn
    cap = 4 + A.shape[0]
    poly = np.empty((cap, 2))
    out = np.empty((cap, 2))
    poly[0, 0], poly[0, 1] = -bound, -bound
    poly[1, 0], poly[1, 1] = bound, -bound
    poly[2, 0], poly[2, 1] = bound, bound
    poly[3, 0], poly[3, 1] = -bound, bound
    n = 4
    for j in range(A.shape[0]):
        if n == 0:
            break
        a0, a1, bj = A[j, 0], A[j, 1], b[j]
        k = 0
        for i in range(n):
            i2 = i + 1 if i + 1 < n else 0
            px, py = poly[i, 0], poly[i, 1]
            qx, qy = poly[i2, 0], poly[i2, 1]
            sp = a0 * px + a1 * py - bj
            sq = a0 * qx + a1 * qy - bj
            if sp <= 0.0:
                out[k, 0], out[k, 1] = px, py
                k += 1
            if (sp < 0.0 < sq) or (sq < 0.0 < sp):
                f = sp / (sp - sq)
                out[k, 0], out[k, 1] = px + f * (qx - px), py + f * (qy - py)
                k += 1
        poly, out = out, poly
        n = k
    return poly[:n].copy()


def halfplane_polygon(A: np.ndarray, b: np.ndarray, bound: float = 1e6) -> np.ndarray:
    """Vertices (counter-clockwise) of ``{u : A u <= b}`` clipped to ``[-bound, bound]^2``."""
    A = np.ascontiguousarray(A, dtype=float).reshape(-1, 2)
    b = np.ascontiguousarray(b, dtype=float).reshape(-1)
    return _clip_polygon(A, b, float(bound))


def polygon_area_centroid(V: np.ndarray) -> tuple[float, np.ndarray]:
    if len(V) < 3:
        return 0.0, V.mean(axis=0) if len(V) else np.zeros(2)
    x, y = V[:, 0], V[:, 1]
    xn, yn = np.concatenate([x[1:], x[:1]]), np.concatenate([y[1:], y[:1]])
    cross = x * yn - xn * y
    area = 0.5 * float(cross.sum())
    if abs(area) < 1e-300:
        return 0.0, V.mean(axis=0)
    cx = float((x + xn) @ cross) / (6 * area)
    cy = float((y + yn) @ cross) / (6 * area)
    return abs(area), np.array([cx, cy])


def _strict_interior_point(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    V = halfplane_polygon(A, b)
    area, c0 = polygon_area_centroid(V)
    if len(V) and np.max(np.abs(V)) >= 1e6 * (1 - 1e-9):
        raise ValueError("polytope is unbounded")
    norms = np.linalg.norm(A, axis=1)
    r = float(np.min((b - A @ c0) / norms)) if len(V) else -1.0
    if area <= 1e-14 or r <= 0.0:
        raise EmptyInterior(f"feasible input set has no interior (area={area:.3g})")
    return c0, r


@njit(cache=True)
def _barrier_value(z, A, b, t):
    h11, h12, h22, c1, c2 = z[0], z[1], z[2], z[3], z[4]
    det = h11 * h22 - h12 * h12
    if det <= 0.0 or h11 <= 0.0:
        return np.inf
    f = -t * np.log(det)
    for j in range(A.shape[0]):
        a1, a2 = A[j, 0], A[j, 1]
        y0 = a1 * h11 + a2 * h12
        y1 = a1 * h12 + a2 * h22
        s = b[j] - a1 * c1 - a2 * c2 - np.sqrt(y0 * y0 + y1 * y1)
        if s <= 0.0:
            return np.inf
        f -= np.log(s)
    return f


@njit(cache=True)
def _barrier_derivatives(z, A, b, t):
    h11, h12, h22, c1, c2 = z[0], z[1], z[2], z[3], z[4]
    det = h11 * h22 - h12 * h12
    dD = np.array([h22, -2.0 * h12, h11])
    d2D = np.array([[0.0, 0.0, 1.0], [0.0, -2.0, 0.0], [1.0, 0.0, 0.0]])
    grad = np.zeros(5)
    hess = np.zeros((5, 5))
    for p in range(3):
        grad[p] = -t * dD[p] / det
        for q in range(3):
            hess[p, q] = t * (dD[p] * dD[q] / det**2 - d2D[p, q] / det)
    G = np.empty(5)
    Bv = np.empty(3)
    for j in range(A.shape[0]):
        a1, a2 = A[j, 0], A[j, 1]
        y0 = a1 * h11 + a2 * h12
        y1 = a1 * h12 + a2 * h22
        n = np.sqrt(y0 * y0 + y1 * y1)
        s = b[j] - a1 * c1 - a2 * c2 - n
        # G = d(n_j + a_j^T c)/dz; -log s_j adds G/s to the gradient, G G^T/s^2 + hess(n_j)/s to the Hessian
        G[0] = a1 * y0 / n
        G[1] = (a2 * y0 + a1 * y1) / n
        G[2] = a2 * y1 / n
        G[3] = a1
        G[4] = a2
        v0, v1 = -y1 / n, y0 / n
        Bv[0] = a1 * v0
        Bv[1] = a2 * v0 + a1 * v1
        Bv[2] = a2 * v1
        for p in range(5):
            grad[p] += G[p] / s
            for q in range(5):
                hess[p, q] += G[p] * G[q] / (s * s)
        for p in range(3):
            for q in range(3):
                hess[p, q] += Bv[p] * Bv[q] / (s * n)
    return grad, hess


@njit(cache=True)
def _barrier_solve(z, A, b, tol, max_outer, max_newton, decrement_tol):
    """Returns (z, t, newton_iterations, status); status 0 ok, 1 centering stalled, 2 schedule exhausted."""
    k = A.shape[0]
    t = 1.0
    total = 0
    for _ in range(max_outer):
        converged = False
        prev = np.inf
        for _ in range(max_newton):
            g, Hs = _barrier_derivatives(z, A, b, t)
            dz = -np.linalg.solve(Hs, g)
            dec2 = -(g @ dz)
            total += 1
            if dec2 / 2.0 <= decrement_tol:
                converged = True
                break
            if dec2 < 1e-4:
                # quadratic region: full Newton steps; the barrier value itself is
                # too coarse at large t to arbitrate, so stop once the decrement stalls
                if dec2 >= prev:
                    converged = True
                    break
                prev = dec2
                step = 1.0
                while not np.isfinite(_barrier_value(z + step * dz, A, b, t)):
                    step *= 0.5
                z = z + step * dz
                continue
            f = _barrier_value(z, A, b, t)
            step = 1.0
            while not _barrier_value(z + step * dz, A, b, t) <= f - 0.25 * step * dec2:
                step *= 0.5
                if step < 1e-12:
                    break
            if step < 1e-12:
                converged = True
                break
            z = z + step * dz
        if not converged:
            return z, t, total, 1
        if k / t <= tol:
            return z, t, total, 0
        t *= 10.0
    return z, t, total, 2


def max_inscribed_ellipsoid(P: FeasiblePolytope, tol: float = 1e-7, max_outer: int = 30) -> InscribedEllipsoid:
    """Largest-area ellipse ``{H w + c : ||w|| <= 1}`` inside the polytope."""
    A, b = P.A, P.b
    norms = np.linalg.norm(A, axis=1)
    keep = norms > _ZERO_ROW
    if np.any(~keep & (b <= 0.0)):
        raise EmptyInterior("a vanishing row with nonpositive offset excludes every input")
    Ak, bk = A[keep], b[keep]
    c0, r = _strict_interior_point(Ak, bk)
    z = np.array([0.5 * r, 0.0, 0.5 * r, c0[0], c0[1]])
    z, t, total, status = _barrier_solve(z, Ak, bk, float(tol), int(max_outer), 100, 1e-14)
    if status == 1:
        raise NoConvergence(f"barrier centering did not converge at t={t:g}")
    if status == 2:
        raise NoConvergence("barrier parameter schedule exhausted")
    h11, h12, h22, c1, c2 = z
    H = np.array([[h11, h12], [h12, h22]])
    s_keep = bk - Ak @ z[3:] - np.linalg.norm(Ak @ H, axis=1)
    slacks = b - A @ z[3:] - np.linalg.norm(A @ H, axis=1)
    lam = np.zeros(A.shape[0])
    lam[keep] = 1.0 / (t * s_keep)
    active = np.flatnonzero(lam >= ACTIVE_RTOL * lam.max())
    near = bool(np.any((lam > ACTIVE_RTOL * lam.max() / 10) & (lam < 10 * ACTIVE_RTOL * lam.max())))
    if near:
        logger.debug("multiplier within a decade of the activity threshold; sensitivities may be nonsmooth")
    return InscribedEllipsoid(
        H=H,
        c=z[3:].copy(),
        v_star=-math.log(h11 * h22 - h12 * h12),
        multipliers=lam,
        active_set=active,
        slacks=slacks,
        iterations=total,
        t_final=t,
        near_degenerate=near,
    )


def volume_of(E: InscribedEllipsoid, m: int = 2) -> float:
    if m != 2:
        raise NotImplementedError("only planar input spaces are supported")
    V = math.pi * float(np.linalg.det(E.H))
    if abs(V - math.pi * math.exp(-E.v_star)) > 1e-6 * max(V, 1e-300):
        raise AssertionError("determinant and optimal value disagree")
    return V


def value_sensitivities(P: FeasiblePolytope, E: InscribedEllipsoid) -> tuple[np.ndarray, np.ndarray]:
    """``dv*/da_j`` (rows) and ``dv*/db_j`` over all rows; zero off the active set."""
    dv_da = np.zeros_like(P.A)
    dv_db = np.zeros(P.n_rows)
    H2 = E.H @ E.H
    for j in E.active_set:
        a = P.A[j]
        lam = E.multipliers[j]
        dv_da[j] = lam * (H2 @ a / np.linalg.norm(E.H @ a) + E.c)
        dv_db[j] = -lam
    return dv_da, dv_db


def volume_cbf(
    x,
    P: FeasiblePolytope,
    E: InscribedEllipsoid,
    V0: float,
    kappa_v: float,
    drift: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> VolumeCbf:
    """Volume barrier ``h_v = V - V0`` and its Lie derivatives.

    The state gradient of ``v*`` collects the active rows only, combining the
    multiplier sensitivities with each row's state Jacobian.
    """
    V = volume_of(E)
    dv_da, dv_db = value_sensitivities(P, E)
    dv_dx = np.zeros(3)
    for j in E.active_set:
        if P.kinds[j] == "bound":
            continue
        da_dx, db_dx = P.jacobians[j]()
        dv_dx += dv_da[j] @ da_dx + dv_db[j] * db_dx
    dV_dx = -math.pi * math.exp(-E.v_star) * dv_dx
    x = np.asarray(x, dtype=float)
    lf = 0.0 if drift is None else float(dV_dx @ drift(x))
    lg = dV_dx @ dynamics.input_matrix(x)
    return VolumeCbf(V, V - V0, lf, lg, kappa_v, dV_dx)
