"""Dense primal active-set QP and the two safety controllers built on it.

``solve_safety_qp`` minimizes ``||u - u_r||_M^2 + eps^2`` over the feasible
input polytope with the volume barrier row softened by ``eps >= 0``;
``solve_plain_qp`` drops the volume row and the slack.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CycleDetected
from .feasibility import FeasiblePolytope, VolumeCbf, halfplane_polygon, polygon_area_centroid

logger = logging.getLogger(__name__)

KKT_TOL = 1e-8
MAX_CHANGES = 100


class Status(str, enum.Enum):
    SOLVED = "solved"
    INFEASIBLE = "infeasible"
    DEGRADED = "degraded"


@dataclass
class ControlSolution:
    u: np.ndarray
    epsilon: float
    kkt_residual: float
    status: Status
    objective: float = np.nan
    active_set: list = field(default_factory=list)
    iterations: int = 0

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED


@dataclass
class QPResult:
    z: np.ndarray
    multipliers: np.ndarray
    active: list
    iterations: int
    kkt_residual: float


def kkt_residual(P, q, G, h, z, mu) -> float:
    """Max of stationarity, primal, dual and complementarity violations."""
    r = G @ z - h
    stat = np.linalg.norm(P @ z + q + G.T @ mu, np.inf)
    return float(max(stat, np.max(r, initial=0.0), np.max(-mu, initial=0.0), np.max(np.abs(mu * r), initial=0.0)))


def _eqp(P, q, G_w, z):
    n, k = P.shape[0], G_w.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = G_w.T
    K[n:, :n] = G_w
    rhs = np.concatenate([-(P @ z + q), np.zeros(k)])
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]


def active_set_qp(P, q, G, h, z0, tol: float = 1e-12) -> QPResult:
    """Minimize ``0.5 z'Pz + q'z`` s.t. ``G z <= h`` from a feasible ``z0``.

    Entering constraints are chosen by the lowest index among ties; the
    leaving constraint is the one with the most negative multiplier.
    """
    P, q, G, h = (np.asarray(a, dtype=float) for a in (P, q, G, h))
    z = np.asarray(z0, dtype=float).copy()
    m = G.shape[0]
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    work: list[int] = []
    # start from a linearly independent subset of the constraints active at z0
    for j in np.flatnonzero(np.abs(G @ z - h) <= 1e-10 * scale):
        cand = work + [int(j)]
        if np.linalg.matrix_rank(G[cand]) == len(cand) and len(cand) <= z.size:
            work = cand
    changes = 0
    iters = 0
    full_step = False
    while True:
        iters += 1
        G_w = G[work] if work else np.zeros((0, z.size))
        p, mu_w = _eqp(P, q, G_w, z)
        # a full unblocked step already lands on the working-set minimizer; rounding may leave p above tol
        if full_step or np.linalg.norm(p, np.inf) <= tol * max(1.0, np.linalg.norm(z, np.inf)):
            full_step = False
            if not work or mu_w.min() >= -tol:
                mu = np.zeros(m)
                mu[work] = np.maximum(mu_w, 0.0)
                z = z + p
                return QPResult(z, mu, sorted(work), iters, kkt_residual(P, q, G, h, z, mu))
            work.pop(int(np.argmin(mu_w)))
        else:
            Gp = G @ p
            slack = h - G @ z
            alpha, block = 1.0, None
            for j in range(m):
                if j in work or Gp[j] <= tol:
                    continue
                a_j = max(slack[j], 0.0) / Gp[j]
                if a_j < alpha - 1e-15:
                    alpha, block = a_j, j
            z = z + alpha * p
            if block is None:
                full_step = True
                continue
            work.append(block)
        changes += 1
        if changes > MAX_CHANGES:
            raise CycleDetected(f"active set changed more than {MAX_CHANGES} times")


def _objective(u, u_r, M, eps):
    d = u - u_r
    return float(d @ M @ d + eps * eps)


def _feasible_input(P: FeasiblePolytope):
    """A point satisfying the hard rows, or None when they are inconsistent."""
    V = halfplane_polygon(P.A, P.b)
    if len(V) == 0:
        return None
    _, c = polygon_area_centroid(V)
    if not np.all(P.A @ c <= P.b + 1e-9 * max(1.0, np.abs(P.b).max())):
        c = V.mean(axis=0)
        if not np.all(P.A @ c <= P.b + 1e-9 * max(1.0, np.abs(P.b).max())):
            return None
    return c


def _infeasible(n_u: int = 2) -> ControlSolution:
    return ControlSolution(np.zeros(n_u), 0.0, np.inf, Status.INFEASIBLE)


def _finish(res: QPResult, u, eps, u_r, M) -> ControlSolution:
    status = Status.SOLVED if res.kkt_residual <= KKT_TOL else Status.DEGRADED
    return ControlSolution(u, eps, res.kkt_residual, status, _objective(u, u_r, M, eps), res.active, res.iterations)


def solve_safety_qp(u_r, M, P: FeasiblePolytope, vcbf: VolumeCbf) -> ControlSolution:
    """Slack-augmented controller over ``z = (v, omega, eps)``.

    Returns status ``INFEASIBLE`` (with a zero input) when the hard rows admit
    no input; the volume row is always satisfiable through the slack.
    """
    u_r = np.asarray(u_r, dtype=float)
    M = np.asarray(M, dtype=float)
    u0 = _feasible_input(P)
    if u0 is None:
        return _infeasible()
    Pq = np.zeros((3, 3))
    Pq[:2, :2] = 2.0 * M
    Pq[2, 2] = 2.0
    q = np.concatenate([-2.0 * M @ u_r, [0.0]])
    k = P.n_rows
    G = np.zeros((k + 2, 3))
    G[:k, :2] = P.A
    G[k, 2] = -1.0
    G[k + 1, :2] = -vcbf.lg_hv
    G[k + 1, 2] = -1.0
    h = np.concatenate([P.b, [0.0, vcbf.lf_hv + vcbf.kappa_v * vcbf.h_v]])
    eps0 = max(0.0, -(vcbf.lf_hv + vcbf.lg_hv @ u0) - vcbf.kappa_v * vcbf.h_v) + 1.0
    res = active_set_qp(Pq, q, G, h, np.concatenate([u0, [eps0]]))
    return _finish(res, res.z[:2], max(float(res.z[2]), 0.0), u_r, M)


def solve_plain_qp(u_r, M, P: FeasiblePolytope) -> ControlSolution:
    """Hard-constrained controller without the volume row; infeasibility is an expected outcome."""
    u_r = np.asarray(u_r, dtype=float)
    M = np.asarray(M, dtype=float)
    u0 = _feasible_input(P)
    if u0 is None:
        return _infeasible()
    res = active_set_qp(2.0 * M, -2.0 * M @ u_r, P.A, P.b, u0)
    return _finish(res, res.z, 0.0, u_r, M)


def slack_within_budget(sol: ControlSolution, kappa_v: float, V0: float) -> bool:
    """Whether the slack stays within ``kappa_v * V0``, the premise of persistent feasibility."""
    ok = sol.epsilon <= kappa_v * V0
    if not ok:
        logger.info("slack %.3g exceeds kappa_v*V0 = %.3g; feasibility premise violated", sol.epsilon, kappa_v * V0)
    return ok
