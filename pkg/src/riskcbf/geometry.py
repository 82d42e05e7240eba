"""Ellipsoidal regions, the robot footprint map and minimum-volume enclosing fits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._jit import njit
from ._validation import check_point_cloud
from .exceptions import DegenerateCloud, NoConvergence
from .numerics import as_sym, cholesky


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Region ``{p : (p - center)^T shape (p - center) <= 1}``."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        shape = as_sym(self.shape)
        if shape.shape != (center.size, center.size):
            raise ValueError(f"center dim {center.size} does not match shape {shape.shape}")
        if not np.all(np.isfinite(center)):
            raise ValueError("center must be finite")
        cholesky(shape)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def trusted(cls, center: np.ndarray, shape: np.ndarray) -> "Ellipsoid":
        """Skip validation; for internal callers that build a symmetric PD shape by construction."""
        E = object.__new__(cls)
        object.__setattr__(E, "center", center)
        object.__setattr__(E, "shape", shape)
        return E

    @property
    def dim(self) -> int:
        return self.center.size

    def scaling(self, p) -> np.ndarray | float:
        """Evaluate ``(p - center)^T shape (p - center)`` for one point or a stack of points."""
        d = np.asarray(p, dtype=float) - self.center
        if d.ndim == 1:
            return float(d @ self.shape @ d)
        return np.einsum("ij,jk,ik->i", d, self.shape, d)

    def contains(self, p, tol: float = 0.0):
        return self.scaling(p) <= 1.0 + tol

    def semi_axes(self) -> np.ndarray:
        return 1.0 / np.sqrt(np.linalg.eigvalsh(self.shape))

    def volume(self) -> float:
        n = self.dim
        unit = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
        return unit / math.sqrt(np.linalg.det(self.shape))

    def boundary_points(self, n: int = 64) -> np.ndarray:
        """Evenly spaced boundary points of a 2D ellipse (plotting, tests)."""
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        circle = np.stack([np.cos(t), np.sin(t)], axis=1)
        L = cholesky(self.shape)
        # shape = L L^T, so p = center + L^{-T} z maps the unit circle to the boundary
        return self.center + np.linalg.solve(L.T, circle.T).T

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "Ellipsoid":
        """Image of the region under ``p -> R p + t`` for orthogonal ``R``."""
        return Ellipsoid(R @ self.center + t, R @ self.shape @ R.T)

    def __repr__(self):
        return f"Ellipsoid(center={self.center.tolist()}, shape={self.shape.tolist()})"


@dataclass(frozen=True)
class RobotShape:
    semi_axis_a: float = 0.4
    semi_axis_b: float = 0.25

    def __post_init__(self):
        if not (self.semi_axis_a > 0 and self.semi_axis_b > 0):
            raise ValueError("robot semi-axes must be strictly positive")


class RobotState(NamedTuple):
    p_x: float
    p_y: float
    theta: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y])


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def robot_shape_matrix(theta: float, s: RobotShape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shape matrix of the robot footprint and its first two derivatives in ``theta``."""
    c, sn = math.cos(theta), math.sin(theta)
    ia = 1.0 / s.semi_axis_a**2
    ib = 1.0 / s.semi_axis_b**2
    Q = np.array([[ia * c * c + ib * sn * sn, (ia - ib) * c * sn],
                  [(ia - ib) * c * sn, ia * sn * sn + ib * c * c]])
    c2, s2 = math.cos(2 * theta), math.sin(2 * theta)
    dQ = (ia - ib) * np.array([[-s2, c2], [c2, s2]])
    ddQ = 2.0 * (ia - ib) * np.array([[-c2, -s2], [-s2, c2]])
    return Q, dQ, ddQ


def robot_ellipse(x, s: RobotShape) -> Ellipsoid:
    """Footprint of the robot at pose ``x``: centered at the position, major axis along the heading."""
    x = RobotState(*map(float, x))
    Q, _, _ = robot_shape_matrix(x.theta, s)
    return Ellipsoid.trusted(np.array([x.p_x, x.p_y]), Q)


def scaling_state_grad(x, s: RobotShape, p) -> np.ndarray:
    """Gradient of ``F_R(p, theta_R(x))`` with respect to ``(p_x, p_y, theta)`` at fixed ``p``."""
    x = RobotState(*map(float, x))
    Q, dQ, _ = robot_shape_matrix(x.theta, s)
    d = np.asarray(p, dtype=float) - np.array([x.p_x, x.p_y])
    g = np.empty(3)
    g[:2] = -2.0 * Q @ d
    g[2] = d @ dQ @ d
    return g


@njit(cache=True)
def _inv3(M, out):
    a, b, c = M[0, 0], M[0, 1], M[0, 2]
    d, e, f = M[1, 0], M[1, 1], M[1, 2]
    g, h, k = M[2, 0], M[2, 1], M[2, 2]
    A = e * k - f * h
    B = -(d * k - f * g)
    C = d * h - e * g
    inv_det = 1.0 / (a * A + b * B + c * C)
    out[0, 0] = A * inv_det
    out[1, 0] = B * inv_det
    out[2, 0] = C * inv_det
    out[0, 1] = -(b * k - c * h) * inv_det
    out[1, 1] = (a * k - c * g) * inv_det
    out[2, 1] = -(a * h - b * g) * inv_det
    out[0, 2] = (b * f - c * e) * inv_det
    out[1, 2] = -(a * f - c * d) * inv_det
    out[2, 2] = (a * e - b * d) * inv_det


@njit(cache=True)
def _todd_yildirim_kernel(P, tol, max_iter):
    n, d = P.shape
    m = d + 1
    q = np.ones((n, m))
    q[:, :d] = P
    u = np.full(n, 1.0 / n)
    M = np.zeros((m, m))
    for i in range(n):
        for a in range(m):
            for b in range(m):
                M[a, b] += u[i] * q[i, a] * q[i, b]
    g = np.empty(n)
    Mi = np.empty((m, m))
    for it in range(max_iter):
        if m == 3:
            _inv3(M, Mi)
        else:
            Mi[:, :] = np.linalg.inv(M)
        for i in range(n):
            acc = 0.0
            for a in range(m):
                row = 0.0
                for b in range(m):
                    row += Mi[a, b] * q[i, b]
                acc += q[i, a] * row
            g[i] = acc
        j = np.argmax(g)
        k = -1
        for i in range(n):
            if u[i] > 0.0 and (k < 0 or g[i] < g[k]):
                k = i
        kappa_plus = g[j] / m - 1.0
        kappa_minus = 1.0 - g[k] / m
        if kappa_plus <= tol and kappa_minus <= tol:
            return u, True
        if kappa_plus >= kappa_minus:
            step = (g[j] - m) / (m * (g[j] - 1))
            idx = j
        else:
            # away step, clipped so the weight of k stays nonnegative
            step = -min((m - g[k]) / (m * (g[k] - 1)), u[k] / (1.0 - u[k]))
            idx = k
        u *= 1.0 - step
        u[idx] = max(u[idx] + step, 0.0)
        for a in range(m):
            for b in range(m):
                M[a, b] = (1.0 - step) * M[a, b] + step * q[idx, a] * q[idx, b]
        if it % 64 == 63:
            # refresh the moment matrix to shed accumulated rounding
            M[:, :] = 0.0
            for i in range(n):
                for a in range(m):
                    for b in range(m):
                        M[a, b] += u[i] * q[i, a] * q[i, b]
    return u, False


def _leverages(q: np.ndarray, u: np.ndarray) -> np.ndarray:
    Mi = np.linalg.inv((q.T * u) @ q)
    return np.einsum("ij,jk,ik->i", q, Mi, q)


def _barrier_polish(P: np.ndarray, u0: np.ndarray, tol: float, max_newton: int = 60):
    """Finish the dual design problem with a log-barrier Newton method.

    Minimizes ``-log det M(u) - mu * sum(log u)`` on the simplex for a
    decreasing ``mu``. At each barrier optimum every leverage is below
    ``m + n * mu``, so stopping at ``n * mu <= 0.1 * tol * m`` certifies the
    same tolerance as the first-order loop. Returns ``(u, converged)``.
    """
    n, d = P.shape
    m = d + 1
    q = np.hstack([P, np.ones((n, 1))])
    u = np.maximum(u0, 1e-12)
    u /= u.sum()
    mu, mu_final = 1e-3 * m / n, 0.1 * tol * m / n
    ones = np.ones(n)
    while True:
        for _ in range(max_newton):
            Mi = np.linalg.inv((q.T * u) @ q)
            G = q @ Mi @ q.T
            grad = -np.diag(G) - mu / u
            K = np.zeros((n + 1, n + 1))
            K[:n, :n] = G * G + np.diag(mu / u**2)
            K[:n, n] = K[n, :n] = ones
            du = np.linalg.solve(K, np.concatenate([-grad, [0.0]]))[:n]
            decrement = -grad @ du
            if decrement <= 1e-14:
                break
            neg = du < 0
            step = min(1.0, 0.99 * float(np.min(-u[neg] / du[neg]))) if np.any(neg) else 1.0
            phi = -np.linalg.slogdet((q.T * u) @ q)[1] - mu * np.sum(np.log(u))
            while step > 1e-12:
                v = u + step * du
                if -np.linalg.slogdet((q.T * v) @ q)[1] - mu * np.sum(np.log(v)) <= phi - 0.25 * step * decrement:
                    break
                step *= 0.5
            u = u + step * du
        if mu <= mu_final:
            break
        mu = max(0.1 * mu, mu_final)
    return u, float(np.max(_leverages(q, u))) <= m * (1.0 + tol)


def _todd_yildirim(P: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Khachiyan's first-order MVEE iteration with Todd-Yildirim away steps.

    Returns the barycentric weights ``u`` over the rows of ``P``. A run that
    stalls at ``max_iter`` (linear convergence degrades when a hull point sits
    on the optimal boundary with zero weight) is finished by
    :func:`_barrier_polish`.
    """
    P = np.ascontiguousarray(P, dtype=float)
    u, converged = _todd_yildirim_kernel(P, float(tol), int(max_iter))
    if not converged:
        u, converged = _barrier_polish(P, u, tol)
    if not converged:
        raise NoConvergence(f"MVEE iteration did not reach tol={tol:g}")
    return u


def _eigh2(a: float, b: float, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenpairs of ``[[a, b], [b, c]]`` in closed form."""
    mean = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    lo, hi = mean - rad, mean + rad
    if rad == 0.0:
        return np.array([lo, hi]), np.eye(2)
    # eigenvector of the larger eigenvalue via the better-conditioned row
    if a >= c:
        vx, vy = hi - c, b
    else:
        vx, vy = b, hi - a
    nrm = math.hypot(vx, vy)
    vx, vy = vx / nrm, vy / nrm
    # the small eigenvalue is recomputed from the determinant to avoid cancellation
    lo = (a * c - b * b) / hi if hi > 0.0 else lo
    return np.array([lo, hi]), np.array([[-vy, vx], [vx, vy]])


def _scatter_eig(P: np.ndarray):
    shift = P.mean(axis=0)
    centered = P - shift
    C = centered.T @ centered
    if C.shape == (2, 2):
        return (shift, *_eigh2(C[0, 0], C[0, 1], C[1, 1]))
    ev, V = np.linalg.eigh(C)
    return shift, ev, V


def _degenerate(ev: np.ndarray) -> np.ndarray:
    """Mask of scatter directions with (numerically) no spread."""
    top = ev[-1]
    return (ev <= 1e-18 * top) | (ev <= 1e-24)


def _whitening(P: np.ndarray):
    """Mean and symmetric inverse square root of the scatter matrix, or None when affinely dependent."""
    if P.shape[0] < P.shape[1] + 1:
        return None
    shift, ev, V = _scatter_eig(P)
    if np.any(_degenerate(ev)):
        return None
    return shift, (V / np.sqrt(ev)) @ V.T


def _jitter(P: np.ndarray, jitter: float) -> np.ndarray:
    """Copies of each point shifted by +-jitter along every direction in which the cloud has no spread."""
    _, ev, V = _scatter_eig(P)
    mask = _degenerate(ev)
    N = V[:, mask].T if P.shape[0] > 1 else np.eye(P.shape[1])
    offsets = jitter * np.vstack([N, -N])
    return (P[:, None, :] + offsets[None, :, :]).reshape(-1, P.shape[1])


@njit(cache=True)
def _hull_2d(P):
    # Andrew's monotone chain; returns indices of strict hull vertices
    n = P.shape[0]
    order = np.argsort(P[:, 0] + 1e-300 * P[:, 1], kind="mergesort")
    # stable lexicographic sort on (x, y)
    for a in range(1, n):
        b = a
        while b > 0 and P[order[b - 1], 0] == P[order[b], 0] and P[order[b - 1], 1] > P[order[b], 1]:
            order[b - 1], order[b] = order[b], order[b - 1]
            b -= 1
    hull = np.empty(2 * n, dtype=np.int64)
    k = 0
    for step in range(2):
        start = k
        for t in range(n):
            i = order[t] if step == 0 else order[n - 1 - t]
            while k >= start + 2:
                o, a = hull[k - 2], hull[k - 1]
                cross = (P[a, 0] - P[o, 0]) * (P[i, 1] - P[o, 1]) - (P[a, 1] - P[o, 1]) * (P[i, 0] - P[o, 0])
                if cross <= 0.0:
                    k -= 1
                else:
                    break
            hull[k] = i
            k += 1
        k -= 1
    return hull[:k]


def _hull_vertices(P: np.ndarray) -> np.ndarray:
    if P.shape[0] <= P.shape[1] + 2:
        return P
    if P.shape[1] == 2:
        idx = _hull_2d(P)
        return P[idx] if idx.size >= 3 else P
    try:
        return P[ConvexHull(P).vertices]
    except QhullError:
        return P


@njit(cache=True)
def _mvee_2d(P, tol, max_iter):
    """Planar fast path of :func:`mvee_fit`; status 0 ok, 2 stalled, 3 affinely dependent."""
    n = P.shape[0]
    center = np.zeros(2)
    Q = np.zeros((2, 2))
    if n < 3:
        return center, Q, 3
    mx, my = 0.0, 0.0
    for i in range(n):
        mx += P[i, 0]
        my += P[i, 1]
    mx /= n
    my /= n
    a = b = c = 0.0
    for i in range(n):
        dx, dy = P[i, 0] - mx, P[i, 1] - my
        a += dx * dx
        b += dx * dy
        c += dy * dy
    # closed-form eigenpairs, as in _eigh2
    mean = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    hi = mean + rad
    if rad == 0.0:
        lo = mean - rad
        vx, vy = 0.0, 1.0
    else:
        if a >= c:
            vx, vy = hi - c, b
        else:
            vx, vy = b, hi - a
        nrm = math.hypot(vx, vy)
        vx, vy = vx / nrm, vy / nrm
        lo = (a * c - b * b) / hi if hi > 0.0 else mean - rad
    if lo <= 1e-18 * hi or lo <= 1e-24:
        return center, Q, 3
    # W = V diag(ev^-1/2) V^T with columns (-vy, vx) for lo and (vx, vy) for hi
    sl, sh = 1.0 / math.sqrt(lo), 1.0 / math.sqrt(hi)
    w11 = sl * vy * vy + sh * vx * vx
    w12 = -sl * vx * vy + sh * vx * vy
    w22 = sl * vx * vx + sh * vy * vy
    Pw = np.empty((n, 2))
    for i in range(n):
        dx, dy = P[i, 0] - mx, P[i, 1] - my
        Pw[i, 0] = dx * w11 + dy * w12
        Pw[i, 1] = dx * w12 + dy * w22
    if n <= 4:
        H = Pw
    else:
        idx = _hull_2d(Pw)
        H = Pw[idx] if idx.size >= 3 else Pw
    u, converged = _todd_yildirim_kernel(np.ascontiguousarray(H), tol, max_iter)
    if not converged:
        return center, Q, 2
    cx, cy = 0.0, 0.0
    sxx = sxy = syy = 0.0
    for i in range(H.shape[0]):
        cx += u[i] * H[i, 0]
        cy += u[i] * H[i, 1]
        sxx += u[i] * H[i, 0] * H[i, 0]
        sxy += u[i] * H[i, 0] * H[i, 1]
        syy += u[i] * H[i, 1] * H[i, 1]
    sxx -= cx * cx
    sxy -= cx * cy
    syy -= cy * cy
    det = sxx * syy - sxy * sxy
    qa, qb, qc = 0.5 * syy / det, -0.5 * sxy / det, 0.5 * sxx / det
    worst = 0.0
    for i in range(H.shape[0]):
        rx, ry = H[i, 0] - cx, H[i, 1] - cy
        worst = max(worst, qa * rx * rx + 2.0 * qb * rx * ry + qc * ry * ry)
    qa, qb, qc = qa / worst, qb / worst, qc / worst
    # back to world coordinates: Q_world = W Q W, center = mean + W^-1 c
    t11 = w11 * qa + w12 * qb
    t12 = w11 * qb + w12 * qc
    t21 = w12 * qa + w22 * qb
    t22 = w12 * qb + w22 * qc
    Q[0, 0] = t11 * w11 + t12 * w12
    Q[0, 1] = t11 * w12 + t12 * w22
    Q[1, 0] = Q[0, 1]
    Q[1, 1] = t21 * w12 + t22 * w22
    rl, rh = math.sqrt(lo), math.sqrt(hi)
    i11 = rl * vy * vy + rh * vx * vx
    i12 = -rl * vx * vy + rh * vx * vy
    i22 = rl * vx * vx + rh * vy * vy
    center[0] = mx + i11 * cx + i12 * cy
    center[1] = my + i12 * cx + i22 * cy
    return center, Q, 0


def mvee_fit(points, tol: float = 1e-7, max_iter: int = 10_000, jitter: float = 1e-6) -> Ellipsoid:
    """Minimum-volume enclosing ellipsoid of a point cloud.

    Only convex-hull vertices enter the iteration. The returned shape is
    rescaled so the farthest point lies exactly on the boundary, which makes
    containment hold to rounding while the volume stays within the
    ``(1 + tol)`` certificate of the first-order method.

    Affinely dependent clouds are regularized once by adding copies shifted
    ``+-jitter`` meters along each direction in which the cloud is flat.
    """
    P = check_point_cloud(points)
    if P.shape[1] == 2:
        center, Q, status = _mvee_2d(P, float(tol), int(max_iter))
        if status == 0:
            return Ellipsoid.trusted(center, Q)
    white = _whitening(P)
    if white is None:
        P = _jitter(P, jitter)
        white = _whitening(P)
        if white is None:
            raise DegenerateCloud("point cloud is affinely dependent even after jitter")
    d = P.shape[1]
    # the fit is affine-equivariant, so iterate on the whitened cloud for conditioning
    shift, W = white
    H = _hull_vertices((P - shift) @ W)
    u = _todd_yildirim(H, tol, max_iter)
    c = u @ H
    cov = (H.T * u) @ H - np.outer(c, c)
    Q = np.linalg.inv(cov) / d
    Q = 0.5 * (Q + Q.T)
    r = H - c
    Q /= float(np.max(np.sum((r @ Q) * r, axis=1)))
    Q = W @ Q @ W
    # W Q W with Q the inverse of a nonsingular weighted scatter matrix is symmetric PD
    return Ellipsoid.trusted(shift + np.linalg.solve(W, c), 0.5 * (Q + Q.T))


class EllipsoidFitter(BaseEstimator):
    """Estimator wrapper around :func:`mvee_fit`.

    ``fit(X)`` learns the enclosing ellipsoid of the rows of ``X``;
    ``score_samples`` returns the scaling value of each row and ``predict``
    flags rows inside the region.
    """

    def __init__(self, tol: float = 1e-7, max_iter: int = 10_000, jitter: float = 1e-6):
        self.tol = tol
        self.max_iter = max_iter
        self.jitter = jitter

    def fit(self, X, y=None):
        self.ellipsoid_ = mvee_fit(X, tol=self.tol, max_iter=self.max_iter, jitter=self.jitter)
        self.center_ = self.ellipsoid_.center
        self.shape_ = self.ellipsoid_.shape
        self.n_features_in_ = self.center_.size
        return self

    def score_samples(self, X):
        check_is_fitted(self, "ellipsoid_")
        return self.ellipsoid_.scaling(check_point_cloud(X, dim=self.n_features_in_))

    def predict(self, X):
        return self.score_samples(X) <= 1.0
