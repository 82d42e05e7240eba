"""Small dense kernels: SPD factorization, monotone root finding, incomplete beta."""
from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .exceptions import DomainError, NoBracket, NoConvergence, NotPositiveDefinite

PD_PIVOT_RTOL = 1e-12
SYM_ATOL = 1e-12


def as_sym(A) -> np.ndarray:
    """Return ``A`` as a float array, checking squareness and symmetry."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.size and np.max(np.abs(A - A.T)) > SYM_ATOL * max(1.0, np.max(np.abs(A))):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def cholesky(A) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == A``.

    Raises NotPositiveDefinite when a pivot falls below ``1e-12 * max(diag(A))``.
    """
    A = as_sym(A)
    scale = float(np.max(np.diag(A))) if A.size else 0.0
    if scale <= 0.0:
        raise NotPositiveDefinite("non-positive diagonal")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    if np.min(np.diag(L)) ** 2 <= PD_PIVOT_RTOL * scale:
        raise NotPositiveDefinite("pivot below relative threshold")
    return L


def solve_spd(A, b) -> np.ndarray:
    L = cholesky(A)
    b = np.asarray(b, dtype=float)
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


def eig_sym(A) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors (columns)."""
    return np.linalg.eigh(as_sym(A))


def is_pd(A) -> bool:
    try:
        cholesky(A)
    except (NotPositiveDefinite, ValueError):
        return False
    return True


def root_find_monotone(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-12,
    fprime: Optional[Callable[[float], float]] = None,
    max_iter: int = 200,
) -> float:
    """Root of a continuous monotone ``f`` on ``[lo, hi]``.

    Newton steps (when ``fprime`` is given) or secant steps are taken from the
    current best point and replaced by bisection whenever they leave the
    bracket. Returns ``x`` with ``|f(x)| <= tol``.
    """
    if not lo < hi:
        raise NoBracket(f"empty interval [{lo}, {hi}]")
    flo, fhi = f(lo), f(hi)
    if abs(flo) <= tol:
        return lo
    if abs(fhi) <= tol:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise NoBracket(f"f({lo})={flo:g} and f({hi})={fhi:g} share a sign")
    a, b, fa, fb = lo, hi, flo, fhi
    x = a if abs(fa) < abs(fb) else b
    fx = fa if x == a else fb
    for _ in range(max_iter):
        step = None
        if fprime is not None:
            d = fprime(x)
            if d != 0.0 and math.isfinite(d):
                step = x - fx / d
        elif fb != fa:
            step = b - fb * (b - a) / (fb - fa)
        if step is None or not (min(a, b) < step < max(a, b)):
            step = 0.5 * (a + b)
        x = step
        fx = f(x)
        if abs(fx) <= tol:
            return x
        if np.sign(fx) == np.sign(fa):
            a, fa = x, fx
        else:
            b, fb = x, fx
        if abs(b - a) <= 4.0 * np.finfo(float).eps * max(abs(a), abs(b), 1e-300):
            break
    raise NoConvergence(f"no root with |f| <= {tol:g}; last |f(x)|={abs(fx):g}")


def _betacf(a: float, b: float, x: float, max_iter: int = 20000, eps: float = 1e-16) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise NoConvergence(f"incomplete beta continued fraction stalled (a={a}, b={b}, x={x})")


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if not (a > 0 and b > 0) or not (0.0 <= x <= 1.0):
        raise DomainError(f"reg_inc_beta undefined for a={a}, b={b}, x={x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    # the continued fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def beta_pdf(a: float, b: float, x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - _log_beta(a, b))


def reg_inc_beta_inv(a: float, b: float, y: float, tol: float = 1e-12) -> float:
    """Inverse of ``x -> I_x(a, b)``, i.e. the ``y``-quantile of Beta(a, b)."""
    if not (a > 0 and b > 0) or not (0.0 <= y <= 1.0):
        raise DomainError(f"reg_inc_beta_inv undefined for a={a}, b={b}, y={y}")
    if y == 0.0 or y == 1.0:
        return y
    return root_find_monotone(
        lambda x: reg_inc_beta(a, b, x) - y,
        0.0,
        1.0,
        tol=tol,
        fprime=lambda x: beta_pdf(a, b, x),
    )
