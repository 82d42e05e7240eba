"""Unicycle kinematics: drift-free, control-affine in ``u = (v, omega)``."""
from __future__ import annotations

import math

import numpy as np

from .geometry import RobotState


def drift(x) -> np.ndarray:
    return np.zeros(3)


def input_matrix(x) -> np.ndarray:
    """Columns ``(cos theta, sin theta, 0)`` and ``(0, 0, 1)``."""
    th = float(x[2])
    return np.array([[math.cos(th), 0.0], [math.sin(th), 0.0], [0.0, 1.0]])


def _rhs(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.array([u[0] * math.cos(x[2]), u[0] * math.sin(x[2]), u[1]])


def unicycle_step(x, u, dt: float) -> RobotState:
    """One explicit RK4 step of the unicycle under a zero-order-hold input."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = _rhs(x, u)
    k2 = _rhs(x + 0.5 * dt * k1, u)
    k3 = _rhs(x + 0.5 * dt * k2, u)
    k4 = _rhs(x + dt * k3, u)
    return RobotState(*(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)))


def wrap_angle(a: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w
