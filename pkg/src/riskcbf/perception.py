"""Random environments, a noisy planar range sensor and per-obstacle ellipse fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .collision import min_scaling
from .exceptions import DegenerateCloud, NoConvergence
from .geometry import Ellipsoid, RobotShape, RobotState, mvee_fit, robot_ellipse


@dataclass(frozen=True)
class SensorConfig:
    n_rays: int = 720
    max_range: float = 5.0
    eta: float = 2.0 / 3.0
    fov: float = 2.0 * math.pi
    noise: bool = True
    # a return whose noisy range exceeds max_range is lost, as on a real range finder
    drop_beyond_range: bool = False

    def __post_init__(self):
        if self.n_rays < 8:
            raise ValueError("n_rays must be at least 8")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not (0 < self.fov <= 2 * math.pi):
            raise ValueError("fov must lie in (0, 2 pi]")


@dataclass(frozen=True)
class EnvironmentConfig:
    """Parameters of the random obstacle field."""

    workspace: tuple = (0.0, 10.0, 0.0, 10.0)
    n_obstacles: tuple = (4, 8)
    semi_axis_range: tuple = (0.3, 1.0)
    start: tuple = (1.0, 1.0, math.pi / 4)
    goal: tuple = (9.0, 9.0)
    clearance: float = 1.2
    max_tries: int = 1000


@dataclass
class Environment:
    obstacles: list
    goal: np.ndarray
    start: RobotState
    workspace: tuple = (0.0, 10.0, 0.0, 10.0)


@dataclass
class Scan:
    """One sweep: per-ray angles, true and measured ranges and the obstacle hit (``-1`` for none)."""

    origin: np.ndarray
    angles: np.ndarray
    true_ranges: np.ndarray
    measured_ranges: np.ndarray
    hit: np.ndarray
    clusters: dict = field(default_factory=dict)
    true_clusters: dict = field(default_factory=dict)


def ray_ellipse_ranges(origin: np.ndarray, directions: np.ndarray, E: Ellipsoid) -> np.ndarray:
    """Distance along each unit direction to the first boundary crossing (``inf`` when missed)."""
    o = origin - E.center
    Qd = directions @ E.shape
    a = np.einsum("ij,ij->i", Qd, directions)
    b = Qd @ o
    c = o @ E.shape @ o - 1.0
    disc = b * b - a * c
    r = np.full(directions.shape[0], np.inf)
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    near = (-b - sq) / a
    far = (-b + sq) / a
    if c < 0.0:
        # the sensor sits inside the obstacle: every ray exits through the far root
        r[ok] = far[ok]
    else:
        hit = ok & (near >= 0.0)
        r[hit] = near[hit]
    return r


@njit(cache=True)
def _cast_rays(ox, oy, angles, centers, shapes, max_range):
    # nearest boundary crossing over all obstacles; hit = -1 when nothing lies within max_range
    n, k_obs = angles.size, centers.shape[0]
    true_r = np.full(n, np.inf)
    hit = np.full(n, -1, dtype=np.int64)
    dirs = np.empty((n, 2))
    px = np.empty(k_obs)
    py = np.empty(k_obs)
    cc = np.empty(k_obs)
    for i in range(k_obs):
        px[i], py[i] = ox - centers[i, 0], oy - centers[i, 1]
        cc[i] = shapes[i, 0, 0] * px[i] ** 2 + 2.0 * shapes[i, 0, 1] * px[i] * py[i] + shapes[i, 1, 1] * py[i] ** 2 - 1.0
    for k in range(n):
        dx, dy = math.cos(angles[k]), math.sin(angles[k])
        dirs[k, 0], dirs[k, 1] = dx, dy
        for i in range(k_obs):
            qa, qb, qc = shapes[i, 0, 0], shapes[i, 0, 1], shapes[i, 1, 1]
            a = qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy
            b = (qa * dx + qb * dy) * px[i] + (qb * dx + qc * dy) * py[i]
            disc = b * b - a * cc[i]
            if disc < 0.0:
                continue
            sq = math.sqrt(disc)
            if cc[i] < 0.0:
                # the sensor sits inside the obstacle: every ray exits through the far root
                r = (-b + sq) / a
            else:
                r = (-b - sq) / a
                if r < 0.0:
                    continue
            if r < true_r[k]:
                true_r[k] = r
                hit[k] = i
        if true_r[k] > max_range:
            true_r[k] = np.inf
            hit[k] = -1
    return true_r, hit, dirs


def lidar_scan(x, env: Environment, cfg: SensorConfig, rng: np.random.Generator) -> Scan:
    """Cast rays from the robot center; measured range = true range + Exponential(rate eta) noise.

    Points are grouped by the obstacle each ray actually hit.
    """
    x = RobotState(*map(float, x))
    origin = np.array([x.p_x, x.p_y])
    if cfg.fov >= 2 * math.pi:
        rel = np.linspace(-math.pi, math.pi, cfg.n_rays, endpoint=False)
    else:
        rel = np.linspace(-cfg.fov / 2, cfg.fov / 2, cfg.n_rays)
    angles = x.theta + rel
    if env.obstacles:
        centers = np.array([E.center for E in env.obstacles])
        shapes = np.array([E.shape for E in env.obstacles])
        true_r, hit, dirs = _cast_rays(x.p_x, x.p_y, angles, centers, shapes, float(cfg.max_range))
    else:
        true_r, hit = np.full(cfg.n_rays, np.inf), np.full(cfg.n_rays, -1)
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    valid = hit >= 0
    noise = rng.exponential(1.0 / cfg.eta, size=cfg.n_rays) if cfg.noise else np.zeros(cfg.n_rays)
    meas = np.where(valid, true_r + noise, np.inf)
    scan = Scan(origin, angles, true_r, meas, hit)
    kept = valid & (meas <= cfg.max_range) if cfg.drop_beyond_range else valid
    if not np.any(kept):
        return scan
    idx = np.flatnonzero(kept)
    idx = idx[np.argsort(hit[idx], kind="stable")]
    labels, starts = np.unique(hit[idx], return_index=True)
    for i, sel in zip(labels, np.split(idx, starts[1:])):
        scan.clusters[int(i)] = origin + meas[sel, None] * dirs[sel]
        scan.true_clusters[int(i)] = origin + true_r[sel, None] * dirs[sel]
    return scan


def fit_clusters(scan: Scan, min_points: int = 3, tol: float = 1e-7) -> dict:
    """MVEE fit for each cluster with at least ``min_points`` returns; unfittable clusters are dropped."""
    fits = {}
    for i, pts in scan.clusters.items():
        if pts.shape[0] < min_points:
            continue
        try:
            fits[i] = mvee_fit(pts, tol=tol)
        except (DegenerateCloud, NoConvergence):
            continue
    return fits


def _clear(E: Ellipsoid, pose, shape: RobotShape, margin: float) -> bool:
    return min_scaling(E, robot_ellipse(pose, shape))[0] >= margin


def random_ellipse(rng: np.random.Generator, center, semi_axis_range) -> Ellipsoid:
    ax = rng.uniform(*semi_axis_range, size=2)
    th = rng.uniform(0.0, math.pi)
    c, s = math.cos(th), math.sin(th)
    R = np.array([[c, -s], [s, c]])
    return Ellipsoid(center, R @ np.diag(1.0 / ax**2) @ R.T)


def generate_environment(rng: np.random.Generator, cfg: EnvironmentConfig, shape: RobotShape) -> Environment:
    """Uniformly placed random ellipses, rejection-sampled to keep start and goal poses clear."""
    x0, x1, y0, y1 = cfg.workspace
    start = RobotState(*cfg.start)
    goal = np.asarray(cfg.goal, dtype=float)
    goal_pose = RobotState(goal[0], goal[1], start.theta)
    n = int(rng.integers(cfg.n_obstacles[0], cfg.n_obstacles[1] + 1))
    obstacles: list[Ellipsoid] = []
    for _ in range(cfg.max_tries):
        if len(obstacles) == n:
            break
        E = random_ellipse(rng, [rng.uniform(x0, x1), rng.uniform(y0, y1)], cfg.semi_axis_range)
        if _clear(E, start, shape, cfg.clearance) and _clear(E, goal_pose, shape, cfg.clearance):
            obstacles.append(E)
    return Environment(obstacles, goal, start, cfg.workspace)


def random_free_pose(rng: np.random.Generator, env: Environment, shape: RobotShape, margin: float, max_tries: int = 1000):
    x0, x1, y0, y1 = env.workspace
    for _ in range(max_tries):
        pose = RobotState(rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-math.pi, math.pi))
        if all(_clear(E, pose, shape, margin) for E in env.obstacles):
            return pose
    raise RuntimeError("could not sample a collision-free pose")
