"""Flat-key run configuration.

Every tunable lives at the top level of one YAML mapping. Unknown keys are
rejected and every value is type- and range-checked on load, so a
configuration either parses completely or raises :class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .exceptions import ConfigError
from .geometry import RobotShape
from .perception import EnvironmentConfig, SensorConfig
from .simulation import METHODS, TrialParams


@dataclass(frozen=True)
class RunConfig:
    # calibration
    alpha: float = 0.05
    n_cal: int = 5000
    n_test: int = 0
    calibration_margin: float = 1.0
    # sensor
    eta: float = 2.0 / 3.0
    n_rays: int = 720
    max_range: float = 5.0
    fov: float = 2.0 * math.pi
    noise: bool = True
    drop_beyond_range: bool = False
    min_points: int = 3
    # controller
    kappa: float = 3.3
    kappa_v: float = 1.1
    gamma0: float = 1.2
    V0: float = 0.01
    M_diag: tuple = (1.0, 1.0)
    input_box: tuple = (-1.0, 1.0, -0.5, 0.5)
    k_omega: float = 2.0
    k_p: float = 1.0
    second_order: str = "fd"
    # simulation
    dt: float = 0.02
    horizon: float = 60.0
    success_radius: float = 0.1
    robot_a: float = 0.4
    robot_b: float = 0.25
    # environment generator
    workspace: tuple = (0.0, 10.0, 0.0, 10.0)
    n_obstacles: tuple = (4, 8)
    semi_axis_range: tuple = (0.3, 1.0)
    start: tuple = (1.0, 1.0, math.pi / 4)
    goal: tuple = (9.0, 9.0)
    clearance: float = 1.2
    # runs
    seed: int = 0
    delta: Optional[float] = None
    trials: int = 100
    methods: tuple = METHODS
    workers: int = 0  # 0 = one per logical core
    out_dir: str = "results"
    # gradient checks
    gradcheck_instances: int = 200
    gradcheck_step: float = 1e-5
    gradcheck_collision_tol: float = 1e-4
    gradcheck_volume_tol: float = 2e-3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(f.default, tuple) and isinstance(v, list):
                object.__setattr__(self, f.name, tuple(v))
        _validate(self)

    # conversions -----------------------------------------------------------
    def sensor(self) -> SensorConfig:
        return SensorConfig(n_rays=self.n_rays, max_range=self.max_range, eta=self.eta, fov=self.fov,
                            noise=self.noise, drop_beyond_range=self.drop_beyond_range)

    def environment(self) -> EnvironmentConfig:
        return EnvironmentConfig(workspace=self.workspace, n_obstacles=self.n_obstacles,
                                 semi_axis_range=self.semi_axis_range, start=self.start, goal=self.goal,
                                 clearance=self.clearance)

    def shape(self) -> RobotShape:
        return RobotShape(self.robot_a, self.robot_b)

    def trial_params(self) -> TrialParams:
        return TrialParams(kappa=self.kappa, kappa_v=self.kappa_v, gamma0=self.gamma0, V0=self.V0,
                           M_diag=self.M_diag, dt=self.dt, horizon=self.horizon,
                           success_radius=self.success_radius, input_box=self.input_box,
                           k_omega=self.k_omega, k_p=self.k_p, min_points=self.min_points,
                           second_order=self.second_order, shape=self.shape(), sensor=self.sensor())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # serialization -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of flat keys")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _validate(c: RunConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    for f in fields(c):
        v = getattr(c, f.name)
        if f.name == "delta":
            need(v is None or (_is_num(v) and v >= 1.0), "delta must be null or a number >= 1")
        elif isinstance(f.default, bool):
            need(isinstance(v, bool), f"{f.name} must be a boolean")
        elif isinstance(f.default, int):
            need(isinstance(v, int) and not isinstance(v, bool), f"{f.name} must be an integer")
        elif isinstance(f.default, float):
            need(_is_num(v), f"{f.name} must be a finite number")
        elif isinstance(f.default, str):
            need(isinstance(v, str), f"{f.name} must be a string")
        elif isinstance(f.default, tuple) and f.name != "methods":
            need(isinstance(v, tuple) and len(v) == len(f.default) and all(_is_num(e) for e in v),
                 f"{f.name} must be a list of {len(f.default)} numbers")

    need(0.0 < c.alpha < 1.0, "alpha must lie in (0, 1)")
    need(c.n_cal >= 1, "n_cal must be positive")
    need(c.n_test >= 0, "n_test must be nonnegative")
    need(c.eta > 0, "eta must be positive")
    need(c.n_rays >= 8, "n_rays must be at least 8")
    need(c.max_range > 0, "max_range must be positive")
    need(0.0 < c.fov <= 2 * math.pi, "fov must lie in (0, 2 pi]")
    need(c.min_points >= 1, "min_points must be positive")
    for name in ("kappa", "kappa_v", "V0", "dt", "horizon", "success_radius", "k_omega", "k_p",
                 "robot_a", "robot_b", "clearance", "calibration_margin", "gradcheck_step",
                 "gradcheck_collision_tol", "gradcheck_volume_tol"):
        need(getattr(c, name) > 0, f"{name} must be positive")
    need(c.gamma0 > 1.0, "gamma0 must exceed 1")
    need(all(m > 0 for m in c.M_diag), "M_diag entries must be positive")
    v_min, v_max, w_min, w_max = c.input_box
    need(v_min < v_max and w_min < w_max, "input_box must be (v_min, v_max, w_min, w_max) with min < max")
    x0, x1, y0, y1 = c.workspace
    need(x0 < x1 and y0 < y1, "workspace must be (x_min, x_max, y_min, y_max) with min < max")
    lo, hi = c.n_obstacles
    need(float(lo).is_integer() and float(hi).is_integer() and 0 <= lo <= hi, "n_obstacles must be integers 0 <= lo <= hi")
    need(0 < c.semi_axis_range[0] <= c.semi_axis_range[1], "semi_axis_range must satisfy 0 < lo <= hi")
    need(c.second_order in ("fd", "kkt"), "second_order must be 'fd' or 'kkt'")
    need(c.trials >= 1, "trials must be positive")
    need(c.workers >= 0, "workers must be nonnegative (0 = logical cores)")
    need(c.gradcheck_instances >= 1, "gradcheck_instances must be positive")
    need(isinstance(c.methods, tuple) and len(c.methods) >= 1 and all(m in METHODS for m in c.methods),
         f"methods must be a nonempty list drawn from {list(METHODS)}")
    need(c.seed >= 0, "seed must be nonnegative")


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    return RunConfig.from_dict(data)


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(text)
