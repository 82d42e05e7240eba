"""Conformally calibrated ellipsoidal obstacle barriers with a feasibility-aware safety QP."""
from .collision import cbf_row, min_scaling, min_scaling_grad
from .config import RunConfig, load_config, parse_config, serialize_config
from .conformal import (
    CalibrationRecord,
    CalibrationResult,
    ConformalInflator,
    build_calibration_set,
    conformal_quantile,
    dataset_conditional_alpha,
    inflate,
    nonconformity_score,
)
from .exceptions import (
    ConfigError,
    CycleDetected,
    DegenerateCloud,
    DomainError,
    EmptyInterior,
    Infeasible,
    InsufficientCalibration,
    NoBracket,
    NoConvergence,
    NotPositiveDefinite,
    RiskCbfError,
    SolverFailure,
    Unachievable,
)
from .feasibility import assemble_polytope, max_inscribed_ellipsoid, volume_cbf, volume_of
from .geometry import Ellipsoid, EllipsoidFitter, RobotShape, RobotState, mvee_fit, robot_ellipse
from .perception import EnvironmentConfig, SensorConfig, generate_environment, lidar_scan
from .qp import Status, active_set_qp, solve_plain_qp, solve_safety_qp
from .simulation import METHODS, SafetyFilter, TrialParams, run_benchmark, run_trial, simulate

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
