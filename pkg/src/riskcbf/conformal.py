"""Split conformal calibration of fitted obstacle ellipses.

The nonconformity score of a record is the smallest factor ``gamma' >= 1``
such that the fitted ellipse scaled to the level set ``F <= gamma'`` covers
every true surface point. The calibrated inflation ``delta`` is the
``ceil((1 - alpha)(n + 1))``-th smallest score.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_point_cloud, check_probability
from .exceptions import InsufficientCalibration, Unachievable
from .geometry import Ellipsoid
from .numerics import reg_inc_beta_inv


@dataclass(frozen=True)
class CalibrationRecord:
    true_points: np.ndarray
    fitted: Ellipsoid

    def __post_init__(self):
        object.__setattr__(self, "true_points", check_point_cloud(self.true_points, dim=self.fitted.dim))


@dataclass(frozen=True)
class CalibrationResult:
    delta: float
    scores: np.ndarray
    alpha: float
    n_cal: int
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        qs = [0.5, 0.9, 0.95, 0.99]
        return {
            "alpha": self.alpha,
            "n_cal": self.n_cal,
            "delta": self.delta,
            "scores_summary": {
                "min": float(self.scores[0]),
                "max": float(self.scores[-1]),
                "quantiles": {str(q): float(np.quantile(self.scores, q)) for q in qs},
            },
            "seed": self.seed,
            **self.extra,
        }


def nonconformity_score(rec: CalibrationRecord) -> float:
    return max(1.0, float(np.max(rec.fitted.scaling(rec.true_points))))


def quantile_rank(n: int, alpha: float) -> int:
    """1-based rank ``ceil((1 - alpha)(n + 1))`` of the calibrated score; raises if it exceeds ``n``."""
    alpha = check_probability(alpha, "alpha")
    if n < 1:
        raise InsufficientCalibration("no calibration scores")
    # small epsilon guards against (1 - alpha)(n + 1) landing a hair above an integer
    k = math.ceil((1.0 - alpha) * (n + 1) - 1e-9)
    if k > n:
        raise InsufficientCalibration(
            f"need ceil((1 - alpha)(n + 1)) <= n; got index {k} with n={n} at alpha={alpha}"
        )
    return max(k, 1)


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    scores = np.sort(np.asarray(scores, dtype=float), kind="stable")
    return float(scores[quantile_rank(scores.size, alpha) - 1])


def inflate(E: Ellipsoid, delta: float) -> Ellipsoid:
    """Same center, shape divided by ``delta`` (semi-axes grow by ``sqrt(delta)``)."""
    if not delta >= 1.0:
        raise ValueError(f"inflation factor must be >= 1, got {delta}")
    return Ellipsoid.trusted(E.center, E.shape / delta)


def beta_coverage_quantile(n_cal: int, v: int, delta_conf: float) -> float:
    """``delta_conf``-quantile of Beta(n_cal - v + 1, v); ``v = 0`` means certain coverage."""
    if v <= 0:
        return 1.0
    return reg_inc_beta_inv(n_cal - v + 1, v, delta_conf)


def dataset_conditional_alpha(n_cal: int, target_coverage: float, delta_conf: float) -> tuple[float, float]:
    """Largest ``alpha_hat = v / (n_cal + 1)`` whose training-conditional coverage certificate
    reaches ``target_coverage`` with probability ``1 - delta_conf``.

    Returns ``(alpha_hat, certified_coverage)``.
    """
    if n_cal < 10:
        raise ValueError("dataset-conditional correction needs n_cal >= 10")
    check_probability(target_coverage, "target_coverage")
    check_probability(delta_conf, "delta_conf")
    # the certificate decreases in v, so bisect for the last certifying v >= 1
    if beta_coverage_quantile(n_cal, 1, delta_conf) < target_coverage:
        raise Unachievable(f"n_cal={n_cal} cannot certify coverage {target_coverage} at delta={delta_conf}")
    lo, hi = 1, n_cal
    if beta_coverage_quantile(n_cal, hi, delta_conf) >= target_coverage:
        lo = hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if beta_coverage_quantile(n_cal, mid, delta_conf) >= target_coverage:
            lo = mid
        else:
            hi = mid
    return lo / (n_cal + 1), beta_coverage_quantile(n_cal, lo, delta_conf)


class ConformalInflator(BaseEstimator, TransformerMixin):
    """Split-conformal calibration as a transformer.

    ``fit(records)`` computes the scores and the inflation ``delta_``;
    ``transform(ellipsoids)`` inflates fitted obstacle ellipses by ``delta_``.
    """

    def __init__(self, alpha: float = 0.05):
        self.alpha = alpha

    def fit(self, X: Sequence[CalibrationRecord], y=None):
        scores = np.sort([nonconformity_score(r) for r in X], kind="stable")
        self.delta_ = conformal_quantile(scores, self.alpha)
        self.scores_ = scores
        self.n_cal_ = len(scores)
        return self

    def transform(self, X: Sequence[Ellipsoid]) -> list[Ellipsoid]:
        check_is_fitted(self, "delta_")
        return [inflate(E, self.delta_) for E in X]

    def coverage(self, records: Sequence[CalibrationRecord]) -> float:
        """Fraction of records whose true points all lie in the inflated fit."""
        check_is_fitted(self, "delta_")
        hits = [nonconformity_score(r) <= self.delta_ for r in records]
        return float(np.mean(hits))

    def result(self, seed: int | None = None) -> CalibrationResult:
        check_is_fitted(self, "delta_")
        return CalibrationResult(self.delta_, self.scores_, self.alpha, self.n_cal_, seed)


def sample_record(rng: np.random.Generator, sensor, env_config, shape, min_points: int = 3,
                  margin: float = 1.0, max_retries: int = 10, max_empty: int = 1000) -> CalibrationRecord:
    """One record: random environment and free pose, a noisy scan, and the fit of one visible obstacle.

    The true cloud is the noiseless return of the same rays. Draws where no
    obstacle returns ``min_points`` rays are redrawn (up to ``max_empty``);
    fitting failures are redrawn up to ``max_retries`` times.
    """
    from .exceptions import DegenerateCloud, NoConvergence
    from .geometry import mvee_fit
    from .perception import generate_environment, lidar_scan, random_free_pose

    failures = 0
    for _ in range(max_empty):
        env = generate_environment(rng, env_config, shape)
        pose = random_free_pose(rng, env, shape, margin)
        scan = lidar_scan(pose, env, sensor, rng)
        keys = sorted(i for i, pts in scan.clusters.items() if len(pts) >= min_points)
        if not keys:
            continue
        i = keys[int(rng.integers(len(keys)))]
        try:
            return CalibrationRecord(scan.true_clusters[i], mvee_fit(scan.clusters[i]))
        except (DegenerateCloud, NoConvergence):
            failures += 1
            if failures > max_retries:
                raise
    raise RuntimeError(f"no obstacle visible in {max_empty} draws")


def record_stream(seed: int, start: int, count: int, sensor, env_config, shape, min_points: int = 3,
                  margin: float = 1.0) -> list[CalibrationRecord]:
    """Records ``start .. start + count - 1``; record ``k`` always uses the RNG keyed by ``(seed, k)``."""
    return [
        sample_record(np.random.default_rng([seed, k]), sensor, env_config, shape, min_points, margin)
        for k in range(start, start + count)
    ]


def build_calibration_set(seed: int, sensor, n_cal: int, alpha: float = 0.05, env_config=None,
                          shape=None, min_points: int = 3, margin: float = 1.0):
    """Generate ``n_cal`` records and calibrate the inflation at miscoverage ``alpha``.

    Returns ``(records, CalibrationResult)``.
    """
    from .geometry import RobotShape
    from .perception import EnvironmentConfig

    quantile_rank(n_cal, alpha)  # fail before generating anything
    env_config = env_config or EnvironmentConfig()
    shape = shape or RobotShape()
    records = record_stream(seed, 0, n_cal, sensor, env_config, shape, min_points, margin)
    inflator = ConformalInflator(alpha=alpha).fit(records)
    return records, inflator.result(seed)
