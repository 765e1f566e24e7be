"""
Rigid Coherent Point Drift.

The measurement points are the centroids of an isotropic Gaussian mixture
(plus one uniform outlier component) that is moved rigidly onto the
reference by expectation maximisation. Posteriors are kept as an N x M
matrix: one row per reference point, one column per measurement point.
"""

import itertools
import logging
import math
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.special import logsumexp

from .labels import PointCloud, RigidTransform


logger = logging.getLogger(__name__)

DIMENSIONS = 3
MIN_SIGMA2 = 10 * np.finfo(np.float64).eps

__all__ = [
    "CpdConfig",
    "DegenerateGeometryError",
    "Posterior",
    "RegistrationResult",
    "RigidTransform",
    "ScaleMode",
    "decompose_rotation_space",
    "expectation",
    "register",
    "rotation_angle",
]


class DegenerateGeometryError(ValueError):
    """Raised when a point cloud has no spatial extent."""


class ScaleMode(str, Enum):
    ESTIMATE = "estimate"
    FIXED = "fixed"


class CpdConfig(NamedTuple):
    """
    EM settings of the rigid registration.

    Parameters
    ----------
    outlier_weight : float
        Weight w of the uniform outlier component, in [0, 1).
    max_iterations : int
        Upper bound on EM iterations.
    tolerance : float
        Stop once the objective changes by less than this share of its
        previous value.
    scale_mode : ScaleMode
        Estimate the scale (clamped to scale_bounds) or keep it at 1.
    """

    outlier_weight: float = 0.2
    max_iterations: int = 150
    tolerance: float = 1e-6
    scale_mode: ScaleMode = ScaleMode.ESTIMATE
    scale_bounds: tuple[float, float] = (0.8, 1.25)


class Posterior(NamedTuple):
    matrix: np.ndarray
    outlier_mass: np.ndarray
    objective: float


class RegistrationResult(NamedTuple):
    """
    Outcome of one EM run.

    transform maps measurement coordinates into reference coordinates.
    posterior and outlier_mass belong to that final transform. sigma2 is the
    mixture variance in nm^2; objective_history holds the negative
    log-likelihood after every E-step (in normalised units).
    """

    transform: RigidTransform
    posterior: np.ndarray
    outlier_mass: np.ndarray
    iterations_used: int
    final_objective: float
    sigma2: float
    objective_history: tuple[float, ...]


def check_config(config: CpdConfig):
    if not 0 <= config.outlier_weight < 1:
        raise ValueError(
            f"outlier_weight must lie in [0, 1), got {config.outlier_weight}"
        )
    if config.max_iterations < 1:
        raise ValueError(
            f"max_iterations must be at least 1, got {config.max_iterations}"
        )
    if config.tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {config.tolerance}")
    low, high = config.scale_bounds
    if not 0 < low <= 1 <= high:
        raise ValueError(f"Invalid scale bounds {config.scale_bounds}")


def is_rotation(matrix: np.ndarray, tolerance: float = 1e-9) -> bool:
    return RigidTransform(1.0, np.asarray(matrix), np.zeros(3)).is_valid(
        tolerance
    )


def squared_distances(
    reference: np.ndarray, moved: np.ndarray
) -> np.ndarray:
    difference = reference[:, None, :] - moved[None, :, :]
    return np.einsum("ijk,ijk->ij", difference, difference)


def initial_sigma2(reference: np.ndarray, moved: np.ndarray) -> float:
    n, d = reference.shape
    m = len(moved)
    return float(squared_distances(reference, moved).sum() / (d * n * m))


def _expectation(
    distances: np.ndarray, sigma2: float, outlier_weight: float
) -> Posterior:
    n, m = distances.shape
    d = DIMENSIONS

    log_kernel = -distances / (2 * sigma2)
    if outlier_weight > 0:
        log_c = (
            d / 2 * math.log(2 * math.pi * sigma2)
            + math.log(outlier_weight / (1 - outlier_weight))
            + math.log(m / n)
        )
    else:
        log_c = -np.inf

    log_c_column = np.full((n, 1), log_c)
    log_den = logsumexp(np.hstack([log_kernel, log_c_column]), axis=1)

    matrix = np.exp(log_kernel - log_den[:, None])
    outlier_mass = np.exp(log_c - log_den)
    objective = (
        -log_den.sum()
        + n * d / 2 * math.log(2 * math.pi * sigma2)
        + n * math.log(m)
        - n * math.log(1 - outlier_weight)
    )
    return Posterior(matrix, outlier_mass, float(objective))


def expectation(
    reference: PointCloud,
    measurement: PointCloud,
    transform: RigidTransform,
    sigma2: float,
    outlier_weight: float = 0.2,
) -> Posterior:
    """
    E-step at a given transform and variance (nm^2).

    Every row of the returned matrix plus its outlier mass sums to one.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    if not 0 <= outlier_weight < 1:
        raise ValueError(
            f"outlier_weight must lie in [0, 1), got {outlier_weight}"
        )
    moved = transform.apply(measurement.points)
    distances = squared_distances(reference.points, moved)
    return _expectation(distances, sigma2, outlier_weight)


def _maximization(
    reference: np.ndarray,
    measurement: np.ndarray,
    matrix: np.ndarray,
    config: CpdConfig,
) -> Optional[tuple[RigidTransform, float]]:
    """Weighted rigid Procrustes update, None when no mass is left."""
    reference_weights = matrix.sum(axis=1)
    measurement_weights = matrix.sum(axis=0)
    total = reference_weights.sum()
    if total < np.finfo(np.float64).eps:
        return None

    mu_x = reference_weights @ reference / total
    mu_y = measurement_weights @ measurement / total
    x_hat = reference - mu_x
    y_hat = measurement - mu_y

    a = x_hat.T @ matrix @ y_hat
    u, _, vt = np.linalg.svd(a)
    correction = np.eye(DIMENSIONS)
    correction[-1, -1] = np.linalg.det(u @ vt)
    rotation = u @ correction @ vt

    if config.scale_mode is ScaleMode.FIXED:
        scale = 1.0
    else:
        y_p_y = measurement_weights @ np.einsum("ij,ij->i", y_hat, y_hat)
        scale = float(np.trace(a.T @ rotation) / y_p_y)
        scale = float(np.clip(scale, *config.scale_bounds))

    translation = mu_x - scale * rotation @ mu_y
    transform = RigidTransform(scale, rotation, translation)

    moved = transform.apply(measurement)
    residual = (matrix * squared_distances(reference, moved)).sum()
    sigma2 = max(float(residual / (total * DIMENSIONS)), MIN_SIGMA2)
    return transform, sigma2


def normalisation(points: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    spread = math.sqrt(((points - centroid) ** 2).sum(axis=1).mean())
    return centroid, spread


def check_extent(cloud: PointCloud, name: str):
    if not np.any(np.ptp(cloud.points, axis=0) > 0):
        raise DegenerateGeometryError(f"All {name} points coincide")


def register(
    reference: PointCloud,
    measurement: PointCloud,
    initial_rotation: Optional[np.ndarray] = None,
    config: CpdConfig = CpdConfig(),
) -> RegistrationResult:
    """
    Rigidly register the measurement onto the reference.

    Both clouds are centred on their own centroids and scaled by the
    reference spread before EM; the initial rotation acts about the
    centroids.

    Parameters
    ----------
    initial_rotation : np.ndarray, optional
        3x3 rotation the EM starts from, identity by default.

    Raises
    ------
    DegenerateGeometryError
        If all points of either cloud coincide.
    """
    check_config(config)
    config = config._replace(scale_mode=ScaleMode(config.scale_mode))
    if initial_rotation is None:
        initial_rotation = np.eye(DIMENSIONS)
    initial_rotation = np.asarray(initial_rotation, dtype=np.float64)
    if not is_rotation(initial_rotation):
        raise ValueError("initial_rotation is not a proper rotation matrix")
    check_extent(reference, "reference")
    check_extent(measurement, "measurement")

    mu_x, spread = normalisation(reference.points)
    mu_y = measurement.points.mean(axis=0)
    x = (reference.points - mu_x) / spread
    y = (measurement.points - mu_y) / spread

    transform = RigidTransform(1.0, initial_rotation, np.zeros(DIMENSIONS))
    moved = transform.apply(y)
    sigma2 = max(initial_sigma2(x, moved), MIN_SIGMA2)
    posterior = _expectation(
        squared_distances(x, moved), sigma2, config.outlier_weight
    )
    history = [posterior.objective]
    iterations = 0

    while iterations < config.max_iterations:
        update = _maximization(x, y, posterior.matrix, config)
        if update is None:
            logger.debug("No mixture mass left, stopping EM")
            break
        transform, sigma2 = update
        previous = posterior.objective
        posterior = _expectation(
            squared_distances(x, transform.apply(y)),
            sigma2,
            config.outlier_weight,
        )
        history.append(posterior.objective)
        iterations += 1

        change = abs(previous - posterior.objective)
        if change <= config.tolerance * max(abs(previous), 1.0):
            break

    logger.debug(
        "EM finished after %d iterations, objective %.6g",
        iterations,
        posterior.objective,
    )
    translation = (
        mu_x + spread * transform.translation
        - transform.scale * transform.rotation @ mu_y
    )
    return RegistrationResult(
        transform=RigidTransform(
            transform.scale, transform.rotation, translation
        ),
        posterior=posterior.matrix,
        outlier_mass=posterior.outlier_mass,
        iterations_used=iterations,
        final_objective=posterior.objective,
        sigma2=sigma2 * spread**2,
        objective_history=tuple(history),
    )


def decompose_rotation_space(divisions_per_axis: int) -> list[np.ndarray]:
    """
    Centre rotations of the divisions^3 equal subcubes of the angle-axis
    cube [-pi, pi]^3, in row-major (x, y, z) order.
    """
    if divisions_per_axis < 1:
        raise ValueError(
            f"divisions_per_axis must be at least 1, got {divisions_per_axis}"
        )
    d = divisions_per_axis
    centres = [(2 * k + 1 - d) * math.pi / d for k in range(d)]
    vectors = np.array(list(itertools.product(centres, repeat=DIMENSIONS)))
    return list(Rotation.from_rotvec(vectors).as_matrix())


def rotation_angle(first: np.ndarray, second: np.ndarray) -> float:
    """Geodesic distance in radians between two rotation matrices."""
    relative = np.asarray(first).T @ np.asarray(second)
    return float(Rotation.from_matrix(relative).magnitude())
