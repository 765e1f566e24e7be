"""
Label domain types and the synthetic label generator.

A label is a box of gold nanoparticles (beads, or rods digitised as their two
endpoints). Its digital form is a point cloud in integer nanometres with a
per-point, per-axis error radius. The generator produces references,
transformed measurements with lost points, artifacts and noise, and
forgeries (measurements with extra placement inaccuracy).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial.transform import Rotation


logger = logging.getLogger(__name__)

MIN_POINTS = 3
MIN_REFERENCE_POINTS = 6
MAX_REFERENCE_POINTS = 1000
MIN_RADIUS = 1
MAX_RADIUS = 99
MAX_CONTAMINATION = 0.2


class LabelKind(str, Enum):
    BEADS = "beads"
    RODS = "rods"


class Scenario(str, Enum):
    """Measurement presets of the synthetic evaluation."""

    LAB = "lab"
    ART_LOST = "art-lost"
    NOISY = "noisy"
    WRONG_LABEL = "wrong-label"
    FORGERY = "forgery"


class Point3(NamedTuple):
    x: int
    y: int
    z: int


class ErrorRadii(NamedTuple):
    sx: int
    sy: int
    sz: int


class RadiiDistribution(NamedTuple):
    mean: tuple[float, float, float]
    std: tuple[float, float, float]


RADII_DISTRIBUTIONS = {
    LabelKind.BEADS: RadiiDistribution((6.0, 5.0, 5.0), (10.0, 8.0, 8.0)),
    LabelKind.RODS: RadiiDistribution((22.0, 19.0, 43.0), (11.0, 10.0, 21.0)),
}


class LabelConfig(NamedTuple):
    """
    Physical constants of the synthetic label model (all in nanometres).

    Parameters
    ----------
    box : tuple
        Label extent along x, y, z. Reference points lie in [0, box).
    rod_length : tuple
        Uniform range of the distance between the two endpoints of a rod.
    max_translation : float
        Measurement offsets are drawn uniformly from +-max_translation per
        axis.
    """

    box: tuple[int, int, int] = (1_000_000, 1_000_000, 100_000)
    rod_length: tuple[float, float] = (40.0, 80.0)
    max_translation: float = 100_000.0


DEFAULT_LABEL_CONFIG = LabelConfig()


class RigidTransform(NamedTuple):
    """Similarity transform p -> scale * rotation @ p + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rotation = self.rotation.T
        translation = -rotation @ self.translation / self.scale
        return RigidTransform(1.0 / self.scale, rotation, translation)

    def is_valid(self, tolerance: float = 1e-9) -> bool:
        """Orthonormal rotation with det +1 and a positive scale."""
        rotation = np.asarray(self.rotation, dtype=np.float64)
        if rotation.shape != (3, 3) or self.scale <= 0:
            return False
        orthonormal = np.allclose(
            rotation.T @ rotation, np.eye(3), rtol=0, atol=tolerance
        )
        return orthonormal and abs(np.linalg.det(rotation) - 1) <= tolerance


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    Ordered 3D points (nm) of a label with one error radius per point and
    axis. Instances are immutable; the arrays are read-only.
    """

    kind: LabelKind
    points: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        kind = LabelKind(self.kind)
        points = np.array(self.points, dtype=np.float64)
        radii = np.array(self.radii, dtype=np.int64)

        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(
                f"Points must have shape (n, 3), got {points.shape}"
            )
        if radii.shape != points.shape:
            raise ValueError(
                f"Radii shape {radii.shape} does not match points "
                f"shape {points.shape}"
            )
        if len(points) < MIN_POINTS:
            raise ValueError(
                f"A point cloud needs at least {MIN_POINTS} points, "
                f"got {len(points)}"
            )
        if not np.all(np.isfinite(points)):
            raise ValueError("Point coordinates must be finite")
        if radii.min() < MIN_RADIUS or radii.max() > MAX_RADIUS:
            raise ValueError(
                f"Error radii must lie in [{MIN_RADIUS}, {MAX_RADIUS}] nm"
            )

        points.setflags(write=False)
        radii.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "radii", radii)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.radii, other.radii)
        )

    __hash__ = None

    def point(self, index: int) -> Point3:
        return Point3(*(int(value) for value in np.rint(self.points[index])))

    def radius(self, index: int) -> ErrorRadii:
        return ErrorRadii(*(int(value) for value in self.radii[index]))

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(self.kind, points, self.radii)


class MeasurementSpec(NamedTuple):
    """
    How a synthetic measurement deviates from its reference.

    Parameters
    ----------
    rotation_deg_max : float
        Euler angles are drawn uniformly from +-rotation_deg_max per axis.
    lost_fraction : float
        Share of reference points missing in the measurement (p_Ver).
    artifact_fraction : float
        Share of extra points without a reference partner (p_Art).
    noise_enabled : bool
        Perturb every point with its own error radii as standard deviation.
    forgery_grade : float
        Extra per-axis placement inaccuracy (nm) of a counterfeit; 0 = none.
    """

    rotation_deg_max: float = 20.0
    lost_fraction: float = 0.0
    artifact_fraction: float = 0.0
    noise_enabled: bool = False
    forgery_grade: float = 0.0
    seed: int = 0


def round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


def draw_radii(
    rng: np.random.Generator, kind: LabelKind, count: int
) -> np.ndarray:
    """Per-axis Gaussian error radii, rounded and clamped to [1, 99]."""
    distribution = RADII_DISTRIBUTIONS[LabelKind(kind)]
    radii = rng.normal(distribution.mean, distribution.std, size=(count, 3))
    return np.clip(np.rint(radii), MIN_RADIUS, MAX_RADIUS).astype(np.int64)


def uniform_in_box(
    rng: np.random.Generator, count: int, box: tuple[int, int, int]
) -> np.ndarray:
    return np.floor(rng.uniform(0, box, size=(count, 3)))


def inside_box(points: np.ndarray, box: tuple[int, int, int]) -> np.ndarray:
    return np.all((points >= 0) & (points < np.asarray(box)), axis=1)


def draw_rods(
    rng: np.random.Generator,
    count: int,
    box: tuple[int, int, int],
    rod_length: tuple[float, float],
) -> np.ndarray:
    """
    Endpoint pairs of 'count' rods, laid out as [a0, b0, a1, b1, ...].

    The second endpoint is re-drawn (direction and length) until it falls
    inside the box.
    """
    starts = uniform_in_box(rng, count, box)
    ends = np.empty_like(starts)
    pending = np.arange(count)

    while len(pending):
        directions = rng.normal(size=(len(pending), 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        lengths = rng.uniform(*rod_length, size=(len(pending), 1))
        candidates = np.rint(starts[pending] + directions * lengths)

        valid = inside_box(candidates, box)
        ends[pending[valid]] = candidates[valid]
        pending = pending[~valid]

    result = np.empty((2 * count, 3))
    result[0::2] = starts
    result[1::2] = ends
    return result


def generate_reference(
    kind: LabelKind,
    n_points: int,
    seed: int,
    config: LabelConfig = DEFAULT_LABEL_CONFIG,
) -> PointCloud:
    """
    Random reference label: points uniform in the label box, radii drawn from
    the kind's error distribution. Rods contribute two endpoints each.
    """
    kind = LabelKind(kind)
    if not MIN_REFERENCE_POINTS <= n_points <= MAX_REFERENCE_POINTS:
        raise ValueError(
            f"Reference size must lie in [{MIN_REFERENCE_POINTS}, "
            f"{MAX_REFERENCE_POINTS}], got {n_points}"
        )
    if kind is LabelKind.RODS and n_points % 2:
        raise ValueError(
            f"Rod labels need an even number of points, got {n_points}"
        )
    low, high = config.rod_length
    if kind is LabelKind.RODS and not 0 < low <= high:
        raise ValueError(f"Invalid rod length range {config.rod_length}")

    rng = np.random.default_rng(seed)
    if kind is LabelKind.BEADS:
        points = uniform_in_box(rng, n_points, config.box)
    else:
        points = draw_rods(rng, n_points // 2, config.box, config.rod_length)

    return PointCloud(kind, points, draw_radii(rng, kind, n_points))


def random_rotation(
    rng: np.random.Generator, max_degrees: float
) -> np.ndarray:
    angles = rng.uniform(-max_degrees, max_degrees, size=3)
    return Rotation.from_euler("xyz", angles, degrees=True).as_matrix()


def transform_points(
    points: np.ndarray, transform: RigidTransform
) -> np.ndarray:
    """Apply s * R @ p + t to every row of 'points'."""
    return transform.apply(points)


def contamination_counts(
    count: int, spec: MeasurementSpec
) -> tuple[int, int]:
    """Lost and artifact point counts for a reference of 'count' points."""
    lost = round_half_up(spec.lost_fraction * count)
    artifacts = round_half_up(spec.artifact_fraction * count)
    return lost, artifacts


def check_measurement_spec(
    spec: MeasurementSpec, count: Optional[int] = None
):
    """
    Validate the settings; with 'count' also check that the measurement
    keeps enough points to form a cloud.
    """
    for name in ("lost_fraction", "artifact_fraction"):
        value = getattr(spec, name)
        if not 0 <= value <= MAX_CONTAMINATION:
            raise ValueError(
                f"{name} must lie in [0, {MAX_CONTAMINATION}], got {value}"
            )
    if spec.rotation_deg_max < 0:
        raise ValueError("rotation_deg_max must not be negative")
    if spec.forgery_grade < 0:
        raise ValueError("forgery_grade must not be negative")
    if count is None:
        return

    lost, artifacts = contamination_counts(count, spec)
    if count - lost + artifacts < MIN_POINTS:
        raise ValueError(
            f"A measurement of {count} points with {lost} lost and "
            f"{artifacts} artifacts keeps fewer than {MIN_POINTS} points"
        )


def synthesize_measurement(
    reference: PointCloud,
    spec: MeasurementSpec,
    config: LabelConfig = DEFAULT_LABEL_CONFIG,
) -> tuple[PointCloud, RigidTransform]:
    """
    Simulate a scan of the reference label.

    Pipeline: drop lost points, add measurement noise, add forgery
    inaccuracy, append artifacts, then rotate and translate. Coordinates are
    rounded to whole nanometres like any device output.

    Returns
    -------
    The measurement and the ground-truth transform used, which maps
    reference coordinates into measurement coordinates.
    """
    count = len(reference)
    check_measurement_spec(spec, count)
    rng = np.random.default_rng(spec.seed)
    lost, artifacts = contamination_counts(count, spec)

    keep = np.sort(rng.choice(count, size=count - lost, replace=False))
    points = reference.points[keep].copy()
    radii = reference.radii[keep]

    if spec.noise_enabled:
        points += rng.normal(0.0, radii.astype(np.float64))
    # drawn at grade 0 too, so grades of one seed share every other draw
    points += spec.forgery_grade * rng.standard_normal(points.shape)
    if artifacts:
        extra = uniform_in_box(rng, artifacts, config.box)
        points = np.vstack([points, extra])
        radii = np.vstack([radii, draw_radii(rng, reference.kind, artifacts)])

    rotation = random_rotation(rng, spec.rotation_deg_max)
    translation = np.rint(
        rng.uniform(-config.max_translation, config.max_translation, size=3)
    )
    transform = RigidTransform(1.0, rotation, translation)

    logger.debug(
        "Measurement: %d lost, %d artifacts, noise=%s, forgery=%s nm",
        lost,
        artifacts,
        spec.noise_enabled,
        spec.forgery_grade,
    )
    measured = np.rint(transform_points(points, transform))
    return PointCloud(reference.kind, measured, radii), transform


def generate_wrong_measurement(
    reference: PointCloud,
    spec: MeasurementSpec,
    seed: int,
    config: LabelConfig = DEFAULT_LABEL_CONFIG,
) -> tuple[PointCloud, RigidTransform]:
    """Measurement of a different label of the same kind and size."""
    other = generate_reference(reference.kind, len(reference), seed, config)
    return synthesize_measurement(other, spec, config)


def scenario_spec(
    scenario: Scenario,
    rng: np.random.Generator,
    rotation_deg_max: float = 20.0,
    forgery_grade: float = 0.0,
) -> MeasurementSpec:
    """
    Measurement settings of an evaluation scenario.

    Contaminated scenarios draw p_Art and p_Ver uniformly from [0.1, 0.2].
    """
    scenario = Scenario(scenario)
    seed = int(rng.integers(0, 2**63))

    if scenario is Scenario.LAB:
        return MeasurementSpec(rotation_deg_max=rotation_deg_max, seed=seed)

    lost, artifacts = rng.uniform(0.1, MAX_CONTAMINATION, size=2)
    return MeasurementSpec(
        rotation_deg_max=rotation_deg_max,
        lost_fraction=float(lost),
        artifact_fraction=float(artifacts),
        noise_enabled=scenario is not Scenario.ART_LOST,
        forgery_grade=forgery_grade if scenario is Scenario.FORGERY else 0.0,
        seed=seed,
    )
