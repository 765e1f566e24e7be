"""
Equality decision between a reference label and a measurement.

The measurement is registered onto the reference once per rotation subcube.
Every registration is scored by the share of reference points that have a
unique, mutually in-box partner, and the best score decides.
"""

import logging
import time
from functools import partial
from typing import NamedTuple, Optional

import numpy as np
from cryptography.hazmat.primitives.asymmetric import ec
from tqdm.contrib.concurrent import thread_map

from .cpd import CpdConfig, decompose_rotation_space, register
from .labels import PointCloud, RigidTransform
from .payload import PayloadA, PayloadB, decode_payload_a
from .signing import verify_signature


logger = logging.getLogger(__name__)

BOX_SIGMAS = 3


class ErrorBox(NamedTuple):
    """Axis-aligned box of half extents 3 * (sx, sy, sz) around a point."""

    center: np.ndarray
    half_extents: np.ndarray

    def contains(self, point: np.ndarray) -> bool:
        offset = np.abs(np.asarray(point, dtype=np.float64) - self.center)
        return bool(np.all(offset <= self.half_extents))


class VerifyConfig(NamedTuple):
    """
    Parameters
    ----------
    max_size_deviation : float
        Largest accepted | |X| - |Y| | / |X| before any registration.
    match_threshold : float
        A best fraction strictly above this value means "equal".
    divisions_per_axis : int
        The rotation cube is split into divisions_per_axis^3 subcubes.
    max_parallel : int
        Concurrent registrations.
    """

    max_size_deviation: float = 0.25
    match_threshold: float = 0.5
    divisions_per_axis: int = 3
    cpd: CpdConfig = CpdConfig()
    max_parallel: int = 4


class Verdict(NamedTuple):
    equal: bool
    best_fraction: float
    per_subcube_fractions: tuple[float, ...]
    best_subcube_index: int
    elapsed: float
    size_rejected: bool = False
    best_transform: Optional[RigidTransform] = None


class SubcubeMatch(NamedTuple):
    fraction: float
    transform: RigidTransform
    iterations: int


class AuthenticationResult(NamedTuple):
    signature_valid: bool
    verdict: Optional[Verdict]
    reference: Optional[PointCloud]

    @property
    def authentic(self) -> bool:
        return self.signature_valid and self.verdict.equal


def check_config(config: VerifyConfig):
    if not 0 < config.match_threshold < 1:
        raise ValueError(
            f"match_threshold must lie in (0, 1), got {config.match_threshold}"
        )
    if not 0 < config.max_size_deviation < 1:
        raise ValueError(
            "max_size_deviation must lie in (0, 1), "
            f"got {config.max_size_deviation}"
        )
    if config.divisions_per_axis < 1:
        raise ValueError("divisions_per_axis must be at least 1")
    if config.max_parallel < 1:
        raise ValueError("max_parallel must be at least 1")


def error_box(cloud: PointCloud, index: int) -> ErrorBox:
    return ErrorBox(
        cloud.points[index], BOX_SIGMAS * cloud.radii[index].astype(float)
    )


def align(measurement: PointCloud, transform: RigidTransform) -> PointCloud:
    """Measurement mapped into the reference frame."""
    return measurement.with_points(transform.apply(measurement.points))


def counted_pairs(
    reference: PointCloud, aligned: PointCloud, posterior: np.ndarray
) -> list[tuple[int, int]]:
    """
    Injective reference/measurement pairs that lie in each other's boxes.

    Every reference point proposes its most probable partner. Proposals are
    claimed greedily by descending posterior (ties by reference index); a
    measurement point can be claimed once, whether or not its pair then
    passes the box test.
    """
    posterior = np.asarray(posterior, dtype=np.float64)
    shape = (len(reference), len(aligned))
    if posterior.shape != shape:
        raise ValueError(
            f"Posterior shape {posterior.shape} does not match {shape}"
        )

    rows = np.arange(shape[0])
    partners = posterior.argmax(axis=1)
    weights = posterior[rows, partners]
    order = np.lexsort((rows, -weights))

    claimed = np.zeros(shape[1], dtype=bool)
    pairs = []

    for i in order:
        j = partners[i]
        if weights[i] <= 0 or claimed[j]:
            continue
        claimed[j] = True

        inside = error_box(reference, i).contains(aligned.points[j])
        if inside and error_box(aligned, j).contains(reference.points[i]):
            pairs.append((int(i), int(j)))

    return sorted(pairs)


def match_fraction(
    reference: PointCloud, aligned: PointCloud, posterior: np.ndarray
) -> float:
    return len(counted_pairs(reference, aligned, posterior)) / len(reference)


def subcube_fraction(
    reference: PointCloud,
    measurement: PointCloud,
    config: CpdConfig,
    rotation: np.ndarray,
) -> SubcubeMatch:
    """Register from one starting rotation and score the alignment."""
    result = register(reference, measurement, rotation, config)
    aligned = align(measurement, result.transform)
    return SubcubeMatch(
        match_fraction(reference, aligned, result.posterior),
        result.transform,
        result.iterations_used,
    )


def size_deviation(reference: PointCloud, measurement: PointCloud) -> float:
    return abs(len(reference) - len(measurement)) / len(reference)


def verify(
    reference: PointCloud,
    measurement: PointCloud,
    config: VerifyConfig = VerifyConfig(),
) -> Verdict:
    """
    Decide whether the measurement shows the reference label.

    Measurements whose size deviates too much are rejected without
    registration. Otherwise one registration runs per rotation subcube;
    the highest match fraction wins, ties go to the lowest subcube index.
    """
    if reference.kind != measurement.kind:
        raise ValueError(
            f"Cannot compare a {reference.kind.value} reference with a "
            f"{measurement.kind.value} measurement"
        )
    check_config(config)
    start = time.perf_counter()
    subcubes = config.divisions_per_axis**3

    deviation = size_deviation(reference, measurement)
    if deviation > config.max_size_deviation:
        logger.info(
            "Size deviation %.3f exceeds %.3f, rejecting",
            deviation,
            config.max_size_deviation,
        )
        return Verdict(
            equal=False,
            best_fraction=0.0,
            per_subcube_fractions=(0.0,) * subcubes,
            best_subcube_index=0,
            elapsed=time.perf_counter() - start,
            size_rejected=True,
        )

    rotations = decompose_rotation_space(config.divisions_per_axis)
    matches = thread_map(
        partial(subcube_fraction, reference, measurement, config.cpd),
        rotations,
        max_workers=config.max_parallel,
        disable=True,
    )

    fractions = [match.fraction for match in matches]
    best = int(np.argmax(fractions))
    verdict = Verdict(
        equal=fractions[best] > config.match_threshold,
        best_fraction=fractions[best],
        per_subcube_fractions=tuple(fractions),
        best_subcube_index=best,
        elapsed=time.perf_counter() - start,
        best_transform=matches[best].transform,
    )
    logger.debug(
        "Best fraction %.3f in subcube %d after %d EM iterations in total",
        verdict.best_fraction,
        best,
        sum(match.iterations for match in matches),
    )
    return verdict


def authenticate(
    payload_a: PayloadA,
    payload_b: PayloadB,
    measurement: PointCloud,
    public_key: ec.EllipticCurvePublicKey,
    config: VerifyConfig = VerifyConfig(),
) -> AuthenticationResult:
    """
    Complete scan check: the signature over both payloads first, then the
    label itself. A bad signature stops before any registration.
    """
    valid = verify_signature(
        payload_a, payload_b.product_info, payload_b.signature, public_key
    )
    if not valid:
        logger.info("Signature check failed, label rejected")
        return AuthenticationResult(False, None, None)

    reference = decode_payload_a(payload_a)
    return AuthenticationResult(
        True, verify(reference, measurement, config), reference
    )
