from itertools import permutations

import numpy as np
import pytest

from label_authenticator.cpd import CpdConfig, expectation, register
from label_authenticator.labels import (
    LabelKind,
    MeasurementSpec,
    PointCloud,
    Scenario,
    generate_reference,
    generate_wrong_measurement,
    scenario_spec,
    synthesize_measurement,
)
from label_authenticator.payload import encode_payload_a, encode_payload_b
from label_authenticator.signing import keygen, sign
from label_authenticator.verification import (
    ErrorBox,
    VerifyConfig,
    align,
    authenticate,
    counted_pairs,
    error_box,
    match_fraction,
    subcube_fraction,
    verify,
)


def three_points(first, radii=(10, 8, 8)) -> PointCloud:
    return PointCloud(
        LabelKind.BEADS,
        [first, [500_000, 0, 0], [0, 500_000, 0]],
        [radii, [10, 8, 8], [10, 8, 8]],
    )


def mutual_oracle(reference: PointCloud, aligned: PointCloud) -> int:
    """Most mutually in-box pairs over every injective assignment."""
    offset = np.abs(reference.points[:, None, :] - aligned.points[None])
    in_reference = np.all(offset <= 3 * reference.radii[:, None], axis=2)
    in_aligned = np.all(offset <= 3 * aligned.radii[None], axis=2)
    inside = in_reference & in_aligned
    rows = np.arange(len(reference))

    return max(
        int(inside[rows, list(assignment)].sum())
        for assignment in permutations(range(len(aligned)), len(reference))
    )


@pytest.mark.parametrize(
    "partner,expected",
    [
        ([29, 0, 0], 1.0),
        ([30, 0, 0], 1.0),
        ([31, 0, 0], 2 / 3),
        ([0, 25, 0], 2 / 3),
        ([-29, 24, -24], 1.0),
    ],
)
def test_error_box_bounds(partner, expected):
    reference = three_points([0, 0, 0])
    aligned = three_points(partner)

    assert match_fraction(reference, aligned, np.eye(3)) == expected


def test_box_is_checked_on_both_sides():
    reference = three_points([0, 0, 0], radii=(10, 8, 8))
    aligned = three_points([29, 0, 0], radii=(5, 8, 8))

    # inside the reference box (30) but outside the partner box (15)
    assert match_fraction(reference, aligned, np.eye(3)) == 2 / 3


def test_error_box_contains():
    cloud = three_points([0, 0, 0])
    box = error_box(cloud, 0)

    assert isinstance(box, ErrorBox)
    assert np.array_equal(box.half_extents, [30, 24, 24])
    assert box.contains([30, -24, 24])
    assert not box.contains([30.5, 0, 0])


def test_identical_clouds_match_fully():
    cloud = generate_reference(LabelKind.RODS, 40, seed=1)

    assert match_fraction(cloud, cloud, np.eye(len(cloud))) == 1.0


def test_rod_double_claim_counts_once():
    reference = PointCloud(
        LabelKind.RODS,
        [[0, 0, 0], [0, 0, 50], [900_000, 0, 0], [900_000, 0, 50]],
        [[20, 20, 40]] * 4,
    )
    posterior = np.array(
        [
            [0.6, 0.3, 0.0, 0.0],
            [0.5, 0.4, 0.0, 0.0],
            [0.0, 0.0, 0.7, 0.2],
            [0.0, 0.0, 0.6, 0.3],
        ]
    )

    pairs = counted_pairs(reference, reference, posterior)

    assert pairs == [(0, 0), (2, 2)]
    assert match_fraction(reference, reference, posterior) == 1 / 2


def test_ties_go_to_lower_reference_index():
    reference = PointCloud(
        LabelKind.BEADS,
        [[0, 0, 0], [1, 0, 0], [500_000, 0, 0]],
        [[10, 10, 10]] * 3,
    )
    posterior = np.array(
        [[0.5, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 1.0]]
    )

    assert counted_pairs(reference, reference, posterior) == [(0, 0), (2, 2)]


def test_claimed_partner_is_spent_even_if_out_of_box():
    reference = PointCloud(
        LabelKind.BEADS,
        [[0, 0, 0], [100_000, 0, 0], [500_000, 0, 0]],
        [[10, 10, 10]] * 3,
    )
    posterior = np.array(
        [[0.0, 0.9, 0.0], [0.0, 0.8, 0.0], [0.0, 0.0, 1.0]]
    )

    # row 0 claims column 1 and fails the box test, row 1 is left without
    assert counted_pairs(reference, reference, posterior) == [(2, 2)]


def test_rows_without_weight_are_skipped():
    cloud = three_points([0, 0, 0])
    posterior = np.eye(3)
    posterior[1] = 0.0

    assert match_fraction(cloud, cloud, posterior) == 2 / 3


def test_pairs_are_injective():
    rng = np.random.default_rng(0)
    reference = generate_reference(LabelKind.BEADS, 30, seed=0)

    for _ in range(20):
        posterior = rng.dirichlet(np.ones(30), size=30)
        pairs = counted_pairs(reference, reference, posterior)
        rows, columns = zip(*pairs) if pairs else ((), ())

        assert len(set(rows)) == len(rows)
        assert len(set(columns)) == len(columns)


def test_posterior_shape_mismatch():
    cloud = three_points([0, 0, 0])

    with pytest.raises(ValueError):
        match_fraction(cloud, cloud, np.eye(4))


@pytest.mark.parametrize("kind", [LabelKind.BEADS, LabelKind.RODS])
def test_exact_inverse_matches_oracle(kind):
    for seed in range(100):
        reference = generate_reference(kind, 6, seed)
        spec = MeasurementSpec(rotation_deg_max=20.0, seed=seed + 500)
        measurement, transform = synthesize_measurement(reference, spec)
        inverse = transform.inverse()

        aligned = align(measurement, inverse)
        posterior = expectation(reference, measurement, inverse, 100.0)
        fraction = match_fraction(reference, aligned, posterior.matrix)

        assert fraction == mutual_oracle(reference, aligned) / len(reference)


@pytest.mark.parametrize("kind", [LabelKind.BEADS, LabelKind.RODS])
def test_registered_fraction_never_beats_oracle(kind):
    for seed in range(20):
        reference = generate_reference(kind, 6, seed=seed)
        spec = MeasurementSpec(
            artifact_fraction=0.2, noise_enabled=True, seed=seed + 100
        )
        measurement, _ = synthesize_measurement(reference, spec)

        result = register(reference, measurement)
        aligned = align(measurement, result.transform)
        fraction = match_fraction(reference, aligned, result.posterior)

        assert len(aligned) == 7
        assert fraction <= mutual_oracle(reference, aligned) / 6


def test_size_precheck_rejects_without_registration():
    reference = generate_reference(LabelKind.BEADS, 50, seed=0)
    measurement = generate_reference(LabelKind.BEADS, 80, seed=1)

    verdict = verify(reference, measurement)

    assert verdict.size_rejected
    assert not verdict.equal
    assert verdict.best_fraction == 0.0
    assert verdict.per_subcube_fractions == (0.0,) * 27
    assert verdict.best_subcube_index == 0


def test_kind_mismatch():
    beads = generate_reference(LabelKind.BEADS, 30, seed=0)
    rods = generate_reference(LabelKind.RODS, 30, seed=0)

    with pytest.raises(ValueError):
        verify(beads, rods)


@pytest.mark.parametrize(
    "config",
    [
        VerifyConfig(match_threshold=1.0),
        VerifyConfig(max_size_deviation=0.0),
        VerifyConfig(divisions_per_axis=0),
        VerifyConfig(max_parallel=0),
    ],
)
def test_invalid_config(config):
    cloud = generate_reference(LabelKind.BEADS, 30, seed=0)

    with pytest.raises(ValueError):
        verify(cloud, cloud, config)


def test_lab_conditions_match():
    perfect = 0
    for seed in range(10):
        reference = generate_reference(LabelKind.BEADS, 30, seed)
        spec = MeasurementSpec(rotation_deg_max=20.0, seed=seed + 100)
        measurement, _ = synthesize_measurement(reference, spec)

        verdict = verify(reference, measurement)

        assert len(verdict.per_subcube_fractions) == 27
        assert verdict.best_fraction == max(verdict.per_subcube_fractions)
        perfect += verdict.best_fraction == 1.0

    assert perfect >= 8


def test_wrong_label_stays_low():
    rng = np.random.default_rng(3)
    for seed in range(5):
        reference = generate_reference(LabelKind.BEADS, 30, seed)
        spec = scenario_spec(Scenario.WRONG_LABEL, rng)
        measurement, _ = generate_wrong_measurement(
            reference, spec, seed=seed + 1000
        )

        verdict = verify(reference, measurement)

        assert verdict.best_fraction < 0.1
        assert not verdict.equal


def test_verdict_independent_of_parallelism():
    reference = generate_reference(LabelKind.RODS, 24, seed=4)
    spec = scenario_spec(Scenario.NOISY, np.random.default_rng(4))
    measurement, _ = synthesize_measurement(reference, spec)

    verdicts = [
        verify(reference, measurement, VerifyConfig(max_parallel=workers))
        for workers in (1, 4, 27)
    ]

    for verdict in verdicts[1:]:
        assert verdict.per_subcube_fractions == (
            verdicts[0].per_subcube_fractions
        )
        assert verdict.best_subcube_index == verdicts[0].best_subcube_index
        assert verdict.equal == verdicts[0].equal


def test_best_is_at_least_identity_subcube():
    reference = generate_reference(LabelKind.BEADS, 25, seed=6)
    spec = scenario_spec(Scenario.NOISY, np.random.default_rng(6))
    measurement, _ = synthesize_measurement(reference, spec)

    verdict = verify(reference, measurement)
    identity = subcube_fraction(
        reference, measurement, CpdConfig(), np.eye(3)
    )

    assert verdict.best_fraction >= identity.fraction
    assert identity.transform.is_valid()
    assert identity.iterations >= 1


def test_threshold_is_strict():
    reference = generate_reference(LabelKind.BEADS, 25, seed=2)
    measurement, _ = synthesize_measurement(
        reference, MeasurementSpec(seed=1)
    )
    config = VerifyConfig(match_threshold=0.999, divisions_per_axis=1)

    verdict = verify(reference, measurement, config)

    assert len(verdict.per_subcube_fractions) == 1
    assert verdict.equal == (verdict.best_fraction > 0.999)


def test_authenticate_genuine_label():
    keys = keygen(seed="factory")
    reference = generate_reference(LabelKind.BEADS, 25, seed=1)
    payload_a = encode_payload_a(reference)
    info = "Acme Werk 7, Serie 0042"
    signature = sign(payload_a, info, keys.private_key)
    payload_b = encode_payload_b(info, signature)
    measurement, _ = synthesize_measurement(
        reference, MeasurementSpec(seed=5)
    )

    result = authenticate(payload_a, payload_b, measurement, keys.public_key)

    assert result.signature_valid
    assert result.reference == reference
    assert result.verdict.equal
    assert result.authentic


def test_authenticate_aborts_on_bad_signature():
    keys = keygen(seed="factory")
    forger = keygen(seed="forger")
    reference = generate_reference(LabelKind.BEADS, 25, seed=1)
    payload_a = encode_payload_a(reference)
    info = "Acme Werk 7"
    payload_b = encode_payload_b(
        info, sign(payload_a, info, forger.private_key)
    )

    result = authenticate(payload_a, payload_b, reference, keys.public_key)

    assert not result.signature_valid
    assert result.verdict is None
    assert result.reference is None
    assert not result.authentic
