"""
Synthetic evaluation of the label verification.

For every label kind and size a number of references is generated, each is
measured several times under a scenario (lab conditions, artifacts and lost
points, full noise, a wrong label, a forgery) and every measurement is
verified against its reference. Results are per-trial tables and summary
statistics.
"""

import logging
from itertools import repeat
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm.auto import tqdm
from tqdm.contrib.concurrent import process_map

from .cpd import rotation_angle
from .labels import (
    DEFAULT_LABEL_CONFIG,
    LabelConfig,
    LabelKind,
    Scenario,
    contamination_counts,
    generate_reference,
    generate_wrong_measurement,
    scenario_spec,
    synthesize_measurement,
)
from .verification import VerifyConfig, verify


logger = logging.getLogger(__name__)

GRID_SIZES = {
    LabelKind.BEADS: (25, 30, 35, 40, 45, 50, 60, 75, 100),
    LabelKind.RODS: (24, 30, 34, 40, 44, 50, 60, 74, 100),
}
FORGERY_GRADES = {
    LabelKind.BEADS: (0.0, 1.0, 5.0, 15.0, 25.0, 50.0),
    LabelKind.RODS: (0.0, 1.0, 5.0, 25.0, 50.0),
}
GRID_REFERENCES = 10
GRID_MEASUREMENTS = 10
HISTOGRAM_BINS = np.linspace(0.0, 1.0, 11)
CONTAMINATION_BINS = (0.0, 0.1, 0.125, 0.15, 0.175, 0.2)
IMPOSTOR_SCENARIOS = (Scenario.WRONG_LABEL, Scenario.FORGERY)
TIMING_COLUMNS = ["size", "median_ms", "p95_ms"]


class ExperimentPlan(NamedTuple):
    """
    Parameters
    ----------
    sizes : tuple, optional
        Reference sizes; None uses the full size grid of each kind.
    references : int
        References generated per kind and size.
    measurements : int
        Measurements synthesised per reference.
    label_config : LabelConfig
        Physical label model of references and measurements.
    parallel : int
        Worker processes; 1 runs the trials in this process.
    """

    kinds: tuple[LabelKind, ...] = (LabelKind.BEADS,)
    sizes: Optional[tuple[int, ...]] = None
    references: int = GRID_REFERENCES
    measurements: int = GRID_MEASUREMENTS
    scenario: Scenario = Scenario.LAB
    forgery_grade: float = 0.0
    rotation_deg_max: float = 20.0
    seed: int = 0
    verify_config: VerifyConfig = VerifyConfig()
    label_config: LabelConfig = DEFAULT_LABEL_CONFIG
    parallel: int = 1
    show_progress: bool = False

    @classmethod
    def full_grid(
        cls, scenario: Scenario, kinds: Sequence[LabelKind], **kwargs
    ) -> "ExperimentPlan":
        """Every size, 10 references and 10 measurements: 900 trials a kind."""
        return cls(
            kinds=tuple(LabelKind(kind) for kind in kinds),
            sizes=None,
            references=GRID_REFERENCES,
            measurements=GRID_MEASUREMENTS,
            scenario=Scenario(scenario),
            **kwargs,
        )

    def sizes_for(self, kind: LabelKind) -> tuple[int, ...]:
        if self.sizes is None:
            return GRID_SIZES[LabelKind(kind)]
        return tuple(self.sizes)

    def trials(self) -> list["Trial"]:
        result = []
        for kind in self.kinds:
            kind = LabelKind(kind)
            for size in self.sizes_for(kind):
                for reference in range(self.references):
                    for measurement in range(self.measurements):
                        trial = Trial(
                            len(result), kind, size, reference, measurement
                        )
                        result.append(trial)
        return result


class Trial(NamedTuple):
    index: int
    kind: LabelKind
    size: int
    reference: int
    measurement: int


class TrialResult(NamedTuple):
    index: int
    kind: str
    size: int
    reference: int
    measurement: int
    measured_points: int
    lost_fraction: float
    artifact_fraction: float
    lost_points: int
    artifact_points: int
    fraction: float
    equal: bool
    size_rejected: bool
    best_subcube: int
    rotation_error_deg: float
    elapsed_ms: float


class ExperimentReport(NamedTuple):
    trials: pd.DataFrame
    median: float
    histogram: np.ndarray
    per_size: pd.DataFrame
    per_reference: pd.DataFrame
    per_contamination: pd.DataFrame
    summary: dict


def check_plan(plan: ExperimentPlan):
    if not plan.kinds:
        raise ValueError("An experiment needs at least one label kind")
    if plan.references < 1 or plan.measurements < 1:
        raise ValueError("references and measurements must be at least 1")
    if plan.parallel < 1:
        raise ValueError("parallel must be at least 1")
    if plan.seed < 0:
        raise ValueError("seed must not be negative")
    if plan.forgery_grade < 0:
        raise ValueError("forgery_grade must not be negative")
    Scenario(plan.scenario)


def _kind_index(kind: LabelKind) -> int:
    return list(LabelKind).index(LabelKind(kind))


def reference_seed(plan: ExperimentPlan, trial: Trial) -> int:
    sequence = np.random.SeedSequence(
        [plan.seed, _kind_index(trial.kind), trial.size, trial.reference]
    )
    return int(sequence.generate_state(1, np.uint64)[0])


def run_trial(trial: Trial, plan: ExperimentPlan) -> TrialResult:
    """One reference/measurement pair; a pure function of (trial, plan)."""
    reference = generate_reference(
        trial.kind, trial.size, reference_seed(plan, trial), plan.label_config
    )
    rng = np.random.default_rng(
        [
            plan.seed,
            _kind_index(trial.kind),
            trial.size,
            trial.reference,
            trial.measurement,
        ]
    )
    scenario = Scenario(plan.scenario)
    spec = scenario_spec(
        scenario, rng, plan.rotation_deg_max, plan.forgery_grade
    )
    lost, artifacts = contamination_counts(trial.size, spec)

    if scenario is Scenario.WRONG_LABEL:
        other_seed = int(rng.integers(0, 2**63))
        measurement, truth = generate_wrong_measurement(
            reference, spec, other_seed, plan.label_config
        )
    else:
        measurement, truth = synthesize_measurement(
            reference, spec, plan.label_config
        )

    verdict = verify(reference, measurement, plan.verify_config)
    rotation_error = np.nan
    if verdict.best_transform is not None:
        # the registration maps the scan back, so it should undo the truth
        radians = rotation_angle(
            verdict.best_transform.rotation, truth.rotation.T
        )
        rotation_error = float(np.degrees(radians))

    return TrialResult(
        index=trial.index,
        kind=trial.kind.value,
        size=trial.size,
        reference=trial.reference,
        measurement=trial.measurement,
        measured_points=len(measurement),
        lost_fraction=spec.lost_fraction,
        artifact_fraction=spec.artifact_fraction,
        lost_points=lost,
        artifact_points=artifacts,
        fraction=verdict.best_fraction,
        equal=verdict.equal,
        size_rejected=verdict.size_rejected,
        best_subcube=verdict.best_subcube_index,
        rotation_error_deg=rotation_error,
        elapsed_ms=verdict.elapsed * 1000,
    )


def _share_below_half(fractions: pd.Series) -> float:
    return float((fractions < 0.5).mean())


def _share_at_least_70(fractions: pd.Series) -> float:
    return float((fractions >= 0.7).mean())


def contamination_breakdown(trials: pd.DataFrame) -> pd.DataFrame:
    """
    Fractions grouped by the drawn lost and artifact shares, one block of
    rows per factor.
    """
    labels = [
        f"{low:.3f}-{high:.3f}"
        for low, high in zip(CONTAMINATION_BINS[:-1], CONTAMINATION_BINS[1:])
    ]
    tables = []
    for factor, column in (
        ("lost", "lost_fraction"),
        ("artifacts", "artifact_fraction"),
    ):
        levels = pd.cut(
            trials[column],
            bins=CONTAMINATION_BINS,
            labels=labels,
            include_lowest=True,
        )
        table = (
            trials.assign(level=levels.astype(str))
            .groupby(["kind", "level"])
            .agg(
                trials=("fraction", "size"),
                median=("fraction", "median"),
                mean=("fraction", "mean"),
                share_at_least_70=("fraction", _share_at_least_70),
            )
            .reset_index()
        )
        table.insert(1, "factor", factor)
        tables.append(table)
    return pd.concat(tables, ignore_index=True)


def summarize(trials: pd.DataFrame, plan: ExperimentPlan) -> ExperimentReport:
    fractions = trials.fraction.to_numpy()
    histogram = np.histogram(fractions, bins=HISTOGRAM_BINS)[0]

    per_size = (
        trials.groupby(["kind", "size"])
        .agg(
            trials=("fraction", "size"),
            median=("fraction", "median"),
            mean=("fraction", "mean"),
            min=("fraction", "min"),
            max=("fraction", "max"),
            median_ms=("elapsed_ms", "median"),
        )
        .reset_index()
    )
    per_reference = (
        trials.groupby(["kind", "size", "reference"])
        .agg(
            median=("fraction", "median"),
            min=("fraction", "min"),
            share_below_half=("fraction", _share_below_half),
        )
        .reset_index()
    )

    accepted = int(trials.equal.sum())
    impostor = Scenario(plan.scenario) in IMPOSTOR_SCENARIOS
    summary = {
        "scenario": Scenario(plan.scenario).value,
        "forgery_grade": float(plan.forgery_grade),
        "trials": len(trials),
        "median": float(np.median(fractions)),
        "mean": float(fractions.mean()),
        "min": float(fractions.min()),
        "max": float(fractions.max()),
        "share_perfect": float((fractions == 1.0).mean()),
        "share_at_least_70": _share_at_least_70(trials.fraction),
        "share_below_50": float((fractions < 0.5).mean()),
        "share_below_10": float((fractions < 0.1).mean()),
        "accepted": accepted,
        "false_accepts": accepted if impostor else 0,
        "false_rejects": 0 if impostor else len(trials) - accepted,
        "size_rejected": int(trials.size_rejected.sum()),
        "median_ms": float(trials.elapsed_ms.median()),
        "histogram": histogram.tolist(),
    }
    return ExperimentReport(
        trials=trials,
        median=summary["median"],
        histogram=histogram,
        per_size=per_size,
        per_reference=per_reference,
        per_contamination=contamination_breakdown(trials),
        summary=summary,
    )


def run_experiment(plan: ExperimentPlan) -> ExperimentReport:
    """Run every trial of the plan; 'parallel' does not change the report."""
    check_plan(plan)
    trials = plan.trials()
    desc = f"{Scenario(plan.scenario).value} trials"

    if plan.parallel > 1:
        results = process_map(
            run_trial,
            trials,
            repeat(plan),
            max_workers=plan.parallel,
            chunksize=max(1, len(trials) // (4 * plan.parallel)),
            desc=desc,
            disable=not plan.show_progress,
        )
    else:
        results = [
            run_trial(trial, plan)
            for trial in tqdm(
                trials, desc=desc, disable=not plan.show_progress
            )
        ]

    frame = pd.DataFrame(results, columns=TrialResult._fields)
    frame = frame.sort_values("index").reset_index(drop=True)
    logger.info("Finished %d trials", len(frame))
    return summarize(frame, plan)


def run_forgery_sweep(
    plan: ExperimentPlan, grades: Optional[Sequence[float]] = None
) -> pd.DataFrame:
    """
    Median fraction per forgery grade. Without explicit grades each kind is
    swept over its own grade set.
    """
    rows = []
    for kind in plan.kinds:
        kind = LabelKind(kind)
        kind_grades = FORGERY_GRADES[kind] if grades is None else grades
        for grade in kind_grades:
            report = run_experiment(
                plan._replace(
                    kinds=(kind,),
                    scenario=Scenario.FORGERY,
                    forgery_grade=float(grade),
                )
            )
            rows.append(
                {
                    "kind": kind.value,
                    "grade": float(grade),
                    "median": report.summary["median"],
                    "mean": report.summary["mean"],
                    "share_below_50": report.summary["share_below_50"],
                    "false_accepts": report.summary["false_accepts"],
                }
            )
    return pd.DataFrame(rows)


def run_timing(
    sizes: Sequence[int],
    repetitions: int,
    seed: int = 0,
    verify_config: VerifyConfig = VerifyConfig(),
) -> pd.DataFrame:
    """
    Wall-clock of verify() per reference size on noisy bead measurements.
    """
    if repetitions < 0:
        raise ValueError("repetitions must not be negative")
    if repetitions == 0:
        return pd.DataFrame(columns=TIMING_COLUMNS)

    rows = []
    for size in sizes:
        durations = []
        for repetition in range(repetitions):
            rng = np.random.default_rng([seed, size, repetition])
            reference = generate_reference(
                LabelKind.BEADS, size, int(rng.integers(0, 2**63))
            )
            spec = scenario_spec(Scenario.NOISY, rng)
            measurement, _ = synthesize_measurement(reference, spec)
            durations.append(
                verify(reference, measurement, verify_config).elapsed * 1000
            )
        rows.append(
            {
                "size": size,
                "median_ms": float(np.median(durations)),
                "p95_ms": float(np.percentile(durations, 95)),
            }
        )
    return pd.DataFrame(rows, columns=TIMING_COLUMNS)
