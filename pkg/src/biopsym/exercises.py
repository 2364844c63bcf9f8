"""Exercise families and their automatic grading, plus the weakness-driven
recommender.

Three families: a patient-data risk questionnaire, image-recognition tasks
(gland volume by calipers, structure localization), and guided simulations
scored from the protocol result. All thresholds here are teaching defaults
carried in config, not clinical constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .biopsy import N_ZONES, ProtocolResult
from .volume import SlicePlane

KINDS = ("questionnaire", "volume_estimate", "structure_localization", "guided_simulation")
RISK_BANDS = ("low", "intermediate", "high")


class GradingError(ValueError):
    """Invalid grading input (bad weights, missing caliper, bad record)."""


# ---------------------------------------------------------------------------
# Patient risk questionnaire
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatientRecord:
    age: float
    psa: float
    prostate_volume_cc: float
    dre_abnormal: bool = False

    def __post_init__(self):
        if self.psa < 0:
            raise GradingError("psa must be >= 0")
        if self.prostate_volume_cc <= 0:
            raise GradingError("prostate volume must be > 0")
        if not (18 <= self.age <= 120):
            raise GradingError("age must be within [18, 120]")


@dataclass(frozen=True)
class RiskRules:
    """Transparent instructional heuristic, not a clinical predictor."""

    density_high: float = 0.15
    psa_low: float = 4.0
    density_low: float = 0.10


@dataclass(frozen=True)
class RiskAssessment:
    psa_density: float
    risk_band: str
    rationale: str


def risk_score(p: PatientRecord, rules: RiskRules = RiskRules()) -> RiskAssessment:
    """PSA density plus a rule-table band: high on density >= 0.15 or an
    abnormal DRE, low on low PSA with low density, intermediate otherwise.

    Worked examples (default rules):
      psa 4.5, volume 30 -> density 0.150 -> high
      psa 2.0, volume 40, normal DRE -> density 0.050 -> low
      psa 5.0, volume 45 -> density 0.111 -> intermediate
    """
    if p.prostate_volume_cc <= 0:
        raise GradingError("prostate volume must be > 0")
    density = p.psa / p.prostate_volume_cc
    if density >= rules.density_high or p.dre_abnormal:
        band = "high"
        why = (
            f"PSA density {density:.3f} >= {rules.density_high}"
            if density >= rules.density_high
            else "abnormal DRE"
        )
    elif p.psa < rules.psa_low and density < rules.density_low:
        band = "low"
        why = (
            f"PSA {p.psa:.2f} < {rules.psa_low} and density {density:.3f} < {rules.density_low}"
        )
    else:
        band = "intermediate"
        why = f"PSA {p.psa:.2f} with density {density:.3f} between rule thresholds"
    return RiskAssessment(psa_density=density, risk_band=band, rationale=f"{band}: {why}, DRE {'abnormal' if p.dre_abnormal else 'normal'}")


def grade_risk_answer(p: PatientRecord, answer_band: str,
                      rules: RiskRules = RiskRules()) -> tuple[float, RiskAssessment]:
    """Full credit for the right band, half for an adjacent band."""
    if answer_band not in RISK_BANDS:
        raise GradingError(f"unknown risk band {answer_band!r}")
    truth = risk_score(p, rules)
    gap = abs(RISK_BANDS.index(answer_band) - RISK_BANDS.index(truth.risk_band))
    return ({0: 1.0, 1: 0.5}.get(gap, 0.0), truth)


# ---------------------------------------------------------------------------
# Volume estimation
# ---------------------------------------------------------------------------

def ellipsoid_volume(length_mm: float, width_mm: float, height_mm: float) -> float:
    """Prolate-ellipsoid volume (pi/6 * L * W * H), in cc.

    Worked examples: (50, 40, 30) -> 31.416 cc; (10, 10, 10) -> 0.524 cc.
    """
    if min(length_mm, width_mm, height_mm) <= 0:
        raise GradingError("all dimensions must be positive")
    return math.pi / 6.0 * length_mm * width_mm * height_mm / 1000.0


CALIPER_AXES = ("length", "width", "height")


@dataclass(frozen=True)
class Caliper:
    """A measurement segment drawn on a slice, in pixel coordinates."""

    axis: str
    plane: SlicePlane
    p0_px: tuple[float, float]
    p1_px: tuple[float, float]

    def length_mm(self) -> float:
        du = (self.p1_px[0] - self.p0_px[0]) * self.plane.mm_per_px_u
        dv = (self.p1_px[1] - self.p0_px[1]) * self.plane.mm_per_px_v
        return math.hypot(du, dv)


@dataclass(frozen=True)
class VolumeEstimateGrade:
    score: float
    per_axis_rel_err: dict[str, float]
    estimated_volume_cc: float


def grade_volume_lengths(true_dims_mm: tuple[float, float, float],
                         lengths_mm: dict[str, float],
                         rel_tolerance: float = 0.25) -> VolumeEstimateGrade:
    """Mean per-axis credit, linear from full at 0% error to zero at the
    relative tolerance (default 25%).

    Worked examples: exact measurements -> 1.000; one axis off by exactly
    25% with the others exact -> 0.667; every axis off by >= 25% -> 0.000.
    """
    missing = [a for a in CALIPER_AXES if a not in lengths_mm]
    if missing:
        raise GradingError(f"missing caliper(s): {', '.join(missing)}")
    errs: dict[str, float] = {}
    credits = []
    measured = []
    for axis, true_val in zip(CALIPER_AXES, true_dims_mm):
        got = float(lengths_mm[axis])
        if got <= 0:
            raise GradingError(f"{axis} measurement must be positive")
        measured.append(got)
        rel = abs(got - true_val) / true_val
        errs[axis] = rel
        credits.append(max(0.0, 1.0 - rel / rel_tolerance))
    return VolumeEstimateGrade(
        score=sum(credits) / len(credits),
        per_axis_rel_err=errs,
        estimated_volume_cc=ellipsoid_volume(*measured),
    )


def grade_volume_estimate(true_dims_mm: tuple[float, float, float],
                          calipers: list[Caliper],
                          rel_tolerance: float = 0.25) -> VolumeEstimateGrade:
    """Caliper-segment flavor of :func:`grade_volume_lengths`."""
    lengths = {c.axis: c.length_mm() for c in calipers}
    return grade_volume_lengths(true_dims_mm, lengths, rel_tolerance)


# ---------------------------------------------------------------------------
# Structure localization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereRegion:
    """Analytic stand-in for a structure the trainee must point at."""

    label: str
    center: tuple[float, float, float]
    radius_mm: float


def grade_localization(region: SphereRegion, user_point,
                       falloff_mm: float = 10.0) -> float:
    """1.0 inside the region, linear falloff to 0 at ``falloff_mm`` outside.

    Worked examples (falloff 10 mm): point at the region center -> 1.000;
    5 mm outside the boundary -> 0.500; 20 mm outside -> 0.000.
    """
    d = float(np.linalg.norm(np.asarray(user_point, dtype=float) - np.array(region.center)))
    outside = d - region.radius_mm
    if outside <= 0:
        return 1.0
    return max(0.0, 1.0 - outside / falloff_mm)


# ---------------------------------------------------------------------------
# Simulation grading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationWeights:
    coverage: float = 0.6
    order: float = 0.2
    in_gland: float = 0.1
    targets: float = 0.1

    def __post_init__(self):
        total = self.coverage + self.order + self.in_gland + self.targets
        if abs(total - 1.0) > 1e-9:
            raise GradingError(f"weights must sum to 1, got {total}")


@dataclass(frozen=True)
class SimulationGrade:
    score: float
    components: dict[str, float]


def grade_simulation(result: ProtocolResult,
                     weights: SimulationWeights = SimulationWeights()) -> SimulationGrade:
    """Weighted mix of coverage, ordering, in-gland fraction and target hits.

    Without targets the target term drops out and the remaining weights are
    renormalized, i.e. the score is the weighted mean of the present
    components: sum(w_i * c_i) / sum(w_i) over present components.

    Worked examples (default weights 0.6/0.2/0.1/0.1):
      perfect 12/12 in order, none out of gland, no targets -> 1.000
      coverage 0.5, order 1.0, none out of gland, no targets
        -> (0.6*0.5 + 0.2 + 0.1) / 0.9 -> 0.667
      zero samples, no targets -> (0.6*0 + 0.2*1 + 0.1*1) / 0.9 -> 0.333
        (empty protocols are vacuously ordered and have no out-of-gland
        samples, so those components default to 1)
    """
    n = len(result.samples)
    in_gland = 1.0 if n == 0 else 1.0 - result.out_of_gland_count / n
    components = {
        "coverage": result.coverage,
        "order": result.order_score,
        "in_gland": in_gland,
    }
    mass = weights.coverage + weights.order + weights.in_gland
    total = (
        weights.coverage * result.coverage
        + weights.order * result.order_score
        + weights.in_gland * in_gland
    )
    if result.target_hits:
        frac = sum(1 for t in result.target_hits if t.hit) / len(result.target_hits)
        components["targets"] = frac
        total += weights.targets * frac
        mass += weights.targets
    return SimulationGrade(score=total / mass, components=components)


# ---------------------------------------------------------------------------
# Exercise catalog and attempts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExerciseDef:
    id: str
    kind: str
    title: str = ""
    scenario_ref: str | None = None
    constraints: dict = field(default_factory=dict)
    grading: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GradingError(f"unknown exercise kind {self.kind!r}")

    @property
    def focus_zones(self) -> frozenset[int]:
        return frozenset(self.constraints.get("focus_zones", ()))


@dataclass(frozen=True)
class Attempt:
    user_id: str
    exercise_id: str
    timestamp_ms: int
    kind: str
    inputs: dict
    score: float
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise GradingError(f"score {self.score} outside [0, 1]")


# ---------------------------------------------------------------------------
# Recommendation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecommenderConfig:
    window: int = 5
    zone_hit_threshold: float = 0.5
    volume_score_threshold: float = 0.7
    beginner_sequence: tuple[str, ...] = ()


def recommend_exercises(history: list[Attempt], catalog: list[ExerciseDef],
                        config: RecommenderConfig = RecommenderConfig()) -> list[str]:
    """Deterministic weakness rules over the attempt history.

    Zones hit in fewer than half of the recent guided simulations pull in
    localization drills and focused simulations; weak volume estimates pull
    in volume exercises. Candidates are ordered worst weakness first, ties
    by exercise id. An empty history yields the configured beginner sequence.
    """
    if not history:
        return list(config.beginner_sequence)

    history = sorted(history, key=lambda a: a.timestamp_ms)
    recs: list[tuple[float, str]] = []

    sims = [a for a in history if a.kind == "guided_simulation"][-config.window:]
    if sims:
        rates = np.zeros(N_ZONES)
        for a in sims:
            hm = a.detail.get("zone_hit_map")
            if hm:
                rates += np.asarray(hm, dtype=float)
        rates /= len(sims)
        weak = {z for z in range(N_ZONES) if rates[z] < config.zone_hit_threshold}
        if weak:
            for ex in catalog:
                if ex.kind not in ("structure_localization", "guided_simulation"):
                    continue
                relevant = ex.focus_zones & weak
                if relevant:
                    recs.append((float(min(rates[z] for z in relevant)), ex.id))

    vols = [a for a in history if a.kind == "volume_estimate"]
    if vols:
        mean = sum(a.score for a in vols) / len(vols)
        if mean < config.volume_score_threshold:
            for ex in catalog:
                if ex.kind == "volume_estimate":
                    recs.append((mean, ex.id))

    recs.sort(key=lambda pair: (pair[0], pair[1]))
    out: list[str] = []
    for _, ex_id in recs:
        if ex_id not in out:
            out.append(ex_id)
    return out
