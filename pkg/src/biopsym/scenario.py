"""Training scenarios: one bundle of volume source, gland model, probe and
needle hardware, protocol order, and optional targets.

A scenario either generates its volume procedurally (seeded phantom) or
references a volume file, and analogously for the gland mesh. Catalogs are
plain JSON so instructors can add cases without touching code. Also hosts
the closed-form aiming solver used to script perfect protocol runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anatomy import (
    ProstateModel,
    ZoneAxes,
    generate_ellipsoid_mesh,
    load_mesh,
    prostate_model_from_mesh,
)
from .biopsy import DEFAULT_CANONICAL_ORDER, N_ZONES, NeedleSpec, Target
from .exercises import ExerciseDef
from .probe import ProbePose, ProbeSpec
from .volume import PhantomSpec, RectalArcSpec, UsVolume, generate_phantom, load_volume

ASSIST_VIEWS = ("coronal", "3d")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class EllipsoidGland:
    """Analytic gland: an ellipsoid tessellated at load time."""

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    subdivisions: int = 3

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ScenarioError("semi-axes must be positive")
        if self.subdivisions < 0:
            raise ScenarioError("subdivisions must be >= 0")


@dataclass(frozen=True)
class Scenario:
    id: str
    probe: ProbeSpec
    needle: NeedleSpec
    canonical_order: tuple[int, ...] = DEFAULT_CANONICAL_ORDER
    phantom: PhantomSpec | None = None
    volume_file: str | None = None
    gland: EllipsoidGland | None = None
    mesh_file: str | None = None
    targets: tuple[Target, ...] = ()
    # Base row toward the bladder: cranio-caudal role counts down from +z.
    zone_axes: ZoneAxes = ZoneAxes(cc_descending=True)
    assistance_views: tuple[str, ...] = ASSIST_VIEWS
    patient_position: str = "lithotomy"
    # Needle advance past the guide exit before firing; the gun's stop makes
    # this a per-setup constant rather than a live control.
    insertion_mm: float = 0.0
    title: str = ""

    def __post_init__(self):
        if (self.phantom is None) == (self.volume_file is None):
            raise ScenarioError("exactly one of phantom / volume_file required")
        if (self.gland is None) == (self.mesh_file is None):
            raise ScenarioError("exactly one of gland / mesh_file required")
        if sorted(self.canonical_order) != list(range(N_ZONES)):
            raise ScenarioError("canonical_order must be a permutation of 0..11")
        bad = [v for v in self.assistance_views if v not in ASSIST_VIEWS]
        if bad:
            raise ScenarioError(f"unknown assistance views: {bad}")
        if self.insertion_mm < 0:
            raise ScenarioError("insertion_mm must be >= 0")


def build_volume(sc: Scenario, base_dir: str | Path | None = None) -> UsVolume:
    if sc.phantom is not None:
        return generate_phantom(sc.phantom)
    path = Path(base_dir or ".") / sc.volume_file
    if not path.exists():
        raise ScenarioError(f"volume file not found: {path}")
    return load_volume(path)


def build_prostate(sc: Scenario, base_dir: str | Path | None = None) -> ProstateModel:
    if sc.gland is not None:
        mesh = generate_ellipsoid_mesh(sc.gland.center, sc.gland.semi_axes,
                                       sc.gland.subdivisions)
    else:
        path = Path(base_dir or ".") / sc.mesh_file
        if not path.exists():
            raise ScenarioError(f"mesh file not found: {path}")
        mesh = load_mesh(path)
    return prostate_model_from_mesh(mesh, axes=sc.zone_axes)


# ---------------------------------------------------------------------------
# Scripted aiming
# ---------------------------------------------------------------------------

def aim_pose_at(probe: ProbeSpec, needle: NeedleSpec, point,
                insertion_mm: float = 0.0) -> ProbePose:
    """Pose that centers the fired notch on ``point``.

    Closed form, valid only when the guide coincides with the probe axis
    (guide angle and offset zero): then every fire travels through the pivot
    and aiming reduces to pointing the axis at the target and backing the
    depth off so the notch midpoint lands at the right range.
    """
    if probe.guide_angle_deg != 0.0 or probe.guide_offset_mm != 0.0:
        raise ScenarioError("closed-form aiming needs an axial guide (angle=offset=0)")
    rel = np.asarray(point, dtype=float) - np.asarray(probe.pivot, dtype=float)
    dist = float(np.linalg.norm(rel))
    if dist < 1e-9:
        raise ScenarioError("cannot aim at the pivot itself")
    d = rel / dist
    pitch = math.asin(max(-1.0, min(1.0, -d[1])))
    yaw = math.atan2(d[0], d[2])
    notch_back = needle.notch_offset_mm + needle.notch_mm / 2.0
    depth = dist - probe.tip_offset_mm - insertion_mm - needle.throw_mm + notch_back
    pose = ProbePose(depth=depth, pitch=pitch, yaw=yaw, roll=0.0)
    lim_p = math.radians(probe.pitch_limit_deg)
    lim_y = math.radians(probe.yaw_limit_deg)
    if not (0.0 <= depth <= probe.d_max and abs(pitch) <= lim_p and abs(yaw) <= lim_y):
        raise ScenarioError(
            f"target {tuple(np.asarray(point, float))} unreachable: "
            f"depth={depth:.2f}, pitch={math.degrees(pitch):.1f} deg, "
            f"yaw={math.degrees(yaw):.1f} deg"
        )
    return pose


def twelve_core_script(sc: Scenario, prostate: ProstateModel) -> list[tuple[int, ProbePose]]:
    """(zone, pose) per protocol position, aimed at each zone cell center."""
    script = []
    for z in sc.canonical_order:
        cell = prostate.grid.cell_box(z)
        center = tuple((np.asarray(cell.min) + np.asarray(cell.max)) / 2.0)
        script.append((z, aim_pose_at(sc.probe, sc.needle, center, sc.insertion_mm)))
    return script


# ---------------------------------------------------------------------------
# JSON catalog
# ---------------------------------------------------------------------------

def _probe_to_dict(p: ProbeSpec) -> dict:
    return {
        "pivot": list(p.pivot), "d_max": p.d_max, "tip_offset_mm": p.tip_offset_mm,
        "guide_angle_deg": p.guide_angle_deg, "guide_offset_mm": p.guide_offset_mm,
        "pitch_limit_deg": p.pitch_limit_deg, "yaw_limit_deg": p.yaw_limit_deg,
    }


def _probe_from_dict(d: dict) -> ProbeSpec:
    return ProbeSpec(
        pivot=tuple(d["pivot"]), d_max=d["d_max"], tip_offset_mm=d["tip_offset_mm"],
        guide_angle_deg=d["guide_angle_deg"], guide_offset_mm=d["guide_offset_mm"],
        pitch_limit_deg=d["pitch_limit_deg"], yaw_limit_deg=d["yaw_limit_deg"],
    )


def _phantom_to_dict(p: PhantomSpec) -> dict:
    return {
        "seed": p.seed, "dims": list(p.dims), "spacing": list(p.spacing),
        "origin": list(p.origin), "prostate_center": list(p.prostate_center),
        "prostate_semi_axes": list(p.prostate_semi_axes),
        "bladder_center": list(p.bladder_center), "bladder_radius_mm": p.bladder_radius_mm,
        "rectal_arc": {
            "center_xy": list(p.rectal_arc.center_xy), "radius_mm": p.rectal_arc.radius_mm,
            "thickness_mm": p.rectal_arc.thickness_mm, "span_deg": p.rectal_arc.span_deg,
            "z_range": list(p.rectal_arc.z_range), "intensity": p.rectal_arc.intensity,
        },
        "speckle_contrast": p.speckle_contrast, "interior_mean": p.interior_mean,
        "exterior_mean": p.exterior_mean, "bladder_mean": p.bladder_mean,
    }


def _phantom_from_dict(d: dict) -> PhantomSpec:
    ra = d["rectal_arc"]
    return PhantomSpec(
        seed=d["seed"], dims=tuple(d["dims"]), spacing=tuple(d["spacing"]),
        origin=tuple(d["origin"]), prostate_center=tuple(d["prostate_center"]),
        prostate_semi_axes=tuple(d["prostate_semi_axes"]),
        bladder_center=tuple(d["bladder_center"]), bladder_radius_mm=d["bladder_radius_mm"],
        rectal_arc=RectalArcSpec(
            center_xy=tuple(ra["center_xy"]), radius_mm=ra["radius_mm"],
            thickness_mm=ra["thickness_mm"], span_deg=ra["span_deg"],
            z_range=tuple(ra["z_range"]), intensity=ra["intensity"],
        ),
        speckle_contrast=d["speckle_contrast"], interior_mean=d["interior_mean"],
        exterior_mean=d["exterior_mean"], bladder_mean=d["bladder_mean"],
    )


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "id": sc.id,
        "title": sc.title,
        "probe": _probe_to_dict(sc.probe),
        "needle": {"throw_mm": sc.needle.throw_mm, "notch_mm": sc.needle.notch_mm,
                   "notch_offset_mm": sc.needle.notch_offset_mm},
        "canonical_order": list(sc.canonical_order),
        "phantom": None if sc.phantom is None else _phantom_to_dict(sc.phantom),
        "volume_file": sc.volume_file,
        "gland": None if sc.gland is None else {
            "center": list(sc.gland.center), "semi_axes": list(sc.gland.semi_axes),
            "subdivisions": sc.gland.subdivisions,
        },
        "mesh_file": sc.mesh_file,
        "targets": [
            {"id": t.id, "center": list(t.center), "radius_mm": t.radius_mm}
            for t in sc.targets
        ],
        "zone_axes": {
            "cc_axis": sc.zone_axes.cc_axis, "side_axis": sc.zone_axes.side_axis,
            "ml_axis": sc.zone_axes.ml_axis, "cc_descending": sc.zone_axes.cc_descending,
            "side_descending": sc.zone_axes.side_descending,
            "ml_descending": sc.zone_axes.ml_descending,
        },
        "assistance_views": list(sc.assistance_views),
        "patient_position": sc.patient_position,
        "insertion_mm": sc.insertion_mm,
    }


def scenario_from_dict(d: dict) -> Scenario:
    g = d.get("gland")
    return Scenario(
        id=d["id"],
        title=d.get("title", ""),
        probe=_probe_from_dict(d["probe"]),
        needle=NeedleSpec(throw_mm=d["needle"]["throw_mm"], notch_mm=d["needle"]["notch_mm"],
                          notch_offset_mm=d["needle"]["notch_offset_mm"]),
        canonical_order=tuple(d["canonical_order"]),
        phantom=None if d.get("phantom") is None else _phantom_from_dict(d["phantom"]),
        volume_file=d.get("volume_file"),
        gland=None if g is None else EllipsoidGland(
            center=tuple(g["center"]), semi_axes=tuple(g["semi_axes"]),
            subdivisions=g["subdivisions"]),
        mesh_file=d.get("mesh_file"),
        targets=tuple(Target(id=t["id"], center=tuple(t["center"]), radius_mm=t["radius_mm"])
                      for t in d.get("targets", ())),
        zone_axes=ZoneAxes(**d["zone_axes"]) if "zone_axes" in d
        else ZoneAxes(cc_descending=True),
        assistance_views=tuple(d.get("assistance_views", ASSIST_VIEWS)),
        patient_position=d.get("patient_position", "lithotomy"),
        insertion_mm=d.get("insertion_mm", 0.0),
    )


def save_scenarios(scenarios: dict[str, Scenario], path) -> None:
    doc = {"scenarios": [scenario_to_dict(sc) for sc in scenarios.values()]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_scenarios(path) -> dict[str, Scenario]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    out: dict[str, Scenario] = {}
    for entry in doc["scenarios"]:
        sc = scenario_from_dict(entry)
        if sc.id in out:
            raise ScenarioError(f"duplicate scenario id {sc.id!r}")
        out[sc.id] = sc
    return out


# ---------------------------------------------------------------------------
# Built-in catalog
# ---------------------------------------------------------------------------

_GLAND = EllipsoidGland(center=(0.0, 5.0, 34.0), semi_axes=(17.0, 13.0, 15.0))


def default_scenarios() -> dict[str, Scenario]:
    """Three seeded cases: free-hand practice, a targeted variant, and a
    zero-angle-guide setup whose protocol can be scripted in closed form."""
    standard = Scenario(
        id="phantom-standard",
        title="Standard 12-core protocol, seeded phantom",
        probe=ProbeSpec(),
        needle=NeedleSpec(),
        phantom=PhantomSpec(),
        gland=_GLAND,
    )
    targeted = Scenario(
        id="phantom-targeted",
        title="12-core plus one suspicious focus",
        probe=ProbeSpec(),
        needle=NeedleSpec(),
        phantom=PhantomSpec(),
        gland=_GLAND,
        targets=(Target(id="focus-1", center=(6.0, 8.0, 30.0), radius_mm=4.0),),
    )
    scripted = Scenario(
        id="phantom-scripted",
        title="Axial-guide setup for scripted protocol checks",
        probe=ProbeSpec(guide_angle_deg=0.0),
        needle=NeedleSpec(throw_mm=12.0, notch_mm=9.0, notch_offset_mm=1.5),
        phantom=PhantomSpec(),
        gland=_GLAND,
    )
    return {sc.id: sc for sc in (standard, targeted, scripted)}


def default_exercises() -> dict[str, ExerciseDef]:
    """Built-in drills over the default phantom geometry."""
    ph = PhantomSpec()
    cx, cy, cz = _GLAND.center
    ax, ay, az = _GLAND.semi_axes
    # caliper axes: length = cranio-caudal (z), width = transverse (x),
    # height = antero-posterior (y)
    true_dims = [2 * az, 2 * ax, 2 * ay]
    third = 2 * az / 3.0

    def _region_row(zone_ids, label, z_center):
        return ExerciseDef(
            id=f"ex-localize-{label}", kind="structure_localization",
            title=f"Point at the {label} of the gland",
            constraints={"focus_zones": list(zone_ids)},
            grading={"region": {"label": label, "center": [cx, cy, z_center],
                                "radius_mm": third / 2.0},
                     "falloff_mm": 10.0},
        )

    defs = [
        ExerciseDef(id="ex-risk", kind="questionnaire",
                    title="Band the biopsy indication from patient data"),
        ExerciseDef(id="ex-volume", kind="volume_estimate",
                    title="Estimate gland volume with calipers",
                    grading={"true_dims_mm": true_dims, "rel_tolerance": 0.25}),
        ExerciseDef(id="ex-localize-bladder", kind="structure_localization",
                    title="Point at the bladder",
                    grading={"region": {"label": "bladder",
                                        "center": list(ph.bladder_center),
                                        "radius_mm": ph.bladder_radius_mm},
                             "falloff_mm": 10.0}),
        # base is the high-z row (toward the bladder), apex the low-z row
        _region_row(range(0, 4), "base", cz + third),
        _region_row(range(4, 8), "mid", cz),
        _region_row(range(8, 12), "apex", cz - third),
        ExerciseDef(id="ex-sim-standard", kind="guided_simulation",
                    title="Full 12-core simulation", scenario_ref="phantom-standard"),
        ExerciseDef(id="ex-sim-base", kind="guided_simulation",
                    title="Base-row focused simulation", scenario_ref="phantom-standard",
                    constraints={"focus_zones": list(range(0, 4))}),
        ExerciseDef(id="ex-sim-mid", kind="guided_simulation",
                    title="Mid-row focused simulation", scenario_ref="phantom-standard",
                    constraints={"focus_zones": list(range(4, 8))}),
        ExerciseDef(id="ex-sim-apex", kind="guided_simulation",
                    title="Apex-row focused simulation", scenario_ref="phantom-standard",
                    constraints={"focus_zones": list(range(8, 12))}),
    ]
    return {e.id: e for e in defs}
