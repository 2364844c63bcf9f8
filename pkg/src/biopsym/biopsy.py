"""Needle firing along the guide line and scoring of sample sequences.

A fire advances a spring-gun needle ``throw_mm`` past the current insertion
point; the tissue actually captured is the notch segment just behind the tip.
Zones are credited only where an intra-gland portion of the notch overlaps a
zone cell, so crossing a zone outside the gland earns nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .anatomy import N_ZONES, ProstateModel, inside_length, zone_of_point
from .probe import GuideLine, ProbePose

OVERLAP_TOL_MM = 1e-9


@dataclass(frozen=True)
class NeedleSpec:
    """18G spring-gun geometry; defaults mirror a common biopsy gun."""

    throw_mm: float = 22.0
    notch_mm: float = 17.0
    notch_offset_mm: float = 3.0

    def __post_init__(self):
        if self.notch_mm <= 0:
            raise ValueError("notch_mm must be positive")
        if self.notch_offset_mm < 0:
            raise ValueError("notch_offset_mm must be >= 0")
        if self.notch_offset_mm + self.notch_mm > self.throw_mm + 1e-9:
            raise ValueError("notch must fit within the thrown length")


@dataclass(frozen=True)
class Target:
    """Extra sampling site, e.g. a suspicious MRI finding projected to world."""

    id: str
    center: tuple[float, float, float]
    radius_mm: float

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ValueError("target radius must be positive")


@dataclass(frozen=True)
class BiopsySample:
    order_index: int
    fire_pose: ProbePose
    insertion_mm: float
    segment: tuple[tuple[float, float, float], tuple[float, float, float]]
    inside_mm: float
    zones: frozenset[int]
    out_of_gland: bool
    timestamp_ms: int = 0


@dataclass(frozen=True)
class TargetHit:
    target_id: str
    hit: bool
    min_distance_mm: float | None  # None when no samples exist


@dataclass(frozen=True)
class ProtocolResult:
    samples: tuple[BiopsySample, ...]
    coverage: float
    zone_hit_map: tuple[bool, ...]
    out_of_gland_count: int
    order_score: float
    target_hits: tuple[TargetHit, ...]
    total_inside_mm: float


def segment_point_distance(seg, p) -> float:
    """Distance from ``p`` to the closed segment ``seg = (p0, p1)``."""
    return geometry.segment_point_distance(seg[0], seg[1], p)


def _clip_span_to_box(p0, d, ta, tb, box) -> float | None:
    """Clip parametric span [ta, tb] of p0 + t*d against an Aabb; returns the
    midpoint parameter of the clipped span, or None when the overlap is
    shorter than the tolerance."""
    lo, hi = box.min, box.max
    for axis in range(3):
        da = d[axis]
        pa = p0[axis]
        if abs(da) < 1e-15:
            if not (lo[axis] <= pa <= hi[axis]):
                return None
            continue
        t0 = (lo[axis] - pa) / da
        t1 = (hi[axis] - pa) / da
        if t0 > t1:
            t0, t1 = t1, t0
        ta = max(ta, t0)
        tb = min(tb, t1)
        if ta >= tb:
            return None
    seg_len = float(np.linalg.norm(d))
    if (tb - ta) * seg_len <= OVERLAP_TOL_MM:
        return None
    return (ta + tb) / 2.0


def _zones_of_spans(prostate: ProstateModel, p0, p1, t_spans) -> frozenset[int]:
    """Zone ids whose cells overlap any intra-gland sub-interval; each overlap
    is classified by its midpoint so shared cell faces resolve one way."""
    d = np.asarray(p1, dtype=float) - np.asarray(p0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    zones: set[int] = set()
    for ta, tb in t_spans:
        for zid in range(N_ZONES):
            tmid = _clip_span_to_box(p0, d, ta, tb, prostate.grid.cell_box(zid))
            if tmid is None:
                continue
            z = zone_of_point(prostate.grid, p0 + tmid * d)
            if z is not None:
                zones.add(z)
    return frozenset(zones)


def fire_biopsy(needle: NeedleSpec, guide: GuideLine, insertion_mm: float,
                prostate: ProstateModel, *, order_index: int = 0,
                fire_pose: ProbePose | None = None,
                timestamp_ms: int = 0) -> BiopsySample:
    """Fire once along the guide at the given pre-fire insertion depth."""
    if insertion_mm < 0:
        raise ValueError("insertion_mm must be >= 0")
    origin = np.array(guide.origin)
    direction = np.array(guide.direction)
    tip = origin + (insertion_mm + needle.throw_mm) * direction
    p0 = tip - (needle.notch_offset_mm + needle.notch_mm) * direction
    p1 = tip - needle.notch_offset_mm * direction
    chord = inside_length(prostate.mesh, p0, p1)
    inside_mm = float(chord.length_mm) if chord.length_mm > OVERLAP_TOL_MM else 0.0
    zones = _zones_of_spans(prostate, p0, p1, chord.t_spans) if inside_mm else frozenset()
    return BiopsySample(
        order_index=order_index,
        fire_pose=fire_pose if fire_pose is not None else ProbePose(0.0, 0.0, 0.0, 0.0),
        insertion_mm=float(insertion_mm),
        segment=(tuple(float(v) for v in p0), tuple(float(v) for v in p1)),
        inside_mm=inside_mm,
        zones=zones,
        out_of_gland=inside_mm == 0.0,
        timestamp_ms=timestamp_ms,
    )


def rescore_sample(prostate: ProstateModel, sample: BiopsySample) -> BiopsySample:
    """Recompute inside length and zone attribution from the stored segment,
    e.g. to re-score a recorded session against a (possibly different) gland."""
    p0, p1 = sample.segment
    chord = inside_length(prostate.mesh, p0, p1)
    inside_mm = float(chord.length_mm) if chord.length_mm > OVERLAP_TOL_MM else 0.0
    zones = _zones_of_spans(prostate, p0, p1, chord.t_spans) if inside_mm else frozenset()
    return BiopsySample(
        order_index=sample.order_index,
        fire_pose=sample.fire_pose,
        insertion_mm=sample.insertion_mm,
        segment=sample.segment,
        inside_mm=inside_mm,
        zones=zones,
        out_of_gland=inside_mm == 0.0,
        timestamp_ms=sample.timestamp_ms,
    )


def first_hit_sequence(samples, canonical_order) -> list[int]:
    """Zones in the order they were first hit. Zones first hit by the same
    sample enter in canonical order, so simultaneity never counts against."""
    canon_pos = {z: i for i, z in enumerate(canonical_order)}
    seen: set[int] = set()
    seq: list[int] = []
    for s in samples:
        new = sorted(s.zones - seen, key=lambda z: canon_pos[z])
        seq.extend(new)
        seen.update(new)
    return seq


def order_agreement(seq: list[int], canonical_order) -> float:
    """Normalized Kendall-tau agreement between the observed first-hit order
    and the canonical order restricted to the zones actually hit: 1.0 for
    perfect order, 0.0 for full reversal; fewer than two zones is vacuously
    1.0."""
    k = len(seq)
    if k < 2:
        return 1.0
    rank = {z: i for i, z in enumerate(z for z in canonical_order if z in set(seq))}
    discordant = 0
    for i in range(k):
        for j in range(i + 1, k):
            if rank[seq[i]] > rank[seq[j]]:
                discordant += 1
    pairs = k * (k - 1) // 2
    return 1.0 - discordant / pairs


def evaluate_protocol(samples, canonical_order, targets=()) -> ProtocolResult:
    """Score a full biopsy sequence against the canonical 12-zone protocol."""
    canonical_order = list(canonical_order)
    if sorted(canonical_order) != list(range(N_ZONES)):
        raise ValueError("canonical_order must be a permutation of 0..11")
    samples = tuple(samples)

    hit_map = [False] * N_ZONES
    for s in samples:
        for z in s.zones:
            hit_map[z] = True
    coverage = sum(hit_map) / N_ZONES

    seq = first_hit_sequence(samples, canonical_order)
    order_score = order_agreement(seq, canonical_order)

    hits = []
    for t in targets:
        if samples:
            dmin = float(min(segment_point_distance(s.segment, t.center) for s in samples))
            hits.append(TargetHit(target_id=t.id, hit=bool(dmin <= t.radius_mm),
                                  min_distance_mm=dmin))
        else:
            hits.append(TargetHit(target_id=t.id, hit=False, min_distance_mm=None))

    return ProtocolResult(
        samples=samples,
        coverage=coverage,
        zone_hit_map=tuple(hit_map),
        out_of_gland_count=sum(1 for s in samples if s.out_of_gland),
        order_score=order_score,
        target_hits=tuple(hits),
        total_inside_mm=sum(s.inside_mm for s in samples),
    )


# the standard sweep: right side base-to-apex medial-then-lateral, then left
DEFAULT_CANONICAL_ORDER = (0, 1, 4, 5, 8, 9, 2, 3, 6, 7, 10, 11)
