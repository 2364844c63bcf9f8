"""Prostate geometry: triangle meshes, bounding boxes, the 12-zone grid,
and the point/segment predicates the scorer needs.

The zone layout follows the standard 12-core reading: thirds along the
cranio-caudal axis (base/mid/apex) times halves along the two remaining axes
(right/left, medial/lateral). Interval indices count from the box min corner;
boundaries belong to the higher cell, except the box max face which stays in
the last cell, so classification is total on the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(Exception):
    pass


class MeshFormatError(MeshError):
    """Unparseable OBJ content."""


class MeshInvariantError(MeshError):
    """Mesh is not a closed orientable triangle surface."""


# ---------------------------------------------------------------------------
# Mesh container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int32

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int32))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshInvariantError("vertices must be (n, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshInvariantError("triangles must be (m, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshInvariantError("triangle index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)


def validate_closed(mesh: TriMesh) -> None:
    """Require a closed orientable surface: every undirected edge shared by
    exactly two triangles, once in each direction."""
    directed: dict[tuple[int, int], int] = {}
    for a, b, c in mesh.triangles:
        for e in ((int(a), int(b)), (int(b), int(c)), (int(c), int(a))):
            if e[0] == e[1]:
                raise MeshInvariantError(f"degenerate edge {e}")
            directed[e] = directed.get(e, 0) + 1
    for (a, b), n in directed.items():
        if n != 1:
            raise MeshInvariantError(f"directed edge ({a},{b}) used {n} times")
        if directed.get((b, a), 0) != 1:
            raise MeshInvariantError(f"edge ({a},{b}) lacks an opposite twin")


def mesh_volume(mesh: TriMesh) -> float:
    """Signed enclosed volume (divergence theorem); positive for outward winding."""
    v = mesh.vertices
    t = mesh.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


# ---------------------------------------------------------------------------
# Axis-aligned boxes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Aabb:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(c) for c in self.min)
        hi = tuple(float(c) for c in self.max)
        if not all(l < h for l, h in zip(lo, hi)):
            raise ValueError(f"degenerate box: min {lo} !< max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def contains(self, p) -> bool:
        return all(l <= float(x) <= h for l, x, h in zip(self.min, p, self.max))

    def volume(self) -> float:
        return math.prod(h - l for l, h in zip(self.min, self.max))


def mesh_aabb(mesh: TriMesh) -> Aabb:
    if len(mesh.vertices) == 0:
        raise MeshInvariantError("empty mesh has no bounding box")
    return Aabb(min=tuple(mesh.vertices.min(axis=0)), max=tuple(mesh.vertices.max(axis=0)))


# ---------------------------------------------------------------------------
# Icosphere / ellipsoid generation
# ---------------------------------------------------------------------------

def generate_ellipsoid_mesh(center, semi_axes, subdivisions: int = 3) -> TriMesh:
    """Icosphere subdivided ``subdivisions`` times, scaled to the ellipsoid.

    Deterministic: 20 * 4^k faces, outward winding, vertices exactly on the
    analytic surface.
    """
    a, b, c = (float(s) for s in semi_axes)
    if min(a, b, c) <= 0:
        raise ValueError("semi-axes must be positive")
    if subdivisions < 1:
        raise ValueError("subdivisions must be >= 1")

    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    verts = [tuple(np.array(v) / np.linalg.norm(v)) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            idx = cache.get(key)
            if idx is None:
                m = (np.array(verts[i]) + np.array(verts[j])) / 2.0
                m /= np.linalg.norm(m)
                verts.append(tuple(m))
                idx = len(verts) - 1
                cache[key] = idx
            return idx

        new_faces = []
        for i, j, k in faces:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        faces = new_faces

    v = np.array(verts) * np.array([a, b, c]) + np.asarray(center, dtype=float)
    mesh = TriMesh(vertices=v, triangles=np.array(faces, dtype=np.int32))
    validate_closed(mesh)
    return mesh


def unit_sphere_sagitta(mesh: TriMesh, center, semi_axes) -> float:
    """Max facet deviation from the surface, measured in the scaled (unit
    sphere) space. Used as the geometric tolerance shell in tests."""
    q = (mesh.vertices - np.asarray(center, dtype=float)) / np.asarray(semi_axes, dtype=float)
    t = mesh.triangles
    a, b, c = q[t[:, 0]], q[t[:, 1]], q[t[:, 2]]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    d = np.abs(np.einsum("ij,ij->i", n, a))
    return float((1.0 - d).max())


# ---------------------------------------------------------------------------
# Point / segment vs mesh
# ---------------------------------------------------------------------------

_RAY_DIRECTIONS = [
    (0.57735026918962576, 0.57735026918962576, 0.57735026918962576),
    (0.85811633599999996, -0.49225651700000002, 0.14480663000000001),
    (-0.26726124191242440, 0.53452248382484879, 0.80178372573727319),
    (0.12309149097933272, -0.98473192783466177, 0.12309149097933272),
    (-0.71611487403943342, -0.30690556601118143, 0.62704094357824436),
    (0.44721359549995793, 0.89442719099991586, 0.0),
    (-0.57735026918962576, 0.57735026918962576, -0.57735026918962576),
    (0.98058067569092022, 0.19611613513818404, 0.0),
]


def _moller_trumbore(mesh: TriMesh, p, d):
    """Barycentric (u, w) and ray parameter t against every triangle, plus
    masks for near-parallel and coplanar triangles."""
    v = mesh.vertices
    tri = mesh.triangles
    v0 = v[tri[:, 0]]
    e1 = v[tri[:, 1]] - v0
    e2 = v[tri[:, 2]] - v0
    pvec = np.cross(np.broadcast_to(d, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    parallel = np.abs(det) <= 1e-12 * scale
    safe = np.where(parallel, 1.0, det)
    tvec = p - v0
    u = np.einsum("ij,ij->i", tvec, pvec) / safe
    qvec = np.cross(tvec, e1)
    w = np.einsum("j,ij->i", np.asarray(d, dtype=float), qvec) / safe
    t = np.einsum("ij,ij->i", e2, qvec) / safe
    n = np.cross(e1, e2)
    coplanar = parallel & (
        np.abs(np.einsum("ij,ij->i", n, tvec)) <= 1e-9 * scale
    )
    return u, w, t, parallel, coplanar


def _parity_attempt(mesh: TriMesh, p, d, eps: float = 1e-9):
    """One parity ray cast; returns (crossings, ambiguous). Ambiguous means a
    hit grazed an edge/vertex or a coplanar triangle was met, so the caller
    should retry along the next fallback direction."""
    u, w, t, parallel, coplanar = _moller_trumbore(mesh, p, d)
    candidate = ~parallel & (u >= -eps) & (w >= -eps) & (u + w <= 1.0 + eps) & (t > -eps)
    strict = ~parallel & (u > eps) & (w > eps) & (u + w < 1.0 - eps) & (t > eps)
    ambiguous = bool((candidate & ~strict).any() or coplanar.any())
    return int(strict.sum()), ambiguous


def point_in_mesh(mesh: TriMesh, p) -> bool:
    """Ray-crossing parity test with deterministic perturbation: grazing hits
    re-cast along the next fixed fallback direction."""
    p = np.asarray(p, dtype=float)
    crossings = 0
    for d in _RAY_DIRECTIONS:
        crossings, ambiguous = _parity_attempt(mesh, p, np.array(d))
        if not ambiguous:
            return crossings % 2 == 1
    # every fallback ray grazed; keep the last parity rather than failing
    return crossings % 2 == 1


def segment_triangle_params(mesh: TriMesh, p0, p1, tol: float = 1e-9) -> np.ndarray:
    """Sorted unique parameters t in (0, 1) where the open segment crosses
    the surface; parameters closer than ``tol`` collapse to one."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    u, w, tt, parallel, _ = _moller_trumbore(mesh, p0, d)
    inside = ~parallel & (u >= 0.0) & (w >= 0.0) & (u + w <= 1.0)
    ts = np.sort(tt[inside & (tt > tol) & (tt < 1.0 - tol)])
    if len(ts) == 0:
        return ts
    keep = [float(ts[0])]
    for t in ts[1:]:
        if float(t) - keep[-1] > tol:
            keep.append(float(t))
    return np.array(keep)


@dataclass
class ChordResult:
    """Intersection of a segment with the mesh interior."""

    length_mm: float
    t_spans: list[tuple[float, float]]  # sub-intervals of [0,1] inside
    spans: list[tuple[np.ndarray, np.ndarray]]  # world entry/exit points


def inside_length(mesh: TriMesh, p0, p1) -> ChordResult:
    """Total intra-mesh length of segment p0-p1 plus the entry/exit points.

    Splits the segment at surface crossings and classifies each piece by its
    midpoint, which keeps the result stable under grazing intersections.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    seg_len = float(np.linalg.norm(p1 - p0))
    if seg_len == 0.0:
        raise ValueError("degenerate segment")
    breaks = [0.0] + list(segment_triangle_params(mesh, p0, p1)) + [1.0]
    t_spans = []
    for ta, tb in zip(breaks[:-1], breaks[1:]):
        mid = p0 + ((ta + tb) / 2.0) * (p1 - p0)
        if point_in_mesh(mesh, mid):
            t_spans.append((ta, tb))
    merged: list[tuple[float, float]] = []
    for ta, tb in t_spans:
        if merged and abs(ta - merged[-1][1]) < 1e-12:
            merged[-1] = (merged[-1][0], tb)
        else:
            merged.append((ta, tb))
    spans = [(p0 + ta * (p1 - p0), p0 + tb * (p1 - p0)) for ta, tb in merged]
    length = sum(tb - ta for ta, tb in merged) * seg_len
    return ChordResult(length_mm=length, t_spans=merged, spans=spans)


# ---------------------------------------------------------------------------
# 12-zone grid
# ---------------------------------------------------------------------------

CC_NAMES = ("base", "mid", "apex")
SIDE_NAMES = ("right", "left")
ML_NAMES = ("medial", "lateral")

N_ZONES = 12


@dataclass(frozen=True)
class ZoneAxes:
    """Which world axis plays each anatomical role (must be a permutation).

    Role indices count from the box min face by default; a ``*_descending``
    flag counts that role from the max face instead, so e.g. the base row can
    sit at the high-coordinate (bladder) end of the cranio-caudal axis.
    """

    cc_axis: int = 2
    side_axis: int = 0
    ml_axis: int = 1
    cc_descending: bool = False
    side_descending: bool = False
    ml_descending: bool = False

    def __post_init__(self):
        if sorted((self.cc_axis, self.side_axis, self.ml_axis)) != [0, 1, 2]:
            raise ValueError("zone axes must be a permutation of 0, 1, 2")


def _edges(lo: float, hi: float, n: int) -> np.ndarray:
    e = lo + np.arange(n + 1) * ((hi - lo) / n)
    e[0] = lo
    e[-1] = hi
    return e


@dataclass(frozen=True)
class ZoneGrid:
    """3 x 2 x 2 tiling of a box; id = cc*4 + side*2 + ml."""

    box: Aabb
    axes: ZoneAxes = field(default_factory=ZoneAxes)

    def __post_init__(self):
        lo, hi = self.box.min, self.box.max
        object.__setattr__(self, "_cc_edges", _edges(lo[self.axes.cc_axis], hi[self.axes.cc_axis], 3))
        object.__setattr__(self, "_side_edges", _edges(lo[self.axes.side_axis], hi[self.axes.side_axis], 2))
        object.__setattr__(self, "_ml_edges", _edges(lo[self.axes.ml_axis], hi[self.axes.ml_axis], 2))

    def role_edges(self) -> dict[str, np.ndarray]:
        return {"cc": self._cc_edges, "side": self._side_edges, "ml": self._ml_edges}

    def cell_box(self, zone_id: int) -> Aabb:
        cc, rem = divmod(int(zone_id), 4)
        side, ml = divmod(rem, 2)
        lo = [0.0, 0.0, 0.0]
        hi = [0.0, 0.0, 0.0]
        for role_edges, idx, axis, desc in (
            (self._cc_edges, cc, self.axes.cc_axis, self.axes.cc_descending),
            (self._side_edges, side, self.axes.side_axis, self.axes.side_descending),
            (self._ml_edges, ml, self.axes.ml_axis, self.axes.ml_descending),
        ):
            if desc:
                idx = len(role_edges) - 2 - idx
            lo[axis] = float(role_edges[idx])
            hi[axis] = float(role_edges[idx + 1])
        return Aabb(min=tuple(lo), max=tuple(hi))

    def zone_name(self, zone_id: int) -> str:
        cc, rem = divmod(int(zone_id), 4)
        side, ml = divmod(rem, 2)
        return f"{CC_NAMES[cc]}-{SIDE_NAMES[side]}-{ML_NAMES[ml]}"


def build_zone_grid(box: Aabb, axes: ZoneAxes | None = None) -> ZoneGrid:
    return ZoneGrid(box=box, axes=axes or ZoneAxes())


def _interval_index(edges: np.ndarray, val: float) -> int | None:
    if val < edges[0] or val > edges[-1]:
        return None
    idx = int(np.searchsorted(edges, val, side="right")) - 1
    n = len(edges) - 1
    return n - 1 if idx >= n else idx


def zone_of_point(grid: ZoneGrid, p) -> int | None:
    """Zone id of a world point, or None outside the box."""
    cc = _interval_index(grid._cc_edges, float(p[grid.axes.cc_axis]))
    side = _interval_index(grid._side_edges, float(p[grid.axes.side_axis]))
    ml = _interval_index(grid._ml_edges, float(p[grid.axes.ml_axis]))
    if cc is None or side is None or ml is None:
        return None
    if grid.axes.cc_descending:
        cc = 2 - cc
    if grid.axes.side_descending:
        side = 1 - side
    if grid.axes.ml_descending:
        ml = 1 - ml
    return cc * 4 + side * 2 + ml


def zone_of_points(grid: ZoneGrid, pts: np.ndarray) -> np.ndarray:
    """Vectorized zone ids for an (n, 3) array; -1 marks outside."""
    pts = np.asarray(pts, dtype=float)
    out = np.full(len(pts), -1, dtype=np.int64)
    idxs = []
    for edges, axis, n, desc in (
        (grid._cc_edges, grid.axes.cc_axis, 3, grid.axes.cc_descending),
        (grid._side_edges, grid.axes.side_axis, 2, grid.axes.side_descending),
        (grid._ml_edges, grid.axes.ml_axis, 2, grid.axes.ml_descending),
    ):
        val = pts[:, axis]
        idx = np.searchsorted(edges, val, side="right") - 1
        idx = np.where(val == edges[-1], n - 1, idx)
        if desc:
            idx = n - 1 - idx
        idx = np.where((val < edges[0]) | (val > edges[-1]), -1, idx)
        idxs.append(idx)
    cc, side, ml = idxs
    ok = (cc >= 0) & (side >= 0) & (ml >= 0)
    out[ok] = cc[ok] * 4 + side[ok] * 2 + ml[ok]
    return out


# ---------------------------------------------------------------------------
# Assembled prostate model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProstateModel:
    mesh: TriMesh
    box: Aabb
    grid: ZoneGrid


def prostate_model_from_mesh(mesh: TriMesh, axes: ZoneAxes | None = None) -> ProstateModel:
    box = mesh_aabb(mesh)
    return ProstateModel(mesh=mesh, box=box, grid=build_zone_grid(box, axes))


# ---------------------------------------------------------------------------
# OBJ subset I/O
# ---------------------------------------------------------------------------

def mesh_to_obj(mesh: TriMesh) -> str:
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
    lines += [f"f {int(a) + 1} {int(b) + 1} {int(c) + 1}" for a, b, c in mesh.triangles]
    return "\n".join(lines) + "\n"


def save_mesh(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(mesh_to_obj(mesh))


def load_mesh(path) -> TriMesh:
    """OBJ subset: ``v x y z`` and triangular ``f i j k`` (1-based) only."""
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v" and len(parts) == 4:
                try:
                    verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError as exc:
                    raise MeshFormatError(f"line {lineno}: bad vertex {line!r}") from exc
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshFormatError(f"line {lineno}: only triangular faces supported")
                try:
                    idx = tuple(int(p) - 1 for p in parts[1:])
                except ValueError as exc:
                    raise MeshFormatError(f"line {lineno}: bad face {line!r}") from exc
                faces.append(idx)
            else:
                raise MeshFormatError(f"line {lineno}: unsupported OBJ element {parts[0]!r}")
    if not verts or not faces:
        raise MeshFormatError("mesh file has no vertices or no faces")
    return TriMesh(vertices=np.array(verts), triangles=np.array(faces, dtype=np.int32))
