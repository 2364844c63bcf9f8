"""Volumetric image engine: storage, trilinear sampling, oblique reslicing,
fan masking, procedural phantoms, and USVOL/PGM file I/O.

Conventions
-----------
* A volume stores 8-bit intensities on a regular grid. ``voxels`` has shape
  (nz, ny, nx) so the C-order flat layout is x-fastest.
* ``origin`` is the world position (mm) of the *center* of voxel (0, 0, 0);
  voxel (ix, iy, iz) is centered at ``origin + (ix*sx, iy*sy, iz*sz)``.
* Sampling outside the voxel-center hull pads with 0 (ultrasound black).
* Interpolation runs in float64; values are rounded half-up only when an
  image is materialized.

The slice kernel is JIT-compiled (numba) but keeps the exact expression
tree of :func:`sample_trilinear`, so a resliced pixel is bit-identical to a
direct per-pixel sample. Tests rely on that equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .geometry import UNIT_TOL


class VolumeError(Exception):
    """Base class for volume-layer failures."""


class VolumeInvariantError(VolumeError):
    """Dims/spacing/payload-shape invariant violated."""


class HeaderFormatError(VolumeError):
    """USVOL header line is malformed."""


class PayloadSizeError(VolumeError):
    """USVOL payload shorter (truncated) or longer than the header claims."""


class PlaneError(VolumeError):
    """Degenerate slice plane (non-unit or non-orthogonal axes)."""


class SectorMaskError(VolumeError):
    """Invalid fan-mask parameters."""


class PhantomGeometryError(VolumeError):
    """Phantom structure would not fit inside the volume."""


# ---------------------------------------------------------------------------
# Volume container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UsVolume:
    """3D ultrasound intensity grid with physical spacing.

    Immutable after construction; the voxel buffer is marked read-only so a
    shared volume can be resliced concurrently.
    """

    dims: tuple[int, int, int]  # (nx, ny, nz)
    spacing: tuple[float, float, float]  # mm per voxel step
    origin: tuple[float, float, float]  # world mm of voxel (0,0,0) center
    voxels: np.ndarray  # uint8, shape (nz, ny, nx)

    def __post_init__(self):
        nx, ny, nz = (int(d) for d in self.dims)
        if min(nx, ny, nz) < 2:
            raise VolumeInvariantError(f"all dims must be >= 2, got {self.dims}")
        if min(self.spacing) <= 0:
            raise VolumeInvariantError(f"spacing must be > 0, got {self.spacing}")
        vox = np.ascontiguousarray(self.voxels, dtype=np.uint8)
        if vox.size != nx * ny * nz:
            raise VolumeInvariantError(
                f"voxel count {vox.size} != nx*ny*nz = {nx * ny * nz}"
            )
        vox = vox.reshape(nz, ny, nx)
        vox.flags.writeable = False
        object.__setattr__(self, "dims", (nx, ny, nz))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "_flat", vox.reshape(-1))

    def value_at(self, ix: int, iy: int, iz: int) -> int:
        return int(self.voxels[iz, iy, ix])

    def voxel_center(self, ix: int, iy: int, iz: int) -> np.ndarray:
        o, s = self.origin, self.spacing
        return np.array([o[0] + ix * s[0], o[1] + iy * s[1], o[2] + iz * s[2]])

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Voxel-center hull: (min corner, max corner) in world mm."""
        lo = np.array(self.origin)
        hi = lo + (np.array(self.dims) - 1) * np.array(self.spacing)
        return lo, hi


# ---------------------------------------------------------------------------
# Trilinear sampling
# ---------------------------------------------------------------------------

def sample_trilinear(vol: UsVolume, p) -> float:
    """Trilinear blend of the 8 voxel centers surrounding world point ``p``.

    Points outside the voxel-center hull return 0.0. The arithmetic here is
    the reference expression tree; the slice kernel reproduces it verbatim.
    """
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    ox, oy, oz = vol.origin
    fx = (float(p[0]) - ox) / sx
    fy = (float(p[1]) - oy) / sy
    fz = (float(p[2]) - oz) / sz
    if fx < 0.0 or fx > nx - 1 or fy < 0.0 or fy > ny - 1 or fz < 0.0 or fz > nz - 1:
        return 0.0
    x0 = int(fx)
    y0 = int(fy)
    z0 = int(fz)
    if x0 > nx - 2:
        x0 = nx - 2
    if y0 > ny - 2:
        y0 = ny - 2
    if z0 > nz - 2:
        z0 = nz - 2
    tx = fx - x0
    ty = fy - y0
    tz = fz - z0
    f = vol._flat
    base = (z0 * ny + y0) * nx + x0
    c000 = f[base].item()
    c100 = f[base + 1].item()
    c010 = f[base + nx].item()
    c110 = f[base + nx + 1].item()
    c001 = f[base + nx * ny].item()
    c101 = f[base + nx * ny + 1].item()
    c011 = f[base + nx * ny + nx].item()
    c111 = f[base + nx * ny + nx + 1].item()
    c00 = c000 * (1.0 - tx) + c100 * tx
    c10 = c010 * (1.0 - tx) + c110 * tx
    c01 = c001 * (1.0 - tx) + c101 * tx
    c11 = c011 * (1.0 - tx) + c111 * tx
    c0 = c00 * (1.0 - ty) + c10 * ty
    c1 = c01 * (1.0 - ty) + c11 * ty
    return c0 * (1.0 - tz) + c1 * tz


@numba.njit(cache=True)
def _slice_kernel(flat, nx, ny, nz, sx, sy, sz, ox, oy, oz,
                  cx, cy, cz, ux, uy, uz, vx, vy, vz,
                  mmu, mmv, px_w, px_h, out):  # pragma: no cover - jitted
    for j in range(px_h):
        off_v = (j + 0.5 - px_h / 2) * mmv
        for i in range(px_w):
            off_u = (i + 0.5 - px_w / 2) * mmu
            wx = cx + off_u * ux + off_v * vx
            wy = cy + off_u * uy + off_v * vy
            wz = cz + off_u * uz + off_v * vz
            fx = (wx - ox) / sx
            fy = (wy - oy) / sy
            fz = (wz - oz) / sz
            if fx < 0.0 or fx > nx - 1 or fy < 0.0 or fy > ny - 1 or fz < 0.0 or fz > nz - 1:
                out[j, i] = 0
                continue
            x0 = int(fx)
            y0 = int(fy)
            z0 = int(fz)
            if x0 > nx - 2:
                x0 = nx - 2
            if y0 > ny - 2:
                y0 = ny - 2
            if z0 > nz - 2:
                z0 = nz - 2
            tx = fx - x0
            ty = fy - y0
            tz = fz - z0
            base = (z0 * ny + y0) * nx + x0
            c000 = flat[base]
            c100 = flat[base + 1]
            c010 = flat[base + nx]
            c110 = flat[base + nx + 1]
            c001 = flat[base + nx * ny]
            c101 = flat[base + nx * ny + 1]
            c011 = flat[base + nx * ny + nx]
            c111 = flat[base + nx * ny + nx + 1]
            c00 = c000 * (1.0 - tx) + c100 * tx
            c10 = c010 * (1.0 - tx) + c110 * tx
            c01 = c001 * (1.0 - tx) + c101 * tx
            c11 = c011 * (1.0 - tx) + c111 * tx
            c0 = c00 * (1.0 - ty) + c10 * ty
            c1 = c01 * (1.0 - ty) + c11 * ty
            val = c0 * (1.0 - tz) + c1 * tz
            out[j, i] = np.uint8(math.floor(val + 0.5))


# ---------------------------------------------------------------------------
# Slice plane / image
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlicePlane:
    """Oblique imaging plane: center point plus orthonormal in-plane axes."""

    center: tuple[float, float, float]
    u_axis: tuple[float, float, float]
    v_axis: tuple[float, float, float]
    width_mm: float
    height_mm: float
    px_w: int
    px_h: int

    def __post_init__(self):
        u = np.array(self.u_axis, dtype=float)
        v = np.array(self.v_axis, dtype=float)
        if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL or abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise PlaneError("plane axes must be unit length")
        if abs(float(u.dot(v))) > UNIT_TOL:
            raise PlaneError("plane axes must be orthogonal")
        if self.width_mm <= 0 or self.height_mm <= 0:
            raise PlaneError("plane extent must be positive")
        if self.px_w < 2 or self.px_h < 2:
            raise PlaneError("pixel dims must be >= 2")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "u_axis", tuple(float(c) for c in u))
        object.__setattr__(self, "v_axis", tuple(float(c) for c in v))

    @property
    def mm_per_px_u(self) -> float:
        return self.width_mm / self.px_w

    @property
    def mm_per_px_v(self) -> float:
        return self.height_mm / self.px_h

    def pixel_to_world(self, i: int, j: int) -> tuple[float, float, float]:
        """World position of the center of pixel (i, j); the kernel's formula."""
        off_u = (i + 0.5 - self.px_w / 2) * self.mm_per_px_u
        off_v = (j + 0.5 - self.px_h / 2) * self.mm_per_px_v
        cx, cy, cz = self.center
        ux, uy, uz = self.u_axis
        vx, vy, vz = self.v_axis
        return (
            cx + off_u * ux + off_v * vx,
            cy + off_u * uy + off_v * vy,
            cz + off_u * uz + off_v * vz,
        )


@dataclass
class SliceImage:
    """Resampled 2D image; ``pixels``/``mask`` are (px_h, px_w) row-major."""

    px_w: int
    px_h: int
    mm_per_px_u: float
    mm_per_px_v: float
    pixels: np.ndarray  # uint8
    mask: np.ndarray  # bool, True = inside sector

    def __post_init__(self):
        if self.pixels.shape != (self.px_h, self.px_w):
            raise VolumeInvariantError("pixel buffer shape mismatch")
        if self.mask.shape != self.pixels.shape:
            raise VolumeInvariantError("mask shape mismatch")


def extract_slice(vol: UsVolume, plane: SlicePlane) -> SliceImage:
    """Resample ``vol`` on ``plane``; every pixel equals a direct
    :func:`sample_trilinear` at that pixel's world center, rounded half-up.

    The mask comes back all-true; fan masking is a separate step.
    """
    nx, ny, nz = vol.dims
    out = np.empty((plane.px_h, plane.px_w), dtype=np.uint8)
    _slice_kernel(
        vol._flat, nx, ny, nz,
        vol.spacing[0], vol.spacing[1], vol.spacing[2],
        vol.origin[0], vol.origin[1], vol.origin[2],
        plane.center[0], plane.center[1], plane.center[2],
        plane.u_axis[0], plane.u_axis[1], plane.u_axis[2],
        plane.v_axis[0], plane.v_axis[1], plane.v_axis[2],
        plane.mm_per_px_u, plane.mm_per_px_v,
        plane.px_w, plane.px_h, out,
    )
    return SliceImage(
        px_w=plane.px_w,
        px_h=plane.px_h,
        mm_per_px_u=plane.mm_per_px_u,
        mm_per_px_v=plane.mm_per_px_v,
        pixels=out,
        mask=np.ones_like(out, dtype=bool),
    )


def apply_sector_mask(img: SliceImage, fov_deg: float, r_min_mm: float,
                      r_max_mm: float, apex_px: tuple[float, float]) -> SliceImage:
    """Zero pixels outside an annular fan anchored at ``apex_px``.

    The fan opens "up" (toward row 0): pixel center (i+0.5, j+0.5) is kept iff
    its mm offset from the apex satisfies ``r_min <= r <= r_max`` and
    ``-dy >= r * cos(fov/2)`` (the half-angle test against the -v direction).
    Returns a new image; the input is untouched.
    """
    if not (0.0 < fov_deg <= 360.0):
        raise SectorMaskError(f"fov_deg must be in (0, 360], got {fov_deg}")
    if r_min_mm < 0 or r_max_mm <= r_min_mm:
        raise SectorMaskError(f"need 0 <= r_min < r_max, got {r_min_mm}, {r_max_mm}")
    ax, ay = float(apex_px[0]), float(apex_px[1])
    dx = (np.arange(img.px_w) + 0.5 - ax) * img.mm_per_px_u
    dy = (np.arange(img.px_h) + 0.5 - ay) * img.mm_per_px_v
    dxg = dx[None, :]
    dyg = dy[:, None]
    r = np.hypot(dxg, dyg)
    cos_half = math.cos(math.radians(fov_deg) / 2.0)
    inside = (r >= r_min_mm) & (r <= r_max_mm) & (-dyg >= r * cos_half)
    pixels = np.where(inside, img.pixels, np.uint8(0))
    return SliceImage(
        px_w=img.px_w,
        px_h=img.px_h,
        mm_per_px_u=img.mm_per_px_u,
        mm_per_px_v=img.mm_per_px_v,
        pixels=pixels,
        mask=img.mask & inside,
    )


# ---------------------------------------------------------------------------
# Procedural phantom
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectalArcSpec:
    """Bright arc-shaped shell around the probe canal (z axis by default)."""

    center_xy: tuple[float, float] = (0.0, 0.0)
    radius_mm: float = 6.0
    thickness_mm: float = 2.0
    span_deg: float = 200.0
    z_range: tuple[float, float] = (0.0, 60.0)
    intensity: float = 225.0


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a synthetic patient volume.

    The prostate is a hypoechoic ellipsoid, the bladder an anechoic sphere,
    the rectal wall a bright arc; multiplicative speckle goes on top. Same
    seed, same volume, bit for bit.
    """

    seed: int = 20110915
    dims: tuple[int, int, int] = (128, 128, 128)
    spacing: tuple[float, float, float] = (0.5, 0.5, 0.5)
    origin: tuple[float, float, float] = (-31.75, -31.75, 0.0)
    prostate_center: tuple[float, float, float] = (0.0, 5.0, 34.0)
    prostate_semi_axes: tuple[float, float, float] = (17.0, 13.0, 15.0)
    bladder_center: tuple[float, float, float] = (0.0, 14.0, 56.0)
    bladder_radius_mm: float = 7.0
    rectal_arc: RectalArcSpec = field(default_factory=RectalArcSpec)
    speckle_contrast: float = 0.35
    interior_mean: float = 70.0
    exterior_mean: float = 150.0
    bladder_mean: float = 4.0

    def __post_init__(self):
        if min(self.prostate_semi_axes) <= 0:
            raise ValueError("prostate semi-axes must be positive")
        if self.bladder_radius_mm <= 0:
            raise ValueError("bladder radius must be positive")
        if not (0.0 <= self.speckle_contrast <= 1.0):
            raise ValueError("speckle contrast must be in [0, 1]")
        if not (0 <= self.interior_mean < self.exterior_mean <= 255):
            raise ValueError("need interior mean < exterior mean within [0, 255]")


def _check_inside(lo, hi, bmin, bmax, what: str):
    if np.any(np.asarray(bmin) < lo) or np.any(np.asarray(bmax) > hi):
        raise PhantomGeometryError(
            f"{what} extent [{bmin}, {bmax}] exceeds volume hull [{lo}, {hi}]"
        )


def generate_phantom(spec: PhantomSpec) -> UsVolume:
    """Build the synthetic volume described by ``spec`` (deterministic)."""
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    ox, oy, oz = spec.origin
    lo = np.array(spec.origin)
    hi = lo + (np.array(spec.dims) - 1) * np.array(spec.spacing)

    pc = np.array(spec.prostate_center)
    pa = np.array(spec.prostate_semi_axes)
    _check_inside(lo, hi, pc - pa, pc + pa, "prostate")
    bc = np.array(spec.bladder_center)
    br = spec.bladder_radius_mm
    _check_inside(lo, hi, bc - br, bc + br, "bladder")
    arc = spec.rectal_arc
    acx, acy = arc.center_xy
    arc_r = arc.radius_mm + arc.thickness_mm
    _check_inside(
        lo, hi,
        (acx - arc_r, acy - arc_r, arc.z_range[0]),
        (acx + arc_r, acy + arc_r, arc.z_range[1]),
        "rectal arc",
    )

    x = ox + np.arange(nx) * sx
    y = oy + np.arange(ny) * sy
    z = oz + np.arange(nz) * sz
    xg = x[None, None, :]
    yg = y[None, :, None]
    zg = z[:, None, None]

    base = np.full((nz, ny, nx), spec.exterior_mean)

    e = (
        ((xg - pc[0]) / pa[0]) ** 2
        + ((yg - pc[1]) / pa[1]) ** 2
        + ((zg - pc[2]) / pa[2]) ** 2
    )
    base[e <= 1.0] = spec.interior_mean

    b2 = (xg - bc[0]) ** 2 + (yg - bc[1]) ** 2 + (zg - bc[2]) ** 2
    base[b2 <= br * br] = spec.bladder_mean

    rho = np.hypot(xg - acx, yg - acy)
    in_ring = (rho >= arc.radius_mm) & (rho <= arc.radius_mm + arc.thickness_mm)
    cos_half = math.cos(math.radians(arc.span_deg) / 2.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        facing = np.where(rho > 0, (yg - acy) / np.where(rho > 0, rho, 1.0), 1.0)
    in_span = facing >= cos_half
    in_z = (zg >= arc.z_range[0]) & (zg <= arc.z_range[1])
    base[in_ring & in_span & in_z] = arc.intensity

    rng = np.random.default_rng(spec.seed)
    c = spec.speckle_contrast
    speckle = rng.uniform(1.0 - c, 1.0 + c, size=base.shape)
    vox = np.clip(np.floor(base * speckle + 0.5), 0, 255).astype(np.uint8)
    return UsVolume(dims=spec.dims, spacing=spec.spacing, origin=spec.origin, voxels=vox)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

USVOL_MAGIC = "USVOL1"


def save_volume(vol: UsVolume, path) -> None:
    """Write USVOL: one ASCII header line, then raw voxel bytes (x-fastest)."""
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    ox, oy, oz = vol.origin
    header = f"{USVOL_MAGIC} {nx} {ny} {nz} {sx!r} {sy!r} {sz!r} {ox!r} {oy!r} {oz!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vol.voxels.tobytes())


def load_volume(path) -> UsVolume:
    with open(path, "rb") as fh:
        header = fh.readline()
        if not header.endswith(b"\n"):
            raise HeaderFormatError("missing header line terminator")
        try:
            parts = header.decode("ascii").split()
        except UnicodeDecodeError as exc:
            raise HeaderFormatError("header is not ASCII") from exc
        if len(parts) != 10 or parts[0] != USVOL_MAGIC:
            raise HeaderFormatError(f"bad header: {header!r}")
        try:
            dims = tuple(int(p) for p in parts[1:4])
            spacing = tuple(float(p) for p in parts[4:7])
            origin = tuple(float(p) for p in parts[7:10])
        except ValueError as exc:
            raise HeaderFormatError(f"unparseable header fields: {header!r}") from exc
        count = dims[0] * dims[1] * dims[2]
        if count <= 0:
            raise VolumeInvariantError(f"non-positive voxel count in header: {dims}")
        payload = fh.read(count)
        if len(payload) < count:
            raise PayloadSizeError(f"payload truncated: expected {count} bytes, got {len(payload)}")
        if fh.read(1):
            raise PayloadSizeError("trailing bytes after payload")
    vox = np.frombuffer(payload, dtype=np.uint8)
    return UsVolume(dims=dims, spacing=spacing, origin=origin, voxels=vox)


def save_pgm(img: SliceImage, path) -> None:
    """Binary PGM (P5, maxval 255); masked-out pixels are already 0."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.px_w} {img.px_h}\n255\n".encode("ascii"))
        fh.write(img.pixels.tobytes())
