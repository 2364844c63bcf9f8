"""Constrained probe kinematics.

A raw 6-DOF device pose is projected onto the 4 degrees of freedom a
trans-rectal probe actually has: insertion depth along its own axis plus
pitch/yaw/roll about a fixed pivot (the sphincter). Lateral translations are
projected out; motion limits clamp, they never fail.

Frame conventions: the probe axis is local +z, the image plane is the local
x-z plane, and the full rotation is ``Ry(yaw) @ Rx(pitch) @ Rz(roll)`` so the
axis direction is ``(sin yaw cos pitch, -sin pitch, cos yaw cos pitch)``.
Angles are radians internally, degrees in config files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    UNIT_TOL,
    RigidTransform,
    matrix_to_quat,
    quat_to_matrix,
    rot_x,
    rot_y,
    rot_z,
    wrap_angle,
)
from .volume import SlicePlane

Z_AXIS = np.array([0.0, 0.0, 1.0])
X_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class DevicePose:
    """Raw pose from the input device (mouse mapping or haptic stylus)."""

    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # quaternion (w, x, y, z)

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.orientation))
        if abs(n - 1.0) > UNIT_TOL:
            raise ValueError(f"orientation quaternion norm {n} != 1")


@dataclass(frozen=True)
class ProbeSpec:
    pivot: tuple[float, float, float] = (0.0, 0.0, 0.0)
    d_max: float = 60.0
    tip_offset_mm: float = 0.0
    guide_angle_deg: float = 5.0
    guide_offset_mm: float = 0.0
    pitch_limit_deg: float = 30.0
    yaw_limit_deg: float = 30.0

    def __post_init__(self):
        if self.d_max <= 0:
            raise ValueError("d_max must be positive")
        if not abs(self.guide_angle_deg) < 90:
            raise ValueError("|guide_angle_deg| must be < 90")
        if self.pitch_limit_deg <= 0 or self.yaw_limit_deg <= 0:
            raise ValueError("pitch/yaw limits must be positive")


@dataclass(frozen=True)
class ProbePose:
    """Constrained configuration: all the state the simulator needs."""

    depth: float
    pitch: float
    yaw: float
    roll: float


@dataclass(frozen=True)
class GuideLine:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.direction))
        if abs(n - 1.0) > UNIT_TOL:
            raise ValueError(f"guide direction norm {n} != 1")


def probe_rotation(pose: ProbePose) -> np.ndarray:
    return rot_y(pose.yaw) @ rot_x(pose.pitch) @ rot_z(pose.roll)


def probe_axis(pose: ProbePose) -> np.ndarray:
    """Unit direction of the probe axis (independent of roll)."""
    cp = math.cos(pose.pitch)
    return np.array([math.sin(pose.yaw) * cp, -math.sin(pose.pitch), math.cos(pose.yaw) * cp])


def probe_tip(spec: ProbeSpec, pose: ProbePose) -> np.ndarray:
    return np.array(spec.pivot) + (spec.tip_offset_mm + pose.depth) * probe_axis(pose)


def probe_frame(spec: ProbeSpec, pose: ProbePose) -> RigidTransform:
    """Probe-local to world; the tip sits at local (0, 0, tip_offset + depth)."""
    return RigidTransform(rotation=probe_rotation(pose), translation=np.array(spec.pivot))


def constrain_pose(spec: ProbeSpec, dev: DevicePose) -> ProbePose:
    """Project a device pose onto the pivot-constrained probe DOFs.

    Pitch/yaw come from the device axis direction, depth from the projection
    of the device displacement onto that axis, roll from the residual twist.
    Everything clamps to the spec limits; this never raises.
    """
    r_dev = quat_to_matrix(dev.orientation)
    axis = r_dev @ Z_AXIS
    pitch_raw = math.asin(max(-1.0, min(1.0, -axis[1])))
    yaw_raw = math.atan2(axis[0], axis[2])
    # residual rotation about the device's own axis
    r0 = rot_y(yaw_raw) @ rot_x(pitch_raw)
    m = r0.T @ r_dev
    roll = wrap_angle(math.atan2(m[1, 0], m[0, 0]))

    disp = np.array(dev.position) - np.array(spec.pivot)
    depth = float(disp.dot(axis))
    depth = min(spec.d_max, max(0.0, depth))

    pitch_lim = math.radians(spec.pitch_limit_deg)
    yaw_lim = math.radians(spec.yaw_limit_deg)
    return ProbePose(
        depth=depth,
        pitch=min(pitch_lim, max(-pitch_lim, pitch_raw)),
        yaw=min(yaw_lim, max(-yaw_lim, yaw_raw)),
        roll=roll,
    )


def pose_to_device(spec: ProbeSpec, pose: ProbePose) -> DevicePose:
    """Re-encode a constrained pose as the device pose that reproduces it."""
    r = probe_rotation(pose)
    pos = np.array(spec.pivot) + pose.depth * probe_axis(pose)
    return DevicePose(position=tuple(pos), orientation=tuple(matrix_to_quat(r)))


def image_plane_of(spec: ProbeSpec, pose: ProbePose,
                   extent: tuple[float, float] = (60.0, 60.0),
                   resolution: tuple[int, int] = (256, 256)) -> SlicePlane:
    """Sagittal imaging plane: contains the probe axis, rotates with roll.

    u is the in-plane lateral direction, v the probe axis; the center sits
    half the image height ahead of the tip so the tip is on the bottom edge.
    """
    r = probe_rotation(pose)
    v = r @ Z_AXIS
    u = r @ X_AXIS
    width_mm, height_mm = extent
    px_w, px_h = resolution
    center = probe_tip(spec, pose) + (height_mm / 2.0) * v
    return SlicePlane(
        center=tuple(center),
        u_axis=tuple(u),
        v_axis=tuple(v),
        width_mm=width_mm,
        height_mm=height_mm,
        px_w=px_w,
        px_h=px_h,
    )


def guide_line_of(spec: ProbeSpec, pose: ProbePose) -> GuideLine:
    """Needle guide: starts near the tip, tilted in-plane by the guide angle."""
    r = probe_rotation(pose)
    axis = r @ Z_AXIS
    u = r @ X_AXIS
    g = math.radians(spec.guide_angle_deg)
    direction = math.cos(g) * axis + math.sin(g) * u
    origin = probe_tip(spec, pose) + spec.guide_offset_mm * axis
    return GuideLine(origin=tuple(origin), direction=tuple(direction))
