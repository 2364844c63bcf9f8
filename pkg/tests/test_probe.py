import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biopsym import geometry as g
from biopsym.probe import (
    DevicePose,
    GuideLine,
    ProbePose,
    ProbeSpec,
    constrain_pose,
    guide_line_of,
    image_plane_of,
    pose_to_device,
    probe_axis,
    probe_rotation,
    probe_tip,
)

IDENTITY_Q = (1.0, 0.0, 0.0, 0.0)

in_depth = st.floats(0.0, 60.0)
in_angle = st.floats(-math.radians(29.9), math.radians(29.9))
roll_angle = st.floats(-3.1, 3.1)


def device_for(spec, pose, lateral=(0.0, 0.0, 0.0)):
    """Device pose that realizes ``pose`` plus an off-axis nuisance offset."""
    r = probe_rotation(pose)
    axis = probe_axis(pose)
    lat = np.asarray(lateral, dtype=float)
    lat = lat - lat.dot(axis) * axis  # keep only the component normal to the axis
    pos = np.array(spec.pivot) + pose.depth * axis + lat
    return DevicePose(position=tuple(pos), orientation=tuple(g.matrix_to_quat(r)))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def test_device_pose_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        DevicePose(position=(0, 0, 0), orientation=(1.0, 1.0, 0.0, 0.0))


def test_spec_rejects_bad_limits():
    with pytest.raises(ValueError):
        ProbeSpec(d_max=0.0)
    with pytest.raises(ValueError):
        ProbeSpec(guide_angle_deg=90.0)
    with pytest.raises(ValueError):
        ProbeSpec(pitch_limit_deg=0.0)


def test_guide_line_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        GuideLine(origin=(0, 0, 0), direction=(0, 0, 2))


# ---------------------------------------------------------------------------
# constrain_pose
# ---------------------------------------------------------------------------

def test_identity_device_maps_to_neutral_pose():
    spec = ProbeSpec()
    pose = constrain_pose(spec, DevicePose(position=(0, 0, 10), orientation=IDENTITY_Q))
    assert pose.pitch == 0.0
    assert pose.yaw == 0.0
    assert pose.roll == 0.0
    assert pose.depth == pytest.approx(10.0)


def test_known_pitch_only_pose():
    spec = ProbeSpec()
    # axis tilted by rotating about x: axis = (0, -sin a, cos a)
    a = math.radians(20.0)
    q = g.matrix_to_quat(g.rot_x(a))
    pose = constrain_pose(spec, DevicePose(position=(0, 0, 0), orientation=tuple(q)))
    assert pose.pitch == pytest.approx(a, abs=1e-12)
    assert pose.yaw == pytest.approx(0.0, abs=1e-12)
    assert pose.roll == pytest.approx(0.0, abs=1e-12)


def test_known_yaw_only_pose():
    spec = ProbeSpec()
    a = math.radians(-15.0)
    q = g.matrix_to_quat(g.rot_y(a))
    pose = constrain_pose(spec, DevicePose(position=(0, 0, 0), orientation=tuple(q)))
    assert pose.yaw == pytest.approx(a, abs=1e-12)
    assert pose.pitch == pytest.approx(0.0, abs=1e-12)


def test_known_roll_only_pose():
    spec = ProbeSpec()
    a = math.radians(40.0)
    q = g.matrix_to_quat(g.rot_z(a))
    pose = constrain_pose(spec, DevicePose(position=(0, 0, 0), orientation=tuple(q)))
    assert pose.roll == pytest.approx(a, abs=1e-12)
    assert pose.pitch == pytest.approx(0.0, abs=1e-12)
    assert pose.yaw == pytest.approx(0.0, abs=1e-12)


@given(in_depth, in_angle, in_angle, roll_angle)
def test_lateral_offsets_are_projected_out(depth, pitch, yaw, roll):
    spec = ProbeSpec()
    want = ProbePose(depth=depth, pitch=pitch, yaw=yaw, roll=roll)
    dev = device_for(spec, want, lateral=(7.0, -4.0, 2.5))
    got = constrain_pose(spec, dev)
    assert got.depth == pytest.approx(want.depth, abs=1e-9)
    assert got.pitch == pytest.approx(want.pitch, abs=1e-9)
    assert got.yaw == pytest.approx(want.yaw, abs=1e-9)
    assert abs(g.wrap_angle(got.roll - want.roll)) < 1e-9


@given(in_depth, in_angle, in_angle, roll_angle)
def test_constrained_axis_matches_device_axis(depth, pitch, yaw, roll):
    spec = ProbeSpec()
    want = ProbePose(depth=depth, pitch=pitch, yaw=yaw, roll=roll)
    dev = device_for(spec, want)
    got = constrain_pose(spec, dev)
    dev_axis = g.quat_to_matrix(dev.orientation) @ np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(probe_axis(got), dev_axis, atol=1e-6)


@given(in_depth, in_angle, in_angle, roll_angle)
def test_constrain_is_idempotent(depth, pitch, yaw, roll):
    spec = ProbeSpec()
    first = constrain_pose(spec, device_for(spec, ProbePose(depth, pitch, yaw, roll)))
    second = constrain_pose(spec, pose_to_device(spec, first))
    assert second.depth == pytest.approx(first.depth, abs=1e-9)
    assert second.pitch == pytest.approx(first.pitch, abs=1e-9)
    assert second.yaw == pytest.approx(first.yaw, abs=1e-9)
    assert abs(g.wrap_angle(second.roll - first.roll)) < 1e-9


def test_depth_clamps_to_limits():
    spec = ProbeSpec(d_max=60.0)
    deep = DevicePose(position=(0, 0, 150.0), orientation=IDENTITY_Q)
    assert constrain_pose(spec, deep).depth == 60.0
    behind = DevicePose(position=(0, 0, -5.0), orientation=IDENTITY_Q)
    assert constrain_pose(spec, behind).depth == 0.0


def test_angles_clamp_to_limits():
    spec = ProbeSpec(pitch_limit_deg=30.0, yaw_limit_deg=30.0)
    q = g.matrix_to_quat(g.rot_x(math.radians(45.0)))
    pose = constrain_pose(spec, DevicePose(position=(0, 0, 0), orientation=tuple(q)))
    assert pose.pitch == pytest.approx(math.radians(30.0))
    q = g.matrix_to_quat(g.rot_y(math.radians(-50.0)))
    pose = constrain_pose(spec, DevicePose(position=(0, 0, 0), orientation=tuple(q)))
    assert pose.yaw == pytest.approx(math.radians(-30.0))


def test_pivot_offset_moves_depth_reference():
    spec = ProbeSpec(pivot=(5.0, 0.0, -10.0))
    dev = DevicePose(position=(5.0, 0.0, 2.0), orientation=IDENTITY_Q)
    assert constrain_pose(spec, dev).depth == pytest.approx(12.0)


# ---------------------------------------------------------------------------
# Forward model
# ---------------------------------------------------------------------------

@given(in_depth, in_angle, in_angle, roll_angle)
def test_tip_lies_on_axis_through_pivot(depth, pitch, yaw, roll):
    spec = ProbeSpec(pivot=(1.0, -2.0, 3.0), tip_offset_mm=4.0)
    pose = ProbePose(depth=depth, pitch=pitch, yaw=yaw, roll=roll)
    tip = probe_tip(spec, pose)
    rel = tip - np.array(spec.pivot)
    axis = probe_axis(pose)
    np.testing.assert_allclose(rel, (spec.tip_offset_mm + depth) * axis, atol=1e-9)
    assert np.linalg.norm(axis) == pytest.approx(1.0, abs=1e-12)


def test_probe_axis_formula_matches_rotation():
    pose = ProbePose(depth=10, pitch=0.3, yaw=-0.2, roll=1.0)
    np.testing.assert_allclose(
        probe_axis(pose), probe_rotation(pose) @ np.array([0, 0, 1.0]), atol=1e-12)


# ---------------------------------------------------------------------------
# Image plane
# ---------------------------------------------------------------------------

def test_image_plane_contains_probe_axis():
    spec = ProbeSpec()
    pose = ProbePose(depth=20, pitch=0.2, yaw=-0.1, roll=0.4)
    pl = image_plane_of(spec, pose, extent=(60, 60), resolution=(128, 128))
    axis = probe_axis(pose)
    np.testing.assert_allclose(pl.v_axis, axis, atol=1e-12)
    tip = probe_tip(spec, pose)
    np.testing.assert_allclose(np.array(pl.center), tip + 30.0 * axis, atol=1e-12)
    # plane normal is perpendicular to the axis, so the axis lies in-plane
    n = np.cross(pl.u_axis, pl.v_axis)
    assert abs(n.dot(axis)) < 1e-12


def test_image_plane_rotates_with_roll():
    spec = ProbeSpec()
    flat = image_plane_of(spec, ProbePose(depth=10, pitch=0, yaw=0, roll=0))
    rolled = image_plane_of(spec, ProbePose(depth=10, pitch=0, yaw=0, roll=math.pi / 2))
    np.testing.assert_allclose(flat.u_axis, (1, 0, 0), atol=1e-12)
    np.testing.assert_allclose(rolled.u_axis, (0, 1, 0), atol=1e-9)
    # axis unchanged by roll
    np.testing.assert_allclose(rolled.v_axis, flat.v_axis, atol=1e-12)


def test_tip_projects_to_bottom_edge_center():
    spec = ProbeSpec()
    pose = ProbePose(depth=15, pitch=0.1, yaw=0.2, roll=-0.3)
    pl = image_plane_of(spec, pose, extent=(60, 60), resolution=(256, 256))
    tip = probe_tip(spec, pose)
    rel = tip - np.array(pl.center)
    u_mm = rel.dot(pl.u_axis)
    v_mm = rel.dot(pl.v_axis)
    assert u_mm == pytest.approx(0.0, abs=1e-9)
    assert v_mm == pytest.approx(-pl.height_mm / 2, abs=1e-9)


# ---------------------------------------------------------------------------
# Guide line
# ---------------------------------------------------------------------------

def test_guide_line_angle_and_origin():
    spec = ProbeSpec(guide_angle_deg=5.0, guide_offset_mm=2.0)
    pose = ProbePose(depth=25, pitch=0.15, yaw=-0.25, roll=0.6)
    line = guide_line_of(spec, pose)
    axis = probe_axis(pose)
    d = np.array(line.direction)
    assert math.degrees(math.acos(np.clip(d.dot(axis), -1, 1))) == pytest.approx(5.0, abs=1e-9)
    np.testing.assert_allclose(
        np.array(line.origin), probe_tip(spec, pose) + 2.0 * axis, atol=1e-12)


def test_guide_line_lies_in_image_plane():
    spec = ProbeSpec(guide_angle_deg=5.0)
    pose = ProbePose(depth=30, pitch=-0.2, yaw=0.1, roll=1.2)
    pl = image_plane_of(spec, pose)
    line = guide_line_of(spec, pose)
    n = np.cross(pl.u_axis, pl.v_axis)
    assert abs(n.dot(line.direction)) < 1e-12
    assert abs(n.dot(np.array(line.origin) - np.array(pl.center))) < 1e-9


def test_zero_guide_angle_follows_axis():
    spec = ProbeSpec(guide_angle_deg=0.0)
    pose = ProbePose(depth=10, pitch=0.05, yaw=0.03, roll=0.0)
    line = guide_line_of(spec, pose)
    np.testing.assert_allclose(line.direction, probe_axis(pose), atol=1e-12)


# ---------------------------------------------------------------------------
# Round trip
# ---------------------------------------------------------------------------

@given(in_depth, in_angle, in_angle, roll_angle)
def test_pose_device_round_trip(depth, pitch, yaw, roll):
    spec = ProbeSpec()
    pose = ProbePose(depth=depth, pitch=pitch, yaw=yaw, roll=roll)
    back = constrain_pose(spec, pose_to_device(spec, pose))
    assert back.depth == pytest.approx(pose.depth, abs=1e-9)
    assert back.pitch == pytest.approx(pose.pitch, abs=1e-9)
    assert back.yaw == pytest.approx(pose.yaw, abs=1e-9)
    assert abs(g.wrap_angle(back.roll - pose.roll)) < 1e-9
