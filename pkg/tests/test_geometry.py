from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from rotvote.camera import CameraIntrinsics
from rotvote.geometry import (
    DegenerateGeometryError,
    backproject,
    exp_so3,
    is_rotation,
    lh_line,
    lh_plane_normals,
    log_so3,
    perspective_manifold,
    precompute_directions,
    project,
    rotation_about_axis,
    rotation_from_to,
)
from rotvote.synthetic import rotational_flow

unit = st.tuples(*[st.floats(-1, 1)] * 3).map(np.array).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: v / np.linalg.norm(v))


def _rotvec_oracle(R):
    return Rotation.from_matrix(R).as_rotvec()


# -- exponential / log maps, checked against scipy ------------------------------

def test_exp_log_against_scipy(rng):
    w = rng.normal(size=(200, 3))
    w *= rng.uniform(0, 3.0, (200, 1)) / np.linalg.norm(w, axis=1, keepdims=True)
    np.testing.assert_allclose(exp_so3(w), Rotation.from_rotvec(w).as_matrix(), atol=1e-12)
    R = Rotation.from_rotvec(w).as_matrix()
    np.testing.assert_allclose(log_so3(R), w, atol=1e-9)


def test_log_near_pi():
    w = np.array([0.0, 0.6, 0.8]) * (math.pi - 1e-7)
    np.testing.assert_allclose(np.abs(log_so3(exp_so3(w))), np.abs(w), atol=1e-6)


def test_exp_tiny_angle():
    w = np.array([1e-12, -2e-12, 0.0])
    np.testing.assert_allclose(exp_so3(w), Rotation.from_rotvec(w).as_matrix(), atol=1e-15)


# -- back-projection ----------------------------------------------------------

def test_backproject_principal_point(cam):
    np.testing.assert_allclose(backproject([cam.cx, cam.cy], cam), [0, 0, 1])


def test_backproject_45_degrees():
    k = CameraIntrinsics(500.0, 100.0, 100.0, 1000, 1000)
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(backproject([600.0, 100.0], k), [s, 0, s], atol=1e-15)


def test_backproject_normalisation():
    k = CameraIntrinsics(5.0, 10.0, 10.0, 20, 20)
    np.testing.assert_allclose(backproject([13.0, 14.0], k),
                               np.array([3, 4, 5]) / math.sqrt(50), atol=1e-15)


def test_project_inverts_backproject(cam, rng):
    px = rng.uniform([0, 0], [cam.width, cam.height], (500, 2))
    ray = backproject(px, cam)
    np.testing.assert_allclose(np.linalg.norm(ray, axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(project(ray, cam), px, atol=1e-9)


# -- rotation constructors --------------------------------------------------

def test_rotation_from_to_identity():
    z = np.array([0.0, 0, 1])
    np.testing.assert_allclose(rotation_from_to(z, z), np.eye(3), atol=1e-15)


def test_rotation_from_to_quarter_turn():
    R = rotation_from_to([1.0, 0, 0], [0.0, 1, 0])
    np.testing.assert_allclose(R, Rotation.from_rotvec([0, 0, math.pi / 2]).as_matrix(),
                               atol=1e-12)


@given(unit, unit)
def test_rotation_from_to_random(p, q):
    if np.linalg.norm(np.cross(p, q)) < 1e-12 and np.dot(p, q) < 0:
        with pytest.raises(DegenerateGeometryError):
            rotation_from_to(p, q)
        return
    R = rotation_from_to(p, q)
    assert is_rotation(R)
    np.testing.assert_allclose(R @ p, q, atol=1e-9)
    axis = np.cross(p, q)
    if np.linalg.norm(axis) > 1e-6:
        np.testing.assert_allclose(R @ axis, axis, atol=1e-9)


def test_rotation_from_to_antipodal():
    with pytest.raises(DegenerateGeometryError):
        rotation_from_to([0.0, 0, 1], [0.0, 0, -1])


def test_rotation_about_axis_examples():
    np.testing.assert_allclose(rotation_about_axis([0, 0, 1.0], math.pi / 2) @ [1, 0, 0],
                               [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(rotation_about_axis([0.6, 0, 0.8], 0.0), np.eye(3))
    np.testing.assert_allclose(rotation_about_axis([0, 1.0, 0], math.pi) @ [1, 0, 0],
                               [-1, 0, 0], atol=1e-15)


@given(unit, st.floats(-10, 10))
def test_rotation_about_axis_properties(axis, theta):
    R = rotation_about_axis(axis, theta)
    assert is_rotation(R)
    np.testing.assert_allclose(R @ axis, axis, atol=1e-9)
    ang = math.acos(max(-1.0, min(1.0, (np.trace(R) - 1) / 2)))
    expect = abs(theta) % (2 * math.pi)
    expect = min(expect, 2 * math.pi - expect)
    assert ang == pytest.approx(expect, abs=1e-6)


# -- first-order model -------------------------------------------------------

def test_plane_normals_substitution():
    f = 321.0
    n_u, n_v = lh_plane_normals(0.0, 0.0, f)
    np.testing.assert_array_equal(n_u, [0, -f, 0])
    np.testing.assert_array_equal(n_v, [f, 0, 0])
    n_u, n_v = lh_plane_normals(f, f, f)
    np.testing.assert_allclose(n_u, [f, -2 * f, f])
    np.testing.assert_allclose(n_v, [2 * f, -f, -f])


def test_plane_normals_reproduce_rotational_flow(rng):
    x, y = rng.uniform(-300, 300, (2, 1000))
    f = 400.0
    r = rng.normal(size=3) * 0.02
    u, v = rotational_flow(x, y, f, r)
    n_u, n_v = lh_plane_normals(x, y, f)
    np.testing.assert_allclose(n_u @ r, u, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(n_v @ r, v, rtol=1e-12, atol=1e-12)


def test_direction_z_component(rng):
    x, y = rng.uniform(-2000, 2000, (2, 100_000))
    f = rng.uniform(10, 3000, 100_000)
    n_u, n_v = lh_plane_normals(x, y, f)
    d = np.cross(n_u, n_v)
    np.testing.assert_allclose(d[:, 2], f * f + x * x + y * y, rtol=1e-9)
    assert np.all(d[:, 2] > 0)


def test_lh_line_center_pixel():
    f, u, v = 400.0, 1.3, -0.7
    line = lh_line((0.0, 0.0, u, v), f)
    np.testing.assert_allclose(line.dir / np.linalg.norm(line.dir), [0, 0, 1])
    np.testing.assert_allclose(line.p0, [v / f, -u / f, 0.0], atol=1e-15)


def test_lh_line_diagonal_pixel():
    f = 50.0
    line = lh_line((f, f, 0.0, 0.0), f)
    np.testing.assert_allclose(line.dir, [3 * f * f] * 3)
    np.testing.assert_allclose(line.p0, 0.0)


@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(-20, 20), st.floats(-20, 20),
       st.floats(50, 2000), st.floats(-5, 5))
def test_every_line_point_reproduces_flow(x, y, u, v, f, t):
    line = lh_line((x, y, u, v), f)
    assert line.dir[2] > 0 and line.p0[2] == 0.0
    p = line.p0 + t * line.dir / np.linalg.norm(line.dir)
    pu, pv = rotational_flow(x, y, f, p)
    scale = max(1.0, abs(u), abs(v))
    assert abs(pu - u) <= 1e-9 * scale and abs(pv - v) <= 1e-9 * scale


def test_precompute_directions_matches_per_call(cam):
    xs = np.arange(0, cam.width, 15) - cam.cx
    ys = np.arange(0, cam.height, 15) - cam.cy
    grid = np.array([(x, y) for y in ys for x in xs])
    table = precompute_directions(grid, cam.f)
    per_call = np.array([lh_line((x, y, 3.0, -1.0), cam.f).dir for x, y in grid])
    assert table.shape == (32 * 18, 3)
    assert np.array_equal(table, per_call)
    other = np.array([lh_line((x, y, -7.0, 0.25), cam.f).dir for x, y in grid])
    assert np.array_equal(table, other)


def test_precompute_single_center():
    d = precompute_directions([(0.0, 0.0)], 400.0)[0]
    assert d[0] == 0 and d[1] == 0 and d[2] > 0


# -- perspective manifold ----------------------------------------------------

def _pixel_map_error(R, s, k):
    x, y, u, v = s
    p = backproject([x + k.cx, y + k.cy], k)
    q = backproject([x + u + k.cx, y + v + k.cy], k)
    return np.linalg.norm(exp_so3(-R) @ p - q)


def test_perspective_manifold_maps_p_to_q(cam, rng):
    thetas = np.linspace(-0.05, 0.05, 21)
    for _ in range(20):
        s = (*rng.uniform(-200, 200, 2), *rng.uniform(-10, 10, 2))
        for R in perspective_manifold(s, cam, thetas):
            assert _pixel_map_error(R, s, cam) < 1e-8


def test_perspective_zero_flow_center_is_roll_axis(cam):
    thetas = np.linspace(-0.05, 0.05, 11)
    pts = perspective_manifold((0.0, 0.0, 0.0, 0.0), cam, thetas)
    np.testing.assert_allclose(pts[:, :2], 0.0, atol=1e-15)
    np.testing.assert_allclose(np.abs(pts[:, 2]), np.abs(thetas), atol=1e-12)


def test_perspective_zero_flow_is_spin_about_ray(cam):
    s = (100.0, -60.0, 0.0, 0.0)
    ray = backproject([s[0] + cam.cx, s[1] + cam.cy], cam)
    pts = perspective_manifold(s, cam, np.linspace(-0.05, 0.05, 11))
    np.testing.assert_allclose(np.cross(pts, ray), 0.0, atol=1e-12)


def _dist_to_set(target, pts):
    return np.min(np.linalg.norm(pts - target, axis=1))


def test_perspective_roll_sample_near_truth(cam):
    C = math.radians(0.3)
    x, y = 120.0, -80.0
    u, v = rotational_flow(x, y, cam.f, (0, 0, C))
    pts = perspective_manifold((x, y, u, v), cam, np.linspace(-0.02, 0.02, 40001))
    assert _dist_to_set(np.array([0, 0, C]), pts) < 5 * C * C


def test_perspective_manifolds_share_true_rotation(cam, rng):
    r = np.radians([0.4, -0.25, 0.1])
    for _ in range(10):
        x, y = rng.uniform(-200, 120, 2)
        u, v = rotational_flow(x, y, cam.f, r)
        pts = perspective_manifold((x, y, u, v), cam, np.linspace(-0.02, 0.02, 40001))
        assert _dist_to_set(r, pts) < 1e-4


def test_perspective_close_to_lh_line(cam, rng):
    """Half-degree rotations: the curve stays within 1e-4 rad of the line."""
    for _ in range(20):
        r = rng.normal(size=3)
        r *= math.radians(0.5) / np.linalg.norm(r)
        x, y = rng.uniform(-200, 200, 2)
        u, v = rotational_flow(x, y, cam.f, r)
        line = lh_line((x, y, u, v), cam.f)
        d = line.dir / np.linalg.norm(line.dir)
        pts = perspective_manifold((x, y, u, v), cam, np.linspace(-0.02, 0.02, 201))
        off = pts - line.p0
        dist = np.linalg.norm(off - (off @ d)[:, None] * d, axis=1)
        assert dist.max() < 1e-4
