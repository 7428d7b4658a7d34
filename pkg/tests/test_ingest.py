from __future__ import annotations

import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from rotvote.camera import CameraIntrinsics
from rotvote.geometry import DegenerateGeometryError, exp_so3
from rotvote.ingest import (
    BadMagicError,
    DataError,
    DimensionOverflowError,
    FlowFormatError,
    GyroSeries,
    TimeRangeError,
    TruncatedFlowError,
    build_ground_truth,
    integrate_gyro,
    kabsch_align,
    load_config,
    matrix_to_quat,
    quat_to_matrix,
    read_flow,
    read_flow_field,
    read_ground_truth_csv,
    read_gyro_csv,
    remove_bias,
    save_config,
    sync_time_offset,
    write_flow,
    write_ground_truth_csv,
    write_gyro_csv,
)


# -- flow rasters -----------------------------------------------------------

def test_hand_written_2x2(tmp_path):
    vals = [1.0, -2.0, 0.5, 0.25, 3.0, 4.0, -0.125, 8.0]
    raw = b"PIEH" + struct.pack("<ii", 2, 2) + struct.pack("<8f", *vals)
    path = tmp_path / "a.flo"
    path.write_bytes(raw)
    flow = read_flow(path)
    assert flow.shape == (2, 2, 2)
    np.testing.assert_array_equal(flow.ravel(), vals)
    assert flow[0, 1, 0] == 0.5 and flow[1, 0, 1] == 4.0
    out = tmp_path / "b.flo"
    write_flow(out, flow)
    assert out.read_bytes() == raw


def test_magic_is_the_float_tag():
    assert struct.unpack("<f", b"PIEH")[0] == 202021.25


def _valid(tmp_path, w=3, h=2):
    path = tmp_path / "v.flo"
    write_flow(path, np.arange(w * h * 2, dtype=np.float32).reshape(h, w, 2))
    return path


def test_bad_magic(tmp_path):
    path = _valid(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        read_flow(path)


@pytest.mark.parametrize("cut", [6, 12, 20, 59])
def test_truncated(tmp_path, cut):
    path = _valid(tmp_path)
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises(TruncatedFlowError):
        read_flow(path)


@pytest.mark.parametrize("w,h", [(0, 2), (-1, 5), (1 << 20, 4), (3, -7)])
def test_dimension_overflow(tmp_path, w, h):
    path = tmp_path / "o.flo"
    path.write_bytes(b"PIEH" + struct.pack("<ii", w, h) + b"\0" * 64)
    with pytest.raises(DimensionOverflowError):
        read_flow(path)


def test_errors_are_distinct():
    kinds = {BadMagicError, TruncatedFlowError, DimensionOverflowError}
    assert all(issubclass(k, FlowFormatError) for k in kinds)
    assert len({k.__mro__[0] for k in kinds}) == 3


def test_trailing_bytes_rejected(tmp_path):
    path = _valid(tmp_path)
    path.write_bytes(path.read_bytes() + b"\0\0\0\0")
    with pytest.raises(FlowFormatError):
        read_flow(path)


@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(2)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_fuzz(tmp_path_factory, flow):
    path = tmp_path_factory.mktemp("fz") / "f.flo"
    write_flow(path, flow)
    np.testing.assert_array_equal(read_flow(path), flow)


def test_nan_and_unknown_marker(tmp_path):
    flow = np.zeros((4, 5, 2), np.float32)
    flow[1, 2] = np.nan
    flow[3, 4, 0] = 1e10
    path = tmp_path / "n.flo"
    write_flow(path, flow)
    back = read_flow(path)
    assert np.isnan(back[1, 2]).all() and np.isnan(back[3, 4, 0])
    k = CameraIntrinsics(10.0, 2.0, 2.0, 5, 4)
    fld = read_flow_field(path, k)
    assert len(fld) == 20 - 2


# -- gyro integration -------------------------------------------------------

def _constant(w, t1=1.0, rate=400.0):
    t = np.arange(0.0, t1 + 1e-12, 1.0 / rate)
    return GyroSeries(t, np.tile(w, (t.size, 1)))


def test_constant_yaw_rate():
    g = _constant([0, 0, math.radians(90)])
    R = integrate_gyro(g, 0.1, 0.1 + 1 / 30)
    np.testing.assert_allclose(R, Rotation.from_euler("z", 3, degrees=True).as_matrix(),
                               atol=1e-12)


def test_zero_rates_identity():
    R = integrate_gyro(_constant([0, 0, 0]), 0.2, 0.7)
    np.testing.assert_array_equal(R, np.eye(3))


def test_constant_rate_closed_form(rng):
    for _ in range(20):
        w = rng.normal(size=3)
        t0, t1 = sorted(rng.uniform(0, 1, 2))
        R = integrate_gyro(_constant(w), t0, t1)
        np.testing.assert_allclose(R, Rotation.from_rotvec(w * (t1 - t0)).as_matrix(),
                                   atol=1e-8)


def test_piecewise_constant_closed_form(rng):
    """Rates held constant on each sample interval: the exact body-frame
    composition is a product of per-interval exponentials in time order."""
    knots = np.array([0.0, 0.3, 0.5, 0.9, 1.0])
    rates = rng.normal(size=(4, 3))
    # two samples per piece so the trapezoid rule sees a constant rate
    t = np.concatenate([[a, b - 1e-9] for a, b in zip(knots[:-1], knots[1:])])
    w = np.repeat(rates, 2, axis=0)
    g = GyroSeries(t, w)
    expect = np.eye(3)
    for (a, b), r in zip(zip(knots[:-1], knots[1:]), rates):
        expect = expect @ Rotation.from_rotvec(r * (b - 1e-9 - a)).as_matrix()
    got = integrate_gyro(g, 0.0, t[-1])
    # the 1e-9 s ramps between pieces add at most |dw| * 1e-9
    np.testing.assert_allclose(got, expect, atol=1e-8)


def _wiggly(seed=0, dur=4.0):
    rng = np.random.default_rng(seed)
    t = np.arange(0.0, dur, 1 / 400)
    amp, fr, ph = rng.normal(size=(3, 3, 3))
    w = sum(amp[k] * np.sin(2 * np.pi * abs(fr[k]) * t[:, None] + ph[k]) for k in range(3))
    return GyroSeries(t, w)


def test_composition_order():
    g = _wiggly()
    t0, t1, t2 = 0.31, 1.27, 2.9
    np.testing.assert_allclose(integrate_gyro(g, t0, t2),
                               integrate_gyro(g, t0, t1) @ integrate_gyro(g, t1, t2),
                               atol=1e-8)


def test_integrate_range_errors():
    g = _constant([0, 0, 1], t1=1.0)
    for a, b in ((-0.1, 0.5), (0.5, 1.1), (0.6, 0.6), (0.7, 0.2)):
        with pytest.raises(TimeRangeError):
            integrate_gyro(g, a, b)


def test_gyro_series_validation():
    with pytest.raises(DataError):
        GyroSeries([0.0, 0.0], np.zeros((2, 3)))
    with pytest.raises(DataError):
        GyroSeries([0.0, 1.0], [[0, 0, np.nan], [0, 0, 0]])
    with pytest.raises(DataError):
        GyroSeries([0.0, 1.0, 2.0], np.zeros((2, 3)))


def test_bias_removal():
    g = _constant([0.01, -0.02, 0.03])
    clean = remove_bias(g, 0.0, 0.5)
    np.testing.assert_allclose(clean.rates, 0.0, atol=1e-15)
    with pytest.raises(TimeRangeError):
        remove_bias(g, 5.0, 6.0)


# -- Kabsch -----------------------------------------------------------------

def test_kabsch_identity(rng):
    a = rng.normal(size=(10, 3))
    np.testing.assert_allclose(kabsch_align(a, a), np.eye(3), atol=1e-12)


def test_kabsch_planted(rng):
    for seed in range(20):
        R = Rotation.random(random_state=seed).as_matrix()
        a = rng.normal(size=(50, 3))
        got = kabsch_align(a, a @ R.T)
        np.testing.assert_allclose(got, R, atol=1e-9)
        assert np.linalg.det(got) == pytest.approx(1.0)


def test_kabsch_matches_scipy_with_noise(rng):
    R = Rotation.random(random_state=3).as_matrix()
    a = rng.normal(size=(200, 3))
    b = a @ R.T + rng.normal(scale=0.05, size=a.shape)
    oracle, _ = Rotation.align_vectors(b, a)
    np.testing.assert_allclose(kabsch_align(a, b), oracle.as_matrix(), atol=1e-9)


def test_kabsch_residual_matches_noise(rng):
    sigma = 0.02
    R = Rotation.random(random_state=4).as_matrix()
    a = rng.normal(size=(5000, 3))
    b = a @ R.T + rng.normal(scale=sigma, size=a.shape)
    got = kabsch_align(a, b)
    rms = np.sqrt(np.mean(np.sum((a @ got.T - b) ** 2, axis=1)))
    assert rms == pytest.approx(sigma * math.sqrt(3), rel=0.05)


def test_kabsch_equivariance(rng):
    a = rng.normal(size=(30, 3))
    b = rng.normal(size=(30, 3))
    Q = Rotation.random(random_state=5).as_matrix()
    R = kabsch_align(a, b)
    np.testing.assert_allclose(kabsch_align(a @ Q.T, b @ Q.T), Q @ R @ Q.T, atol=1e-9)


def test_kabsch_reflection_corrected(rng):
    a = rng.normal(size=(20, 3))
    b = a * np.array([1, 1, -1])          # mirror image
    R = kabsch_align(a, b)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_kabsch_degenerate():
    a = np.outer(np.arange(1, 6), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometryError):
        kabsch_align(a, a)
    with pytest.raises(DegenerateGeometryError):
        kabsch_align(np.eye(3)[:2], np.eye(3)[:2])


# -- time sync --------------------------------------------------------------

def test_sync_planted_shift():
    a = _wiggly(1, dur=20.0)
    b = a.shifted(0.137)
    off = sync_time_offset(a, b, search=0.5, step=0.01)
    assert abs(off - 0.137) < 1e-3


def test_sync_identity():
    a = _wiggly(2)
    assert abs(sync_time_offset(a, a, 0.3, 0.01)) < 1e-4


def test_sync_negative_shift_and_resampled_clock():
    a = _wiggly(3, dur=20.0)
    t = np.arange(0.0, 19.0, 1 / 200) + 0.0031
    b = GyroSeries(t - 0.25, a.rate_at(t))
    off = sync_time_offset(a, b, 0.5, 0.01)
    assert abs(off + 0.25) < 1e-3


def test_sync_disjoint():
    a = _wiggly(4, dur=2.0)
    with pytest.raises(TimeRangeError):
        sync_time_offset(a, a.shifted(100.0), 0.5, 0.01)


# -- ground truth -----------------------------------------------------------

def test_ground_truth_single_interval():
    g = _wiggly(5)
    track = build_ground_truth(g, [0.5, 0.6])
    assert len(track) == 1
    np.testing.assert_array_equal(track[0], integrate_gyro(g, 0.5, 0.6))


def test_ground_truth_composes_to_full_span():
    g = _wiggly(6)
    times = np.linspace(0.2, 3.5, 40)
    E = Rotation.random(random_state=8).as_matrix()
    track = build_ground_truth(g, times, E)
    total = np.eye(3)
    for R in track:
        total = total @ R
    np.testing.assert_allclose(total, E @ integrate_gyro(g, times[0], times[-1]) @ E.T,
                               atol=1e-7)
    for R in track:
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)


def test_ground_truth_constant_rate():
    g = _constant([0.3, -0.1, 0.2], t1=2.0)
    track = build_ground_truth(g, np.arange(0.1, 1.9, 1 / 30))
    for R in track[1:]:
        np.testing.assert_allclose(R, track[0], atol=1e-12)


def test_ground_truth_extrinsic_conjugates_axis():
    g = _constant([0.0, 0.0, 1.0])
    E = Rotation.from_euler("y", 90, degrees=True).as_matrix()   # sensor z -> camera -x
    R = build_ground_truth(g, [0.0, 0.5], E)[0]
    np.testing.assert_allclose(Rotation.from_matrix(R).as_rotvec(), E @ [0, 0, 0.5], atol=1e-12)


def test_ground_truth_bad_times():
    with pytest.raises(DataError):
        build_ground_truth(_constant([0, 0, 0]), [0.5, 0.4])


# -- CSV and config ---------------------------------------------------------

def test_quaternions_match_scipy():
    for seed in range(20):
        rot = Rotation.random(random_state=seed)
        x, y, z, w = rot.as_quat()
        np.testing.assert_allclose(quat_to_matrix([w, x, y, z]), rot.as_matrix(), atol=1e-12)
        np.testing.assert_allclose(quat_to_matrix([w, x, y, z], "jpl"), rot.as_matrix().T,
                                   atol=1e-12)
        for conv in ("hamilton", "jpl"):
            q = matrix_to_quat(quat_to_matrix([w, x, y, z], conv), conv)
            np.testing.assert_allclose(np.abs(q), np.abs([w, x, y, z]), atol=1e-12)
    with pytest.raises(ValueError):
        quat_to_matrix([1, 0, 0, 0], "euler")


def test_gt_csv_round_trip(tmp_path):
    Rs = list(Rotation.random(5, random_state=1).as_matrix())
    for conv in ("hamilton", "jpl"):
        path = tmp_path / f"gt_{conv}.csv"
        write_ground_truth_csv(path, Rs, conv)
        assert path.read_text().splitlines()[0] == "frame,qw,qx,qy,qz"
        back = read_ground_truth_csv(path, conv)
        np.testing.assert_allclose(np.array(back), np.array(Rs), atol=1e-12)


def test_gyro_csv_round_trip(tmp_path):
    g = _wiggly(7, dur=0.1)
    path = tmp_path / "gyro.csv"
    write_gyro_csv(path, g)
    assert path.read_text().splitlines()[0] == "timestamp_s,wx,wy,wz"
    back = read_gyro_csv(path)
    np.testing.assert_array_equal(back.timestamps, g.timestamps)
    np.testing.assert_array_equal(back.rates, g.rates)


@pytest.mark.parametrize("text", [
    "",
    "t,wx,wy,wz\n0,0,0,0\n",
    "timestamp_s,wx,wy,wz\n",
    "timestamp_s,wx,wy,wz\n0,0,0\n",
    "timestamp_s,wx,wy,wz\n0,0,0,abc\n1,0,0,0\n",
    "timestamp_s,wx,wy,wz\n1,0,0,0\n0,0,0,0\n",
])
def test_malformed_gyro_csv(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DataError):
        read_gyro_csv(path)


def test_malformed_gt_csv(tmp_path):
    path = tmp_path / "gt.csv"
    path.write_text("frame,qw,qx,qy,qz\n1,1,0,0,0\n0,1,0,0,0\n")
    with pytest.raises(DataError):
        read_ground_truth_csv(path)


def test_config_round_trip(tmp_path):
    cfg = {"bin_deg": 0.057, "range_deg": 4.0, "model": "lh", "stride": 15,
           "intrinsics": {"f": 400.0, "cx": 240.0, "cy": 135.0, "width": 480, "height": 270}}
    path = tmp_path / "run.json"
    save_config(path, cfg)
    assert load_config(path) == cfg
    path.write_text("{not json")
    with pytest.raises(DataError):
        load_config(path)
    path.write_text("[1, 2]")
    with pytest.raises(DataError):
        load_config(path)


def test_integration_matches_fine_reference():
    """Against brute-force integration with 2000 sub-steps per sample."""
    g = _wiggly(9, dur=0.2)
    t0, t1 = 0.0123, 0.1877
    R = np.eye(3)
    ts = np.linspace(t0, t1, 2000 * 70 + 1)
    mids = 0.5 * (ts[1:] + ts[:-1])
    for wi, dt in zip(g.rate_at(mids), np.diff(ts)):
        R = R @ exp_so3(wi * dt)
    np.testing.assert_allclose(integrate_gyro(g, t0, t1), R, atol=1e-8)
