"""Reading flow rasters and building ground truth from gyroscope logs.

File formats
------------
Flow raster (``.flo``): 4-byte magic ``PIEH`` (the float32 202021.25), int32
width, int32 height, then ``height * width`` interleaved little-endian float32
``(u, v)`` pairs in row-major order. Values with magnitude above ``1e9`` are
the conventional "unknown" marker and are read as NaN.

Gyro CSV: header ``timestamp_s,wx,wy,wz``; rates in rad/s in the sensor frame.

Ground-truth CSV: header ``frame,qw,qx,qy,qz``; one forward frame-to-frame
rotation per row. Rotations are returned as matrices; see
:func:`quat_to_matrix` for the two supported quaternion conventions.

Rotation composition
--------------------
Gyro rates are body-frame, so the rotation accumulated from ``t0`` to ``t1``
is ``E_1 @ E_2 @ ... @ E_K`` with ``E_k = expm(w_k * dt_k)`` in time order,
and ``integrate_gyro(t0, t2) == integrate_gyro(t0, t1) @ integrate_gyro(t1, t2)``.
This is the same "camera rotation" sense as the estimator's ``(A, B, C)``.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, FlowField
from .geometry import DegenerateGeometryError, exp_so3

FLO_MAGIC = b"PIEH"
FLO_UNKNOWN = 1e9
MAX_DIM = 1 << 16


class FlowFormatError(ValueError):
    pass


class BadMagicError(FlowFormatError):
    pass


class TruncatedFlowError(FlowFormatError):
    pass


class DimensionOverflowError(FlowFormatError):
    pass


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class TimeRangeError(DataError):
    pass


# -- flow rasters ----------------------------------------------------------

def write_flow(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"expected (H, W, 2) flow, got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<ii", w, h))
        fh.write(np.ascontiguousarray(flow).tobytes())


def read_flow(path) -> np.ndarray:
    """``(H, W, 2)`` float32 raster; the whole file is validated before any
    data is returned."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != FLO_MAGIC:
        raise BadMagicError(f"{path}: not a flow raster (bad magic {raw[:4]!r})")
    if len(raw) < 12:
        raise TruncatedFlowError(f"{path}: header truncated")
    w, h = struct.unpack("<ii", raw[4:12])
    if not (0 < w <= MAX_DIM and 0 < h <= MAX_DIM):
        raise DimensionOverflowError(f"{path}: implausible dimensions {w}x{h}")
    need = 12 + 8 * w * h
    if len(raw) < need:
        raise TruncatedFlowError(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise FlowFormatError(f"{path}: {len(raw) - need} trailing bytes")
    flow = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2).astype(np.float32)
    flow[np.abs(flow) > FLO_UNKNOWN] = np.nan
    return flow


def read_flow_field(path, intrinsics: CameraIntrinsics, stride: int = 1) -> FlowField:
    """Flow raster as a :class:`FlowField`; NaN pixels are dropped."""
    return FlowField.from_dense(read_flow(path), intrinsics, stride)


# -- gyro series -------------------------------------------------------------

@dataclass
class GyroSeries:
    timestamps: np.ndarray
    rates: np.ndarray

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).ravel()
        self.rates = np.asarray(self.rates, dtype=np.float64).reshape(-1, 3)
        if len(self.timestamps) != len(self.rates):
            raise DataError("timestamps and rates differ in length")
        if len(self.timestamps) < 2:
            raise DataError("need at least two gyro samples")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("gyro timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.rates)):
            raise DataError("non-finite gyro rate")

    @property
    def span(self) -> tuple[float, float]:
        return float(self.timestamps[0]), float(self.timestamps[-1])

    def rate_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return np.stack([np.interp(t, self.timestamps, self.rates[:, i])
                         for i in range(3)], axis=-1)

    def shifted(self, dt: float) -> "GyroSeries":
        return GyroSeries(self.timestamps + dt, self.rates.copy())

    def rotated(self, R: np.ndarray) -> "GyroSeries":
        return GyroSeries(self.timestamps.copy(), self.rates @ np.asarray(R).T)


def remove_bias(g: GyroSeries, t_start: float, t_end: float) -> GyroSeries:
    """Subtract the mean rate over a window known to be stationary."""
    sel = (g.timestamps >= t_start) & (g.timestamps <= t_end)
    if not sel.any():
        raise TimeRangeError(f"no gyro samples in [{t_start}, {t_end}]")
    return GyroSeries(g.timestamps.copy(), g.rates - g.rates[sel].mean(axis=0))


def integrate_gyro(g: GyroSeries, t0: float, t1: float) -> np.ndarray:
    """Rotation accumulated between ``t0`` and ``t1``.

    The rate is linear on every sub-interval between consecutive knots
    (``t0``, the interior samples, ``t1``; edge rates linearly interpolated).
    Each increment is ``expm(w_mean * dt + dt**2 / 12 * (w_a x w_b))``: the
    trapezoidal rotation plus the second-order correction for a rate whose
    direction turns, which keeps results independent of where the interval
    is split.
    """
    lo, hi = g.span
    if not (lo <= t0 < t1 <= hi):
        raise TimeRangeError(f"[{t0}, {t1}] not inside gyro span [{lo}, {hi}]")
    ts = g.timestamps
    inner = ts[(ts > t0) & (ts < t1)]
    knots = np.concatenate([[t0], inner, [t1]])
    w = g.rate_at(knots)
    dt = np.diff(knots)[:, None]
    wa, wb = w[:-1], w[1:]
    incr = exp_so3(0.5 * (wa + wb) * dt + dt * dt / 12.0 * np.cross(wa, wb))
    R = np.eye(3)
    for E in incr:
        R = R @ E
    return R


def kabsch_align(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Proper rotation ``R`` minimising ``sum ||R a_i - b_i||^2``.

    The vectors are not centred: they are angular velocities, not positions.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValueError("point sets differ in shape")
    if len(a) < 3:
        raise DegenerateGeometryError("need at least three vector pairs")
    H = a.T @ b
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-12 * max(S[0], 1e-300):
        raise DegenerateGeometryError("vectors are collinear; rotation not determined")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    return Vt.T @ np.diag([1.0, 1.0, d]) @ U.T


def _parabolic_vertex(ym: float, y0: float, yp: float) -> float:
    den = ym - 2.0 * y0 + yp
    if den <= 0:
        return 0.0
    return 0.5 * (ym - yp) / den


def sync_time_offset(a: GyroSeries, b: GyroSeries, search: float, step: float,
                     min_overlap: int = 10) -> float:
    """Offset ``d`` such that ``b(t + d)`` best matches ``a(t)``.

    The disagreement for a candidate offset is the mean squared difference of
    the angular-rate magnitudes, compared at ``a``'s timestamps inside the
    overlap. The best grid offset is refined by a parabola through it and its
    two neighbours.
    """
    if not (search > 0 and step > 0):
        raise ValueError("search and step must be positive")
    k = int(np.floor(search / step + 1e-9))
    offsets = np.arange(-k, k + 1) * step
    mag_a = np.linalg.norm(a.rates, axis=1)
    mag_b = np.linalg.norm(b.rates, axis=1)
    b_lo, b_hi = b.span

    def cost(d: float) -> float:
        sel = (a.timestamps + d >= b_lo) & (a.timestamps + d <= b_hi)
        if sel.sum() < min_overlap:
            return np.inf
        mb = np.interp(a.timestamps[sel] + d, b.timestamps, mag_b)
        return float(np.mean((mag_a[sel] - mb) ** 2))

    costs = np.array([cost(d) for d in offsets])
    if not np.isfinite(costs).any():
        raise TimeRangeError("series do not overlap at any candidate offset")
    i = int(np.argmin(costs))
    if 0 < i < len(offsets) - 1 and np.isfinite(costs[i - 1]) and np.isfinite(costs[i + 1]):
        return float(offsets[i] + step * _parabolic_vertex(costs[i - 1], costs[i], costs[i + 1]))
    return float(offsets[i])


def build_ground_truth(g: GyroSeries, frame_times, extrinsic: np.ndarray | None = None):
    """Forward rotation from each frame to the next, in the camera frame.

    ``extrinsic`` rotates sensor-frame vectors into the camera frame; each
    integrated rotation ``R`` becomes ``extrinsic @ R @ extrinsic.T``.
    """
    E = np.eye(3) if extrinsic is None else np.asarray(extrinsic, dtype=np.float64)
    ft = np.asarray(frame_times, dtype=np.float64)
    if len(ft) < 2 or np.any(np.diff(ft) <= 0):
        raise DataError("frame times must be strictly increasing, at least two")
    return [E @ integrate_gyro(g, ft[i], ft[i + 1]) @ E.T for i in range(len(ft) - 1)]


# -- CSV ---------------------------------------------------------------------

def _read_rows(path, header: tuple[str, ...]):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            first = next(rd)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise DataError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        rows = []
        for n, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{n}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{path}:{n}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows)


GYRO_HEADER = ("timestamp_s", "wx", "wy", "wz")
GT_HEADER = ("frame", "qw", "qx", "qy", "qz")


def read_gyro_csv(path) -> GyroSeries:
    arr = _read_rows(path, GYRO_HEADER)
    return GyroSeries(arr[:, 0], arr[:, 1:])


def write_gyro_csv(path, g: GyroSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GYRO_HEADER)
        for t, r in zip(g.timestamps, g.rates):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in r])


def quat_to_matrix(q, convention: str = "hamilton") -> np.ndarray:
    """Rotation matrix of quaternion ``(w, x, y, z)``.

    ``"jpl"`` quaternions encode the transpose of the Hamilton matrix with the
    same components.
    """
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    if convention == "hamilton":
        return R
    if convention == "jpl":
        return R.T
    raise ValueError(f"unknown quaternion convention {convention!r}")


def matrix_to_quat(R, convention: str = "hamilton") -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if convention == "jpl":
        R = R.T
    elif convention != "hamilton":
        raise ValueError(f"unknown quaternion convention {convention!r}")
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = [0.0, 0.0, 0.0, 0.0]
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q = np.array(q)
    return q if q[0] >= 0 else -q


def read_ground_truth_csv(path, convention: str = "hamilton") -> list:
    arr = _read_rows(path, GT_HEADER)
    frames = arr[:, 0]
    if np.any(np.diff(frames) <= 0):
        raise DataError(f"{path}: frame indices must increase")
    return [quat_to_matrix(q, convention) for q in arr[:, 1:]]


def write_ground_truth_csv(path, rotations, convention: str = "hamilton") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GT_HEADER)
        for i, R in enumerate(rotations):
            q = matrix_to_quat(R, convention)
            w.writerow([i] + [f"{v:.17g}" for v in q])


# -- run configuration ------------------------------------------------------

def load_config(path) -> dict:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: top level must be an object")
    return cfg


def save_config(path, cfg: dict) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def list_flow_files(directory) -> list[str]:
    return sorted(os.path.join(directory, f) for f in os.listdir(directory)
                  if f.endswith(".flo"))
