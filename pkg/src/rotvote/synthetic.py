"""Flow fields with known ground truth from the first-order motion model.

The generator adds, per sample, the rotational term, the depth-dependent
translational term, a constant offset inside any moving-object rectangle and
isotropic Gaussian noise. It is the reference every estimator is checked
against, so it evaluates the motion-field formula directly and shares no code
with the voting path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraIntrinsics, FlowField, grid_positions

DEFAULT_INTRINSICS = CameraIntrinsics(f=400.0, cx=240.0, cy=135.0, width=480, height=270)


def rotational_flow(x, y, f, r):
    a, b, c = (float(v) for v in r)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    u = a * x * y / f - b * (f * f + x * x) / f + c * y
    v = a * (f * f + y * y) / f - b * x * y / f - c * x
    return u, v


def translational_flow(x, y, f, t, Z):
    U, V, W = (float(v) for v in t)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if np.any(Z <= 0):
        raise ValueError("depth must be positive")
    return (-f * U + x * W) / Z, (-f * V + y * W) / Z


# -- depth presets -----------------------------------------------------------

def constant_depth(z: float) -> dict:
    return {"kind": "constant", "z": z}


def ramp_depth(z_top: float, z_bottom: float) -> dict:
    """Depth varying linearly with image row (a ground plane seen obliquely)."""
    return {"kind": "ramp", "z_top": z_top, "z_bottom": z_bottom}


def two_layer_depth(z_near: float, z_far: float, near_rows: float) -> dict:
    """Near plane below row fraction ``near_rows``, far background above."""
    return {"kind": "two_layer", "z_near": z_near, "z_far": z_far, "near_rows": near_rows}


def _eval_depth(depth, px, py, k: CameraIntrinsics):
    if callable(depth):
        return np.asarray(depth(px, py), dtype=np.float64) * np.ones_like(px)
    if isinstance(depth, dict):
        kind = depth["kind"]
        if kind == "constant":
            return np.full_like(px, float(depth["z"]))
        if kind == "ramp":
            s = py / max(k.height - 1, 1)
            return depth["z_top"] + s * (depth["z_bottom"] - depth["z_top"])
        if kind == "two_layer":
            near = py >= depth["near_rows"] * k.height
            return np.where(near, depth["z_near"], depth["z_far"])
        raise ValueError(f"unknown depth preset {kind!r}")
    arr = np.asarray(depth, dtype=np.float64)
    if arr.ndim == 0:
        return np.full_like(px, float(arr))
    if arr.shape == (k.height, k.width):
        return arr[py.astype(np.intp), px.astype(np.intp)]
    if arr.shape == px.shape:
        return arr
    raise ValueError(f"depth grid of shape {arr.shape} matches neither image nor samples")


@dataclass
class Mover:
    """Axis-aligned pixel rectangle ``[x0, x1) x [y0, y1)`` with a flow offset."""

    x0: float
    y0: float
    x1: float
    y1: float
    du: float
    dv: float

    def contains(self, px, py):
        return (px >= self.x0) & (px < self.x1) & (py >= self.y0) & (py < self.y1)


@dataclass
class SceneSpec:
    rotation: Sequence[float] = (0.0, 0.0, 0.0)
    translation: Sequence[float] = (0.0, 0.0, 0.0)
    depth: object = field(default_factory=lambda: constant_depth(1e6))
    movers: list = field(default_factory=list)
    noise_sigma: float = 0.0
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    stride: int = 15

    def __post_init__(self) -> None:
        self.movers = [m if isinstance(m, Mover) else Mover(**m) for m in self.movers]
        if isinstance(self.intrinsics, dict):
            self.intrinsics = CameraIntrinsics(**self.intrinsics)
        k = self.intrinsics
        for m in self.movers:
            if not (0 <= m.x0 <= m.x1 <= k.width and 0 <= m.y0 <= m.y1 <= k.height):
                raise ValueError(f"mover {m} outside the {k.width}x{k.height} image")

    def to_dict(self) -> dict:
        if callable(self.depth) or isinstance(self.depth, np.ndarray):
            raise TypeError("only preset or scalar depths can be serialised")
        return {
            "rotation": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
            "depth": self.depth,
            "movers": [asdict(m) for m in self.movers],
            "noise_sigma": self.noise_sigma,
            "intrinsics": self.intrinsics.as_dict(),
            "stride": self.stride,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def generate_field(spec: SceneSpec, seed: int = 0, positions=None):
    """Sample the scene on its grid; returns ``(FlowField, rotation)``.

    ``positions`` optionally overrides the sampling grid with explicit pixel
    coordinates ``(px, py)``.
    """
    k = spec.intrinsics
    if positions is None:
        px, py = grid_positions(k.width, k.height, spec.stride)
    else:
        px, py = (np.asarray(a, dtype=np.float64).ravel() for a in positions)
    x, y = px - k.cx, py - k.cy
    u, v = rotational_flow(x, y, k.f, spec.rotation)
    if np.any(np.asarray(spec.translation, dtype=float) != 0):
        Z = _eval_depth(spec.depth, px, py, k)
        tu, tv = translational_flow(x, y, k.f, spec.translation, Z)
        u, v = u + tu, v + tv
    else:
        Z = _eval_depth(spec.depth, px, py, k)
        if np.any(Z <= 0):
            raise ValueError("depth must be positive")
    u, v = u.copy(), v.copy()
    for m in spec.movers:
        inside = m.contains(px, py)
        u[inside] += m.du
        v[inside] += m.dv
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        u += rng.normal(0.0, spec.noise_sigma, u.shape)
        v += rng.normal(0.0, spec.noise_sigma, v.shape)
    fld = FlowField(x, y, u, v, k, meta={"seed": seed})
    return fld, np.asarray(spec.rotation, dtype=np.float64)


def random_rotation(rng: np.random.Generator, half_width_deg: float) -> np.ndarray:
    return np.radians(rng.uniform(-half_width_deg, half_width_deg, 3))


def rotation_only(rotation, noise_sigma: float = 0.0,
                  intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                  stride: int = 15) -> SceneSpec:
    return SceneSpec(rotation=tuple(rotation), noise_sigma=noise_sigma,
                     intrinsics=intrinsics, stride=stride)


def crowded_scene(rng: np.random.Generator, rotation, inlier_fraction: float = 0.25,
                  noise_sigma: float = 0.1,
                  intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                  stride: int = 15, n_movers: int = 6):
    """Scene where only ``inlier_fraction`` of the grid sees distant static
    structure.

    The remaining samples are near-field (random depths between 1 and 4 units)
    under a random camera translation, and a few rectangles carry
    independently moving objects. Returns ``(SceneSpec, far_mask)``; the mask
    marks the rotation-consistent samples that lie outside every mover.
    """
    k = intrinsics
    px, py = grid_positions(k.width, k.height, stride)
    n = px.size
    n_far = int(round(inlier_fraction * n))
    far = np.zeros(n, dtype=bool)
    far[rng.choice(n, n_far, replace=False)] = True
    depth = np.where(far, 1e9, rng.uniform(1.0, 4.0, n))
    t = rng.normal(0.0, 1.0, 3)
    t[2] = abs(t[2]) + 0.5
    t *= 0.02 / np.linalg.norm(t) * 4.0
    movers = []
    for _ in range(n_movers):
        w = rng.uniform(0.08, 0.2) * k.width
        h = rng.uniform(0.15, 0.4) * k.height
        x0 = rng.uniform(0, k.width - w)
        y0 = rng.uniform(0, k.height - h)
        du, dv = rng.normal(0.0, 3.0, 2)
        movers.append(Mover(x0, y0, x0 + w, y0 + h, float(du), float(dv)))
    spec = SceneSpec(rotation=tuple(rotation), translation=tuple(t), depth=depth,
                     movers=movers, noise_sigma=noise_sigma, intrinsics=k, stride=stride)
    in_mover = np.zeros(n, dtype=bool)
    for m in movers:
        in_mover |= m.contains(px, py)
    return spec, far & ~in_mover
