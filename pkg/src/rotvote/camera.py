"""Camera intrinsics and the flow-field container shared by every module.

Image coordinates follow x right, y down, z forward. Inside a
:class:`FlowField` the sample positions are stored relative to the principal
point so the first-order motion-field equations apply directly; conversion
from raw pixel indices happens once, in :meth:`FlowField.from_dense`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @classmethod
    def centered(cls, f: float, width: int, height: int) -> "CameraIntrinsics":
        return cls(f=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for frames resized by ``factor`` (focal length, principal
        point and image size all scale together)."""
        return CameraIntrinsics(
            f=self.f * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )

    def as_dict(self) -> dict:
        return {"f": self.f, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


def grid_positions(width: int, height: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel columns/rows of a regular sampling grid with the given stride."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    cols = np.arange(0, width, stride, dtype=np.float64)
    rows = np.arange(0, height, stride, dtype=np.float64)
    px, py = np.meshgrid(cols, rows)
    return px.ravel(), py.ravel()


@dataclass
class FlowField:
    """Sparse set of flow samples ``(x, y, u, v)``.

    ``x``/``y`` are relative to the principal point, ``u``/``v`` in pixels per
    frame. All four arrays are 1-D float64 of equal length.
    """

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    intrinsics: CameraIntrinsics
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        arrs = [np.ascontiguousarray(a, dtype=np.float64).ravel()
                for a in (self.x, self.y, self.u, self.v)]
        n = arrs[0].size
        if any(a.size != n for a in arrs):
            raise ValueError("x, y, u, v must have equal length")
        self.x, self.y, self.u, self.v = arrs

    def __len__(self) -> int:
        return self.x.size

    @property
    def flow(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=1)

    def subset(self, mask_or_index) -> "FlowField":
        return FlowField(self.x[mask_or_index], self.y[mask_or_index],
                         self.u[mask_or_index], self.v[mask_or_index],
                         self.intrinsics, dict(self.meta))

    def strided(self, stride: int) -> "FlowField":
        """Keep samples on the pixel grid ``(stride*i, stride*j)``."""
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if stride == 1:
            return self
        px, py = self.pixel_coords()
        ix, iy = np.rint(px).astype(np.int64), np.rint(py).astype(np.int64)
        return self.subset((ix % stride == 0) & (iy % stride == 0))

    def pixel_coords(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x + self.intrinsics.cx, self.y + self.intrinsics.cy

    @classmethod
    def from_dense(cls, flow: np.ndarray, intrinsics: CameraIntrinsics,
                   stride: int = 1) -> "FlowField":
        """Sample a dense ``(H, W, 2)`` flow raster on a regular grid.

        Pixels whose flow is not finite are dropped.
        """
        flow = np.asarray(flow, dtype=np.float64)
        h, w = flow.shape[:2]
        if flow.ndim != 3 or flow.shape[2] != 2:
            raise ValueError(f"expected (H, W, 2) flow, got {flow.shape}")
        if (w, h) != (intrinsics.width, intrinsics.height):
            raise ValueError(
                f"flow raster is {w}x{h} but intrinsics describe "
                f"{intrinsics.width}x{intrinsics.height}"
            )
        px, py = grid_positions(w, h, stride)
        ix, iy = px.astype(np.intp), py.astype(np.intp)
        uv = flow[iy, ix]
        ok = np.isfinite(uv).all(axis=1)
        return cls(px[ok] - intrinsics.cx, py[ok] - intrinsics.cy,
                   uv[ok, 0], uv[ok, 1], intrinsics)

    def to_dense(self) -> np.ndarray:
        """Scatter samples back into an ``(H, W, 2)`` raster, NaN elsewhere."""
        k = self.intrinsics
        out = np.full((k.height, k.width, 2), np.nan, dtype=np.float32)
        px, py = self.pixel_coords()
        ix = np.rint(px).astype(np.intp)
        iy = np.rint(py).astype(np.intp)
        out[iy, ix, 0] = self.u
        out[iy, ix, 1] = self.v
        return out
