"""Camera-geometry primitives and compatible-rotation manifolds.

Rotation vectors throughout the package are the camera's own rotation
``(A, B, C)`` about its x, y, z axes, in radians per frame interval. A static
world point seen along unit ray ``P`` in the first frame is seen along
``Q = expm(-r) @ P`` in the second, which is the sign convention under which
the first-order (Longuet-Higgins) rotational flow field reads

    u = A*x*y/f - B*(f**2 + x**2)/f + C*y
    v = A*(f**2 + y**2)/f - B*x*y/f - C*x

so both the exact perspective manifold and the first-order line live in the
same ``(A, B, C)`` voting space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, FlowField


class DegenerateGeometryError(ValueError):
    """Raised when an input makes the requested construction ill-defined."""


def skew(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map; broadcasts over leading axes."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = skew(w)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`exp_so3` for rotation angles in ``[0, pi)``.

    Near ``pi`` the axis is recovered from the symmetric part of ``R``.
    """
    R = np.asarray(R, dtype=np.float64)
    lead = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    tr = np.trace(R, axis1=-2, axis2=-1)
    cos_t = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    vee = np.stack([R[..., 2, 1] - R[..., 1, 2],
                    R[..., 0, 2] - R[..., 2, 0],
                    R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    sin_t = np.sin(theta)
    small = theta < 1e-6
    scale = np.where(small, 0.5 + theta**2 / 12.0,
                     theta / (2.0 * np.where(small, 1.0, sin_t)))
    out = scale[..., None] * vee

    near_pi = theta > np.pi - 1e-4
    if np.any(near_pi):
        Rp = R[near_pi]
        tp = theta[near_pi]
        B = (Rp + np.swapaxes(Rp, -1, -2)) / 2.0 - np.eye(3) * np.cos(tp)[:, None, None]
        B /= (1.0 - np.cos(tp))[:, None, None]
        diag = np.clip(np.diagonal(B, axis1=-2, axis2=-1), 0.0, None)
        i = np.argmax(diag, axis=-1)
        rows = B[np.arange(len(i)), i]
        axis = rows / np.linalg.norm(rows, axis=-1, keepdims=True)
        vp = vee[near_pi]
        sgn = np.where(np.einsum("ij,ij->i", axis, vp) < 0, -1.0, 1.0)
        out[near_pi] = axis * (sgn * tp)[:, None]
    return out.reshape(lead + (3,))


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    return (np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0)
            and abs(np.linalg.det(R) - 1.0) <= tol)


def backproject(px: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Unit viewing ray(s) for pixel coordinates ``px`` (``(..., 2)``)."""
    px = np.asarray(px, dtype=np.float64)
    ray = np.stack([px[..., 0] - k.cx, px[..., 1] - k.cy,
                    np.full(px.shape[:-1], k.f)], axis=-1)
    return ray / np.linalg.norm(ray, axis=-1, keepdims=True)


def project(ray: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    ray = np.asarray(ray, dtype=np.float64)
    return np.stack([k.f * ray[..., 0] / ray[..., 2] + k.cx,
                     k.f * ray[..., 1] / ray[..., 2] + k.cy], axis=-1)


def rotation_about_axis(axis: np.ndarray, theta: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    return exp_so3(axis * theta)


def rotation_from_to(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation carrying unit vector ``p`` onto ``q``.

    The axis is ``p x q`` and the angle ``arccos(p . q)``. Antipodal inputs
    leave the axis undefined and raise :class:`DegenerateGeometryError`.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    axis = np.cross(p, q)
    s = np.linalg.norm(axis)
    c = float(np.dot(p, q))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        raise DegenerateGeometryError("antipodal vectors: rotation axis undefined")
    theta = np.arctan2(s, c)
    return exp_so3(axis / s * theta)


def perspective_manifold(s, k: CameraIntrinsics, thetas) -> np.ndarray:
    """Exact compatible rotations for one flow sample, one per ``theta``.

    ``s`` is ``(x, y, u, v)`` with ``x, y`` relative to the principal point.
    Each row ``r`` of the result satisfies ``expm(-r) @ P == Q`` where ``P``
    and ``Q`` are the unit rays before and after the flow.
    """
    x, y, u, v = (float(c) for c in s)
    P = np.array([x, y, k.f])
    P /= np.linalg.norm(P)
    Q = np.array([x + u, y + v, k.f])
    Q /= np.linalg.norm(Q)
    R0 = rotation_from_to(P, Q)
    thetas = np.asarray(thetas, dtype=np.float64)
    Rs = exp_so3(thetas[:, None] * Q) @ R0
    # camera rotation is the inverse of the point rotation
    return log_so3(np.swapaxes(Rs, -1, -2))


def perspective_theta_range(s, k: CameraIntrinsics, half_width: float,
                            step: float) -> np.ndarray:
    """Spin angles covering every rotation of the curve within a cube of
    half-width ``half_width``.

    The curve is close to a straight line of unit speed in ``theta`` near the
    origin, so a symmetric span of ``sqrt(3)*half_width`` plus the base
    rotation angle covers the cube; ``step`` bounds the per-sample advance.
    """
    x, y, u, v = (float(c) for c in s)
    P = np.array([x, y, k.f]) / np.hypot(np.hypot(x, y), k.f)
    Q = np.array([x + u, y + v, k.f]) / np.hypot(np.hypot(x + u, y + v), k.f)
    base = float(np.arctan2(np.linalg.norm(np.cross(P, Q)), np.dot(P, Q)))
    span = np.sqrt(3.0) * half_width + base + step
    n = int(np.ceil(2 * span / step)) + 1
    return np.linspace(-span, span, n)


def lh_plane_normals(x, y, f):
    """Normals of the two planes ``n_u . (A,B,C) = u`` and ``n_v . (A,B,C) = v``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_u = np.stack([x * y / f, -(f * f + x * x) / f, y], axis=-1)
    n_v = np.stack([(f * f + y * y) / f, -x * y / f, -x], axis=-1)
    return n_u, n_v


def lh_rotational_matrix(x, y, f) -> np.ndarray:
    """Stacked ``(..., 2, 3)`` map from ``(A, B, C)`` to rotational flow."""
    n_u, n_v = lh_plane_normals(x, y, f)
    return np.stack([n_u, n_v], axis=-2)


@dataclass(frozen=True)
class CompatLine:
    """Straight line ``p0 + t * dir`` of first-order compatible rotations."""

    dir: np.ndarray
    p0: np.ndarray


def precompute_directions(grid, f: float) -> np.ndarray:
    """Line directions ``n_u x n_v`` for each ``(x, y)`` in ``grid``.

    These depend on position and focal length only, never on the flow.
    """
    grid = np.asarray(grid, dtype=np.float64).reshape(-1, 2)
    n_u, n_v = lh_plane_normals(grid[:, 0], grid[:, 1], f)
    return np.cross(n_u, n_v)


def lh_intercepts(x, y, u, v, f) -> np.ndarray:
    """Points where each compatible line crosses ``C = 0``.

    Solves the 2x2 rotational system with ``C`` fixed at zero; its
    determinant is ``f**2 + x**2 + y**2`` and never vanishes.
    """
    x, y, u, v = (np.asarray(a, dtype=np.float64) for a in (x, y, u, v))
    det = f * f + x * x + y * y
    a = (v * (f * f + x * x) - u * x * y) / (f * det)
    b = (v * x * y - u * (f * f + y * y)) / (f * det)
    return np.stack([a, b, np.zeros_like(a)], axis=-1)


def lh_line(s, f: float) -> CompatLine:
    x, y, u, v = (float(c) for c in s)
    d = precompute_directions([(x, y)], f)[0]
    return CompatLine(dir=d, p0=lh_intercepts(x, y, u, v, f))


def lh_lines(field: FlowField, directions: np.ndarray | None = None):
    """Directions and intercepts for every sample of ``field``."""
    f = field.intrinsics.f
    if directions is None:
        directions = precompute_directions(np.stack([field.x, field.y], axis=1), f)
    return directions, lh_intercepts(field.x, field.y, field.u, field.v, f)
