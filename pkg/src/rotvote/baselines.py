"""Non-robust least-squares rotation and its RANSAC wrapper.

Both solve the rotational flow equations, which are linear in ``(A, B, C)``:
every sample contributes two rows of a ``2N x 3`` system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import FlowField
from .geometry import DegenerateGeometryError, lh_rotational_matrix

_COND_LIMIT = 1e12


def _system(field: FlowField):
    M = lh_rotational_matrix(field.x, field.y, field.intrinsics.f)   # (N, 2, 3)
    b = np.stack([field.u, field.v], axis=1)                         # (N, 2)
    return M, b


def _solve_normal(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched normal-equation solve; ``M`` is ``(..., K, 3)``."""
    Mt = np.swapaxes(M, -1, -2)
    N = Mt @ M
    rhs = (Mt @ b[..., None])[..., 0]
    return np.linalg.solve(N, rhs[..., None])[..., 0]


def ls_rotation(field: FlowField, return_residual: bool = False):
    """Least-squares ``(A, B, C)`` over all samples.

    With ``return_residual`` the RMS flow residual in pixels is returned too.
    """
    if len(field) == 0:
        raise DegenerateGeometryError("no flow samples")
    M, b = _system(field)
    A = M.reshape(-1, 3)
    rhs = b.reshape(-1)
    N = A.T @ A
    if np.linalg.cond(N) > _COND_LIMIT:
        raise DegenerateGeometryError("rank-deficient rotation system")
    r = np.linalg.solve(N, A.T @ rhs)
    if not return_residual:
        return r
    res = (A @ r - rhs).reshape(-1, 2)
    return r, float(np.sqrt(np.mean(np.sum(res ** 2, axis=1))))


def flow_residuals(field: FlowField, rotations: np.ndarray) -> np.ndarray:
    """Euclidean prediction error per sample for one or many rotations."""
    M, b = _system(field)
    rotations = np.atleast_2d(rotations)
    pred = np.einsum("nij,hj->hni", M, rotations)
    err = np.linalg.norm(pred - b[None], axis=-1)
    return err if len(rotations) > 1 else err[0]


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    sample_size: int = 2
    inlier_threshold: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sample_size < 2:
            raise ValueError("sample_size must be >= 2")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")


@dataclass
class RansacResult:
    rotation: np.ndarray | None
    inlier_mask: np.ndarray
    success: bool
    best_hypothesis: int


def ransac_hypotheses(field: FlowField, cfg: RansacConfig) -> np.ndarray:
    """The seeded hypothesis sequence ``(iterations, 3)``; degenerate minimal
    samples yield NaN rows."""
    rng = np.random.default_rng(cfg.seed)
    n = len(field)
    idx = np.stack([rng.choice(n, cfg.sample_size, replace=False)
                    for _ in range(cfg.iterations)])
    M, b = _system(field)
    Ms = M[idx].reshape(cfg.iterations, -1, 3)
    bs = b[idx].reshape(cfg.iterations, -1)
    Mt = np.swapaxes(Ms, -1, -2)
    normal = Mt @ Ms
    ok = np.linalg.cond(normal) < _COND_LIMIT
    hyp = np.full((cfg.iterations, 3), np.nan)
    if ok.any():
        hyp[ok] = _solve_normal(Ms[ok], bs[ok])
    return hyp


def ransac_rotation(field: FlowField, cfg: RansacConfig = RansacConfig()) -> RansacResult:
    """Hypothesise from random minimal samples, keep the one with the most
    samples within ``inlier_threshold`` pixels (earliest wins ties), then refit
    on its inliers."""
    if len(field) < cfg.sample_size:
        raise ValueError(f"need at least {cfg.sample_size} samples, got {len(field)}")
    hyp = ransac_hypotheses(field, cfg)
    valid = ~np.isnan(hyp).any(axis=1)
    counts = np.full(len(hyp), -1, dtype=np.int64)
    if valid.any():
        err = flow_residuals(field, hyp[valid]).reshape(int(valid.sum()), -1)
        counts[valid] = (err <= cfg.inlier_threshold).sum(axis=1)
    best = int(np.argmax(counts))
    if counts[best] < cfg.sample_size:
        return RansacResult(None, np.zeros(len(field), dtype=bool), False, best)
    mask = flow_residuals(field, hyp[best]) <= cfg.inlier_threshold
    try:
        rot = ls_rotation(field.subset(mask))
    except DegenerateGeometryError:
        rot = hyp[best]
    return RansacResult(rot, mask, True, best)
