"""Accumulator-free Hough voting over a cube of rotation vectors.

Each flow sample contributes the list of bins its compatible manifold passes
through (at most one vote per bin); the estimate is the centre of the most
frequent bin. No dense 3-D accumulator is ever allocated: votes are packed
into 64-bit keys and the mode is found by sorting.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import FlowField
from .geometry import (lh_lines, perspective_manifold, perspective_theta_range,
                       precompute_directions)

OUTSIDE = np.int64(-1)
_BITS = 21
_MASK = (1 << _BITS) - 1
CHUNK = 2048

DEFAULT_RANGE_DEG = 4.0
DEFAULT_BIN_DEG = 0.057


class NoVotesError(RuntimeError):
    """Every compatible manifold missed the search cube."""


@dataclass(frozen=True)
class BinGrid:
    range: float = math.radians(DEFAULT_RANGE_DEG)
    bin_size: float = math.radians(DEFAULT_BIN_DEG)

    def __post_init__(self) -> None:
        if not (self.range > 0 and self.bin_size > 0):
            raise ValueError("range and bin_size must be positive")
        if self.n_per_axis >= 1 << _BITS:
            raise ValueError(f"{self.n_per_axis} bins per axis do not fit a packed key")

    @classmethod
    def from_degrees(cls, range_deg: float = DEFAULT_RANGE_DEG,
                     bin_deg: float = DEFAULT_BIN_DEG) -> "BinGrid":
        return cls(math.radians(range_deg), math.radians(bin_deg))

    @property
    def n_per_axis(self) -> int:
        return int(math.ceil(2.0 * self.range / self.bin_size - 1e-9))

    @property
    def n_bins(self) -> int:
        return self.n_per_axis ** 3

    @property
    def max_votes_per_line(self) -> float:
        return math.sqrt(3.0) * self.n_per_axis + 2

    def indices(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        return np.floor((r + self.range) / self.bin_size).astype(np.int64)

    def inside(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        return np.all((r >= -self.range) & (r < self.range), axis=-1)

    def bin_of(self, r: np.ndarray) -> np.ndarray:
        """Packed key(s) of the bin containing ``r``; ``OUTSIDE`` if off-cube."""
        r = np.asarray(r, dtype=np.float64)
        inside = self.inside(r)
        idx = np.clip(self.indices(r), 0, self.n_per_axis - 1)
        return np.where(inside, pack(idx), OUTSIDE)

    def bin_center(self, key) -> np.ndarray:
        """Centre of the part of the bin inside the cube.

        When ``2 * range`` is not a multiple of ``bin_size`` the last bin on
        each axis is cut by the cube face; its centre is that of the cut bin.
        """
        lo = -self.range + unpack(key) * self.bin_size
        return 0.5 * (lo + np.minimum(lo + self.bin_size, self.range))

    def as_dict(self) -> dict:
        return {"range_deg": math.degrees(self.range),
                "bin_deg": math.degrees(self.bin_size),
                "n_per_axis": self.n_per_axis}


def pack(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    return (idx[..., 0] << (2 * _BITS)) | (idx[..., 1] << _BITS) | idx[..., 2]


def unpack(key) -> np.ndarray:
    key = np.asarray(key, dtype=np.int64)
    return np.stack([(key >> (2 * _BITS)) & _MASK, (key >> _BITS) & _MASK,
                     key & _MASK], axis=-1)


# -- rasterisation ---------------------------------------------------------

def _clip_to_cube(p0: np.ndarray, d: np.ndarray, half: float):
    """Slab clipping of lines ``p0 + t*d`` (unit ``d``) against ``[-half, half]^3``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t_a = (-half - p0) * inv
        t_b = (half - p0) * inv
    lo = np.minimum(t_a, t_b)
    hi = np.maximum(t_a, t_b)
    par = d == 0
    inside_slab = (p0 >= -half) & (p0 <= half)
    lo = np.where(par, np.where(inside_slab, -np.inf, np.inf), lo)
    hi = np.where(par, np.where(inside_slab, np.inf, -np.inf), hi)
    return lo.max(axis=-1), hi.min(axis=-1)


def _collapse(keys: np.ndarray, owner: np.ndarray):
    """Drop off-cube samples and consecutive repeats within one owner."""
    ok = keys != OUTSIDE
    keys, owner = keys[ok], owner[ok]
    if keys.size:
        keep = np.ones(keys.size, dtype=bool)
        keep[1:] = (keys[1:] != keys[:-1]) | (owner[1:] != owner[:-1])
        keys, owner = keys[keep], owner[keep]
    return keys, owner


def _dedup(keys: np.ndarray, owner: np.ndarray):
    order = np.lexsort((keys, owner))
    keys, owner = keys[order], owner[order]
    keep = np.ones(keys.size, dtype=bool)
    keep[1:] = (keys[1:] != keys[:-1]) | (owner[1:] != owner[:-1])
    return keys[keep], owner[keep]


def _traverse(a: np.ndarray, b: np.ndarray, owner: np.ndarray, g: BinGrid):
    """Every bin crossed by the segments ``a[i] -> b[i]`` (already inside the
    closed cube), in order along each segment.

    The parameters at which a segment crosses grid planes split it into
    pieces that each lie in a single bin; the midpoint of every non-empty
    piece identifies that bin.
    """
    ia = (a + g.range) / g.bin_size
    ib = (b + g.range) / g.bin_size
    fa, fb = np.floor(ia), np.floor(ib)
    ncross = np.abs(fb - fa).astype(np.int64)           # (m, 3)
    seg_counts = ncross.sum(axis=1) + 2                 # + both endpoints
    total = int(seg_counts.sum())
    seg = np.repeat(np.arange(len(a)), seg_counts)
    starts = np.cumsum(seg_counts) - seg_counts
    j = np.arange(total) - np.repeat(starts, seg_counts)
    # local slot j: 0 -> t=0, 1 -> t=1, then crossings axis by axis
    t = np.where(j == 1, 1.0, 0.0)
    jj = j - 2
    c0, c1 = ncross[:, 0][seg], ncross[:, 1][seg]
    axis = np.where(jj < c0, 0, np.where(jj < c0 + c1, 1, 2))
    m = jj - np.where(axis == 0, 0, np.where(axis == 1, c0, c0 + c1))
    cross = j >= 2
    if np.any(cross):
        sc, ac, mc = seg[cross], axis[cross], m[cross]
        lo = fa[sc, ac]
        up = ib[sc, ac] > ia[sc, ac]
        plane = np.where(up, lo + 1 + mc, lo - mc)
        t[cross] = (plane - ia[sc, ac]) / (ib[sc, ac] - ia[sc, ac])
    order = np.lexsort((t, seg))
    t, seg = t[order], seg[order]
    same = seg[1:] == seg[:-1]
    nonempty = same & (t[1:] > t[:-1])
    mid = 0.5 * (t[1:] + t[:-1])[nonempty]
    s_id = seg[1:][nonempty]
    pts = a[s_id] + mid[:, None] * (b[s_id] - a[s_id])
    return _collapse(g.bin_of(pts), owner[s_id])


def _clip_segments(a: np.ndarray, b: np.ndarray, g: BinGrid):
    d = b - a
    t0, t1 = _clip_to_cube(a, d, g.range)
    t0 = np.maximum(t0, 0.0)
    t1 = np.minimum(t1, 1.0)
    ok = t1 > t0
    return a + t0[:, None] * d, a + t1[:, None] * d, ok


def line_votes(p0: np.ndarray, d: np.ndarray, g: BinGrid, raster: str = "sample"):
    """Votes of many lines at once; returns ``(keys, owner)``.

    ``raster="sample"`` (default) takes samples one bin width apart along the
    clipped line, which caps a line at ``sqrt(3) * n_per_axis + 1`` votes but
    can step over a bin the line only clips. ``raster="traverse"`` lists every
    bin the exact line passes through, up to ``3 * n_per_axis`` of them.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=np.float64))
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    t0, t1 = _clip_to_cube(p0, d, g.range)
    length = np.where(t1 > t0, t1 - t0, 0.0)
    if raster == "traverse":
        ok = length > 0
        idx = np.flatnonzero(ok)
        a = p0[ok] + t0[ok, None] * d[ok]
        b = p0[ok] + t1[ok, None] * d[ok]
        return _traverse(a, b, idx, g)
    if raster != "sample":
        raise ValueError(f"unknown raster mode {raster!r}")
    return _lattice_samples(p0, d, t0, t1, g)


def _level(m, h, half: float):
    """Lattice level ``m``: the middle of layer ``[-half + m*h, -half + (m+1)*h)``
    cut at the cube face ``half``."""
    return np.minimum(-half + (m + 0.5) * h, 0.5 * m * h)


def _layer_span(lo, hi, g: BinGrid, h):
    """First and one-past-last lattice index ``m`` whose level lies in
    ``[lo, hi]``."""
    n = np.ceil(2 * g.range / h - 1e-9).astype(np.int64)
    first = np.ceil((lo + g.range) / h - 0.5).astype(np.int64)
    last = np.floor((hi + g.range) / h - 0.5).astype(np.int64)
    first = np.clip(first, 0, n)
    last = np.clip(last, -1, n - 1)
    # the last layer may be cut by the cube face, which moves its level down
    top = _level(n - 1, h, g.range)
    top_in = (top >= lo) & (top <= hi)
    last = np.where(top_in, n - 1, np.minimum(last, n - 2))
    first = np.where((first >= n - 1) & ~top_in & (top < lo), n, first)
    first = np.where((first >= n - 1) & top_in, np.minimum(first, n - 1), first)
    return first, np.maximum(last + 1, first)


def _lattice_samples(p0, d, t0, t1, g: BinGrid):
    """Samples one bin width apart along each (unit-direction) line.

    Samples sit where the line's dominant coordinate hits the levels
    ``-range + (m + 0.5) * h`` with ``h = bin_size * |d_major|``; anchoring
    the phase to the cube rather than to where each line enters it keeps
    nearly coincident manifolds sampling nearly the same points.
    """
    major = np.argmax(np.abs(d), axis=1)
    rows = np.arange(len(p0))
    dm = d[rows, major]
    pm0 = p0[rows, major]
    h = g.bin_size * np.abs(dm)
    ok = t1 > t0
    ea = np.where(ok, pm0 + t0 * dm, 0.0)
    eb = np.where(ok, pm0 + t1 * dm, 0.0)
    first, stop = _layer_span(np.minimum(ea, eb), np.maximum(ea, eb), g, h)
    counts = np.where(ok, stop - first, 0)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    owner = np.repeat(rows, counts)
    starts = np.cumsum(counts) - counts
    layer = first[owner] + np.arange(total) - np.repeat(starts, counts)
    level = _level(layer, h[owner], g.range)
    # the cut last bin along the dominant axis can be thinner than the
    # spacing; give it a sample of its own so no crossed bin is skipped
    cut_lo = -g.range + (g.n_per_axis - 1) * g.bin_size
    if g.range - cut_lo < g.bin_size * (1 - 1e-9):
        mid = 0.5 * (cut_lo + g.range)
        extra = np.flatnonzero(ok & (np.minimum(ea, eb) <= mid) & (np.maximum(ea, eb) >= mid))
        owner = np.concatenate([owner, extra])
        level = np.concatenate([level, np.full(extra.size, mid)])
        order = np.lexsort((level * np.sign(dm[owner]), owner))
        owner, level = owner[order], level[order]
        total = owner.size
    t = (level - pm0[owner]) / dm[owner]
    pts = p0[owner] + t[:, None] * d[owner]
    pts[np.arange(total), major[owner]] = level
    return _collapse(g.bin_of(pts), owner)


def cast_votes(line, g: BinGrid, raster: str = "sample") -> np.ndarray:
    """Duplicate-free bin keys for one :class:`CompatLine`."""
    keys, _ = line_votes(line.p0, line.dir, g, raster)
    return np.unique(keys)


def cast_votes_curve(samples, g: BinGrid) -> np.ndarray:
    """Duplicate-free bin keys of an ordered sampled curve."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    keys = g.bin_of(samples)
    return np.unique(keys[keys != OUTSIDE])


def _curve_samples(pts: np.ndarray, g: BinGrid) -> np.ndarray:
    """Resample the in-cube stretch of a densely evaluated curve on the same
    lattice :func:`_lattice_samples` uses for its chord direction. The curve
    must be monotone along its dominant axis."""
    inside = g.inside(pts)
    if not inside.any():
        return pts[:0]
    first, last = np.flatnonzero(inside)[[0, -1]]
    seg = pts[max(first - 1, 0):min(last + 1, len(pts) - 1) + 1]
    ax = int(np.argmax(np.abs(seg[-1] - seg[0])))
    coord = seg[:, ax]
    if coord[-1] < coord[0]:
        seg, coord = seg[::-1], coord[::-1]
    if np.any(np.diff(coord) <= 0):
        raise ValueError("curve is not monotone along its dominant axis")
    chord = seg[-1] - seg[0]
    h = g.bin_size * abs(chord[ax]) / np.linalg.norm(chord)
    lo_l, hi_l = _layer_span(np.array([coord[0]]), np.array([coord[-1]]), g, h)
    levels = _level(np.arange(lo_l[0], hi_l[0]), h, g.range)
    cut_lo = -g.range + (g.n_per_axis - 1) * g.bin_size
    mid = 0.5 * (cut_lo + g.range)
    if g.range - cut_lo < g.bin_size * (1 - 1e-9) and coord[0] <= mid <= coord[-1]:
        levels = np.sort(np.append(levels, mid))
    out = np.stack([np.interp(levels, coord, seg[:, c]) for c in range(3)], axis=1)
    out[:, ax] = levels
    return out


def curve_votes(field: FlowField, g: BinGrid, raster: str = "sample",
                step: float | None = None):
    """Votes of the exact perspective manifolds of every sample in ``field``.

    Each curve is first evaluated with spin-angle steps of ``step`` (a quarter
    bin by default). ``raster="sample"`` then resamples its in-cube stretch
    about one bin width apart on the same lattice as the line sampler;
    ``raster="traverse"`` walks the polyline through every bin.
    """
    if raster not in ("sample", "traverse"):
        raise ValueError(f"unknown raster mode {raster!r}")
    step = g.bin_size / 4 if step is None else step
    k = field.intrinsics
    keys_all, owner_all, heads, tails, seg_owner = [], [], [], [], []
    for i in range(len(field)):
        s = (field.x[i], field.y[i], field.u[i], field.v[i])
        thetas = perspective_theta_range(s, k, g.range, step)
        pts = perspective_manifold(s, k, thetas)
        if raster == "sample":
            keys = g.bin_of(_curve_samples(pts, g))
            keys = keys[keys != OUTSIDE]
            keys_all.append(keys)
            owner_all.append(np.full(keys.size, i, dtype=np.int64))
        else:
            heads.append(pts[:-1])
            tails.append(pts[1:])
            seg_owner.append(np.full(len(pts) - 1, i, dtype=np.int64))
    if raster == "traverse" and heads:
        a, b, ok = _clip_segments(np.concatenate(heads), np.concatenate(tails), g)
        keys, owner = _traverse(a[ok], b[ok], np.concatenate(seg_owner)[ok], g)
        keys_all, owner_all = [keys], [owner]
    if not keys_all:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return _dedup(np.concatenate(keys_all), np.concatenate(owner_all))


# -- mode finding ----------------------------------------------------------

def _select(keys: np.ndarray, counts: np.ndarray, g: BinGrid):
    """Max count, then smallest bin-centre magnitude, then smallest key."""
    best = counts.max()
    cand = keys[counts == best]
    mag = np.sum(g.bin_center(cand) ** 2, axis=-1)
    order = np.lexsort((cand, mag))
    return int(cand[order[0]]), int(best)


def find_mode(tallies, g: BinGrid | None = None):
    """Winning key and its multiplicity over several vote lists.

    Ties go to the bin whose centre is closest to the identity rotation on
    grid ``g`` (default grid if omitted), then to the smaller packed key.
    """
    lists = [np.asarray(t, dtype=np.int64).ravel() for t in tallies]
    allk = np.concatenate(lists) if lists else np.empty(0, np.int64)
    if allk.size == 0:
        raise NoVotesError("no votes were cast")
    keys, counts = np.unique(allk, return_counts=True)
    return _select(keys, counts, BinGrid() if g is None else g)


# -- estimation --------------------------------------------------------------

@dataclass
class VoteTally:
    keys: np.ndarray
    counts_per_flow: np.ndarray
    winner: int
    winner_count: int

    @property
    def owners(self) -> np.ndarray:
        return np.repeat(np.arange(self.counts_per_flow.size), self.counts_per_flow)

    def per_flow(self, i: int) -> np.ndarray:
        start = int(self.counts_per_flow[:i].sum())
        return self.keys[start:start + int(self.counts_per_flow[i])]


@dataclass
class EstimateResult:
    rotation: np.ndarray
    winner: int
    winner_count: int
    inlier_mask: np.ndarray
    inlier_fraction: float
    vote_count: int
    elapsed: float
    tally: VoteTally | None = field(default=None, repr=False)


def _chunk_votes(field: FlowField, directions, g: BinGrid, model: str, raster: str):
    # non-finite flow (invalid pixels) casts no votes
    ok = np.isfinite(field.u) & np.isfinite(field.v)
    idx = np.flatnonzero(ok)
    sub = field if idx.size == len(field) else field.subset(idx)
    if model == "lh":
        d = None if directions is None else directions[idx]
        d, p0 = lh_lines(sub, d)
        keys, owner = line_votes(p0, d, g, raster)
    elif model == "perspective":
        keys, owner = curve_votes(sub, g, raster)
    else:
        raise ValueError(f"unknown model {model!r}")
    owner = idx[owner]
    counts = np.bincount(owner, minlength=len(field)).astype(np.int64)
    return keys, counts


def estimate_rotation(field: FlowField, g: BinGrid | None = None,
                      model: str = "lh", threads: int | None = 1,
                      directions: np.ndarray | None = None,
                      keep_tally: bool = False,
                      raster: str = "sample") -> EstimateResult:
    """Most-voted rotation bin for a flow field.

    Samples are processed in fixed-size chunks, so the chunk boundaries and
    therefore the result do not depend on ``threads``. ``directions`` may
    carry a table from :func:`precompute_directions` matching ``field``.
    """
    g = BinGrid() if g is None else g
    if len(field) == 0:
        raise ValueError("empty flow field")
    t_start = time.perf_counter()
    if model == "lh" and directions is None:
        directions = precompute_directions(np.stack([field.x, field.y], axis=1),
                                           field.intrinsics.f)
    bounds = [(i, min(i + CHUNK, len(field))) for i in range(0, len(field), CHUNK)]

    def work(b):
        sl = slice(*b)
        d = directions[sl] if directions is not None else None
        return _chunk_votes(field.subset(sl), d, g, model, raster)

    workers = threads if threads and threads > 0 else (os.cpu_count() or 1)
    if workers == 1 or len(bounds) == 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, bounds))

    keys = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    if keys.size == 0:
        raise NoVotesError("every compatible manifold missed the search cube")
    ukeys, ucounts = np.unique(keys, return_counts=True)
    winner, wcount = _select(ukeys, ucounts, g)
    owners = np.repeat(np.arange(len(field)), counts)
    inliers = np.zeros(len(field), dtype=bool)
    inliers[owners[keys == winner]] = True
    voting = int(np.count_nonzero(counts))
    elapsed = time.perf_counter() - t_start
    tally = VoteTally(keys, counts, winner, wcount) if keep_tally else None
    return EstimateResult(
        rotation=g.bin_center(winner),
        winner=winner,
        winner_count=wcount,
        inlier_mask=inliers,
        inlier_fraction=wcount / voting,
        vote_count=int(keys.size),
        elapsed=elapsed,
        tally=tally,
    )
