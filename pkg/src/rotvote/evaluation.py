"""Angular-error metrics, per-frame timing and ablation sweeps."""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .camera import FlowField
from .geometry import exp_so3
from .synthetic import DEFAULT_INTRINSICS, crowded_scene, generate_field, random_rotation, rotation_only
from .voting import BinGrid, estimate_rotation

CSV_COLUMNS = ("config", "sequence", "frame", "error_deg", "time_s")


def geodesic_angle(r_est: np.ndarray, r_gt: np.ndarray) -> float:
    """Angle in degrees of ``r_est @ r_gt.T``."""
    r_est = np.asarray(r_est, dtype=np.float64)
    r_gt = np.asarray(r_gt, dtype=np.float64)
    c = (np.trace(r_est @ r_gt.T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def aae(errors_by_sequence: Iterable[Sequence[float]]) -> float:
    """Frame-weighted mean error over all frames of all sequences."""
    total, count = 0.0, 0
    for seq in errors_by_sequence:
        for e in seq:
            total += float(e)
            count += 1
    if count == 0:
        raise ValueError("no error values")
    return total / count


def standard_error(errors: Sequence[float]) -> float:
    """Standard error of the mean, with the frame as resampling unit."""
    if len(errors) < 2:
        return 0.0
    return statistics.stdev(errors) / math.sqrt(len(errors))


@dataclass
class SequenceData:
    """Flow fields and ground-truth forward rotations of one sequence."""

    name: str
    flows: list
    gt: list

    def __post_init__(self) -> None:
        if len(self.flows) != len(self.gt):
            raise ValueError(
                f"sequence {self.name!r}: {len(self.flows)} flow fields but "
                f"{len(self.gt)} ground-truth rotations"
            )


@dataclass
class SequenceEval:
    method: str
    sequence: str
    errors: list
    times: list
    config: dict = field(default_factory=dict)

    @property
    def aae(self) -> float:
        return aae([self.errors])

    def rows(self):
        for i, (e, t) in enumerate(zip(self.errors, self.times)):
            yield (self.method, self.sequence, i, e, t)


def synthetic_dataset(n_sequences: int = 1, frames: int = 10, seed: int = 0,
                      noise_sigma: float = 0.0, half_width_deg: float = 3.5,
                      stride: int = 1, intrinsics=DEFAULT_INTRINSICS,
                      crowded: bool = False) -> list[SequenceData]:
    """Seeded sequences of synthetic fields with their true rotations."""
    rng = np.random.default_rng(seed)
    out = []
    for s in range(n_sequences):
        flows, gt = [], []
        for i in range(frames):
            r = random_rotation(rng, half_width_deg)
            if crowded:
                spec, _ = crowded_scene(rng, r, noise_sigma=noise_sigma,
                                        intrinsics=intrinsics, stride=stride)
            else:
                spec = rotation_only(r, noise_sigma, intrinsics, stride)
            fld, _ = generate_field(spec, seed=int(rng.integers(2**31)))
            flows.append(fld)
            gt.append(r)
        out.append(SequenceData(f"synth{s:02d}", flows, gt))
    return out


def _as_matrix(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return exp_so3(r) if r.shape == (3,) else r


def time_call(fn: Callable, *args, repeats: int = 3):
    """Result of ``fn(*args)`` and the median wall time over ``repeats`` calls."""
    times, out = [], None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def evaluate(dataset: Sequence[SequenceData], estimator: Callable[[FlowField], object],
             method: str = "vote", config: dict | None = None,
             repeats: int = 3) -> list[SequenceEval]:
    """Run ``estimator`` on every frame; it returns a rotation vector or matrix."""
    out = []
    for seq in dataset:
        errors, times = [], []
        for fld, gt in zip(seq.flows, seq.gt):
            est, dt = time_call(estimator, fld, repeats=repeats)
            errors.append(geodesic_angle(_as_matrix(est), _as_matrix(gt)))
            times.append(dt)
        out.append(SequenceEval(method, seq.name, errors, times, dict(config or {})))
    return out


def voting_estimator(grid: BinGrid | None = None, model: str = "lh", stride: int = 1,
                     threads: int | None = 1, raster: str = "sample"):
    grid = BinGrid() if grid is None else grid

    def run(fld: FlowField):
        if stride > 1:
            fld = fld.strided(stride)
        return estimate_rotation(fld, grid, model=model, threads=threads,
                                 raster=raster).rotation
    return run


def write_csv(evals: Sequence[SequenceEval], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for ev in evals:
        for row in ev.rows():
            w.writerow((row[0], row[1], row[2], f"{row[3]:.9g}", f"{row[4]:.6g}"))


def summary(evals: Sequence[SequenceEval]) -> dict:
    errs = [e for ev in evals for e in ev.errors]
    times = [t for ev in evals for t in ev.times]
    return {
        "aae_deg": aae([ev.errors for ev in evals]),
        "sem_deg": standard_error(errs),
        "mean_time_s": float(np.mean(times)) if times else float("nan"),
        "frames": len(errs),
        "sequences": {ev.sequence: ev.aae for ev in evals},
    }


@dataclass
class SweepRow:
    value: float
    aae_deg: float
    mean_time_s: float


def sweep_bin_size(dataset, sizes_deg: Sequence[float], range_deg: float = 4.0,
                   model: str = "lh", stride: int = 1, repeats: int = 3,
                   raster: str = "sample") -> list[SweepRow]:
    """One evaluation per bin size, everything else fixed."""
    if any(s <= 0 for s in sizes_deg):
        raise ValueError("bin sizes must be positive")
    rows = []
    for s in sizes_deg:
        est = voting_estimator(BinGrid.from_degrees(range_deg, s), model, stride,
                               raster=raster)
        evals = evaluate(dataset, est, f"bin={s}", {"bin_deg": s}, repeats)
        sm = summary(evals)
        rows.append(SweepRow(float(s), sm["aae_deg"], sm["mean_time_s"]))
    return rows


def sweep_stride(dataset, strides: Sequence[int], grid: BinGrid | None = None,
                 model: str = "lh", repeats: int = 3,
                 raster: str = "sample") -> list[SweepRow]:
    """One evaluation per spatial stride; flows are subsampled before voting."""
    if any(int(s) < 1 for s in strides):
        raise ValueError("strides must be >= 1")
    rows = []
    for s in strides:
        est = voting_estimator(grid, model, int(s), raster=raster)
        evals = evaluate(dataset, est, f"stride={s}", {"stride": int(s)}, repeats)
        sm = summary(evals)
        rows.append(SweepRow(float(s), sm["aae_deg"], sm["mean_time_s"]))
    return rows


def sweep_csv(rows: Sequence[SweepRow], name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((name, "aae_deg", "mean_time_s"))
    for r in rows:
        w.writerow((f"{r.value:g}", f"{r.aae_deg:.9g}", f"{r.mean_time_s:.6g}"))
    return buf.getvalue()
