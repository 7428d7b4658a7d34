"""Frame-to-frame camera rotation from optical flow by voting in a rotation cube."""

from __future__ import annotations

from .camera import CameraIntrinsics, FlowField, grid_positions
from .geometry import (
    DegenerateGeometryError,
    exp_so3,
    lh_line,
    lh_lines,
    log_so3,
    perspective_manifold,
    precompute_directions,
)
from .voting import (
    BinGrid,
    EstimateResult,
    NoVotesError,
    cast_votes,
    cast_votes_curve,
    estimate_rotation,
    find_mode,
)
from .baselines import RansacConfig, RansacResult, ls_rotation, ransac_rotation
from .evaluation import SequenceData, SequenceEval, aae, geodesic_angle, sweep_bin_size, sweep_stride
from .ingest import (
    GyroSeries,
    build_ground_truth,
    integrate_gyro,
    kabsch_align,
    read_flow,
    read_flow_field,
    sync_time_offset,
    write_flow,
)
from .synthetic import SceneSpec, generate_field

__version__ = "0.1.0"

__all__ = [
    "BinGrid", "CameraIntrinsics", "DegenerateGeometryError", "EstimateResult",
    "FlowField", "GyroSeries", "NoVotesError", "RansacConfig", "RansacResult",
    "SceneSpec", "SequenceData", "SequenceEval", "aae", "build_ground_truth",
    "cast_votes", "cast_votes_curve", "estimate_rotation", "exp_so3", "find_mode",
    "generate_field", "geodesic_angle", "grid_positions", "integrate_gyro",
    "kabsch_align", "lh_line", "lh_lines", "log_so3", "ls_rotation",
    "perspective_manifold", "precompute_directions", "ransac_rotation", "read_flow",
    "read_flow_field", "sweep_bin_size", "sweep_stride", "sync_time_offset",
    "write_flow",
]
