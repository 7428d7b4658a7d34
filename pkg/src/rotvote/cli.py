"""Command-line front end.

Every subcommand writes its outputs plus ``run_config.json`` (the fully
resolved configuration) into ``--out``. Angles on the command line and in
output files are degrees. Exit status: 0 success, 2 configuration error,
3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import RansacConfig, ls_rotation, ransac_rotation
from .camera import CameraIntrinsics, FlowField
from .evaluation import (
    SequenceData,
    evaluate,
    geodesic_angle,
    summary,
    sweep_bin_size,
    sweep_csv,
    sweep_stride,
    voting_estimator,
    write_csv,
)
from .geometry import DegenerateGeometryError, exp_so3
from .ingest import (
    DataError,
    FlowFormatError,
    build_ground_truth,
    list_flow_files,
    load_config,
    read_flow,
    read_ground_truth_csv,
    read_gyro_csv,
    remove_bias,
    save_config,
    write_flow,
    write_ground_truth_csv,
)
from .synthetic import DEFAULT_INTRINSICS, SceneSpec, crowded_scene, generate_field, random_rotation
from .voting import DEFAULT_BIN_DEG, DEFAULT_RANGE_DEG, BinGrid, NoVotesError, estimate_rotation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

MANIFEST = "run_config.json"
HIST_EDGES = np.linspace(0.0, 1.0, 21)


class ConfigError(ValueError):
    pass


# -- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_grid(p):
    p.add_argument("--range-deg", type=float, default=None,
                   help=f"half-width of the rotation cube (default {DEFAULT_RANGE_DEG})")
    p.add_argument("--bin-deg", type=float, default=None,
                   help=f"bin edge length (default {DEFAULT_BIN_DEG})")
    p.add_argument("--model", choices=("lh", "perspective"), default=None)
    p.add_argument("--stride", type=int, default=None, help="flow sampling stride in pixels (default 15)")
    p.add_argument("--raster", choices=("sample", "traverse"), default=None)
    p.add_argument("--threads", type=int, default=None)


def _add_camera(p):
    p.add_argument("--intrinsics", help="JSON file with f, cx, cy, width, height")
    p.add_argument("--focal", type=float, help="focal length in pixels")
    p.add_argument("--cx", type=float)
    p.add_argument("--cy", type=float)


def _add_common(p):
    p.add_argument("--config", help="JSON file supplying defaults for any option")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rotvote", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="per-frame rotation for a directory of .flo files")
    p.add_argument("--flows", required=True)
    p.add_argument("--gt", help="optional ground-truth CSV; adds an error column")
    p.add_argument("--convention", choices=("hamilton", "jpl"), default=None)
    _add_common(p), _add_camera(p), _add_grid(p)

    p = sub.add_parser("eval", help="per-frame errors against ground truth")
    p.add_argument("--flows", required=True, action="append", help="repeat per sequence")
    p.add_argument("--gt", required=True, action="append", help="one per --flows, same order")
    p.add_argument("--method", choices=("vote", "ls", "ransac"), default=None)
    p.add_argument("--convention", choices=("hamilton", "jpl"), default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--no-timing", action="store_true", default=None,
                   help="write nan instead of wall times")
    _add_common(p), _add_camera(p), _add_grid(p)

    for name, flag, conv in (("sweep-bin", "--sizes-deg", _floats),
                             ("sweep-stride", "--strides", _ints)):
        p = sub.add_parser(name, help="ablation table")
        p.add_argument("--flows", required=True, action="append")
        p.add_argument("--gt", required=True, action="append")
        p.add_argument(flag, type=conv, required=True)
        p.add_argument("--convention", choices=("hamilton", "jpl"), default=None)
        p.add_argument("--repeats", type=int, default=None)
        p.add_argument("--no-timing", action="store_true", default=None)
        _add_common(p), _add_camera(p), _add_grid(p)

    p = sub.add_parser("synth", help="write synthetic flow files and ground truth")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--scene", choices=("rotation", "crowded"), default=None)
    p.add_argument("--max-deg", type=float, default=None, help="rotation components uniform in +-max")
    p.add_argument("--noise-px", type=float, default=None)
    p.add_argument("--inlier-fraction", type=float, default=None)
    p.add_argument("--convention", choices=("hamilton", "jpl"), default=None)
    _add_common(p), _add_camera(p)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = sub.add_parser("gyro-gt", help="frame-to-frame ground truth from a gyro log")
    p.add_argument("--gyro", required=True)
    p.add_argument("--frame-times", required=True, help="CSV with header t_s")
    p.add_argument("--extrinsic", help="JSON 3x3 sensor-to-camera rotation")
    p.add_argument("--time-offset", type=float, default=None,
                   help="seconds added to frame times to reach gyro time")
    p.add_argument("--bias-window", type=_floats, default=None, help="t_start,t_end stationary window")
    p.add_argument("--convention", choices=("hamilton", "jpl"), default=None)
    _add_common(p)
    return ap


DEFAULTS = {
    "range_deg": DEFAULT_RANGE_DEG,
    "bin_deg": DEFAULT_BIN_DEG,
    "model": "lh",
    "stride": 15,
    "raster": "sample",
    "threads": 1,
    "seed": 0,
    "convention": "hamilton",
    "method": "vote",
    "repeats": 3,
    "frames": 10,
    "scene": "rotation",
    "max_deg": 3.5,
    "noise_px": 0.0,
    "inlier_fraction": 0.25,
    "time_offset": 0.0,
    "bias_window": None,
    "no_timing": False,
}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags (in that
    order of increasing precedence)."""
    known = set(vars(args)) - {"config", "out", "command"}
    cfg = {k: v for k, v in DEFAULTS.items() if k in known}
    if getattr(args, "config", None):
        try:
            loaded = load_config(args.config)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except DataError as exc:
            raise ConfigError(str(exc)) from None
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys for '{args.command}': {', '.join(unknown)}")
        cfg.update(loaded)
    for k, v in vars(args).items():
        if v is not None and k != "config":
            cfg[k] = v
    if "bin_deg" in cfg:
        if cfg["range_deg"] <= 0 or cfg["bin_deg"] <= 0:
            raise ConfigError("--range-deg and --bin-deg must be positive")
        if cfg["bin_deg"] > 2 * cfg["range_deg"]:
            raise ConfigError("--bin-deg larger than the whole cube")
        if int(cfg["stride"]) < 1:
            raise ConfigError("--stride must be >= 1")
    return cfg


def _grid(cfg) -> BinGrid:
    return BinGrid.from_degrees(cfg["range_deg"], cfg["bin_deg"])


def _intrinsics(cfg, width: int, height: int) -> CameraIntrinsics:
    if cfg.get("intrinsics"):
        src = cfg["intrinsics"]
        if isinstance(src, str):
            try:
                src = load_config(src)
            except FileNotFoundError:
                raise ConfigError(f"intrinsics file not found: {cfg['intrinsics']}") from None
        try:
            k = CameraIntrinsics(**{key: src[key] for key in ("f", "cx", "cy", "width", "height")})
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad intrinsics: {exc}") from None
    elif cfg.get("focal"):
        cx = cfg.get("cx")
        cy = cfg.get("cy")
        try:
            k = CameraIntrinsics(cfg["focal"], width / 2.0 if cx is None else cx,
                                 height / 2.0 if cy is None else cy, width, height)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        raise ConfigError("camera unknown: pass --intrinsics FILE or --focal")
    if (k.width, k.height) != (width, height):
        raise DataError(f"flow rasters are {width}x{height} but intrinsics say {k.width}x{k.height}")
    return k


def _load_sequence(flow_dir: str, cfg, stride: int, gt_path: str | None = None):
    if not os.path.isdir(flow_dir):
        raise DataError(f"flow directory not found: {flow_dir}")
    files = list_flow_files(flow_dir)
    if not files:
        raise DataError(f"no .flo files in {flow_dir}")
    rasters = [read_flow(p) for p in files]
    h, w = rasters[0].shape[:2]
    if any(r.shape != rasters[0].shape for r in rasters):
        raise DataError(f"{flow_dir}: flow rasters differ in size")
    k = _intrinsics(cfg, w, h)
    flows = [FlowField.from_dense(r, k, stride) for r in rasters]
    gt = None
    if gt_path is not None:
        if not os.path.isfile(gt_path):
            raise DataError(f"ground-truth file not found: {gt_path}")
        gt = read_ground_truth_csv(gt_path, cfg["convention"])
        if len(gt) != len(flows):
            raise DataError(f"{len(flows)} flow files in {flow_dir} but {len(gt)} "
                            f"ground-truth rows in {gt_path}")
    return files, flows, gt, k


def _dataset(cfg, stride: int) -> list[SequenceData]:
    if len(cfg["flows"]) != len(cfg["gt"]):
        raise ConfigError("give exactly one --gt per --flows")
    out = []
    for fd, gp in zip(cfg["flows"], cfg["gt"]):
        _, flows, gt, _ = _load_sequence(fd, cfg, stride, gp)
        out.append(SequenceData(os.path.basename(os.path.normpath(fd)), flows, gt))
    return out


def _fmt(v: float) -> str:
    return f"{v:.9g}"


# -- commands ---------------------------------------------------------------

def cmd_estimate(cfg, out):
    files, flows, gt, k = _load_sequence(cfg["flows"], cfg, int(cfg["stride"]), cfg.get("gt"))
    g = _grid(cfg)
    fractions = []
    with open(os.path.join(out, "rotations.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["frame", "file", "rx_deg", "ry_deg", "rz_deg", "angle_deg",
                "inlier_fraction", "votes"]
        if gt is not None:
            head.append("error_deg")
        w.writerow(head)
        for i, (path, fld) in enumerate(zip(files, flows)):
            try:
                res = estimate_rotation(fld, g, model=cfg["model"], threads=cfg["threads"],
                                        raster=cfg["raster"])
            except NoVotesError as exc:
                raise DataError(f"{path}: {exc}") from None
            r = np.degrees(res.rotation)
            row = [i, os.path.basename(path), *map(_fmt, r), _fmt(float(np.linalg.norm(r))),
                   _fmt(res.inlier_fraction), res.vote_count]
            if gt is not None:
                row.append(_fmt(geodesic_angle(exp_so3(res.rotation), gt[i])))
            w.writerow(row)
            fractions.append(res.inlier_fraction)
    hist, _ = np.histogram(fractions, bins=HIST_EDGES)
    with open(os.path.join(out, "inlier_histogram.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "frames"])
        for lo, hi, c in zip(HIST_EDGES[:-1], HIST_EDGES[1:], hist):
            w.writerow([f"{lo:.2f}", f"{hi:.2f}", int(c)])


def _estimator(cfg):
    if cfg["method"] == "vote":
        return voting_estimator(_grid(cfg), cfg["model"], 1, cfg["threads"], cfg["raster"])
    if cfg["method"] == "ls":
        return ls_rotation
    rc = RansacConfig(seed=int(cfg["seed"]))
    def run(fld):
        res = ransac_rotation(fld, rc)
        return res.rotation if res.success else np.zeros(3)
    return run


def _blank_times(evals):
    for ev in evals:
        ev.times = [float("nan")] * len(ev.times)


def cmd_eval(cfg, out):
    data = _dataset(cfg, int(cfg["stride"]))
    evals = evaluate(data, _estimator(cfg), cfg["method"], {}, int(cfg["repeats"]))
    if cfg.get("no_timing"):
        _blank_times(evals)
    with open(os.path.join(out, "eval.csv"), "w", newline="") as fh:
        write_csv(evals, fh)
    sm = summary(evals)
    if cfg.get("no_timing"):
        sm["mean_time_s"] = None
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(sm, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_sweep_bin(cfg, out):
    data = _dataset(cfg, int(cfg["stride"]))
    rows = sweep_bin_size(data, cfg["sizes_deg"], cfg["range_deg"], cfg["model"], 1,
                          int(cfg["repeats"]), cfg["raster"])
    if cfg.get("no_timing"):
        for r in rows:
            r.mean_time_s = float("nan")
    with open(os.path.join(out, "sweep_bin.csv"), "w") as fh:
        fh.write(sweep_csv(rows, "bin_deg"))


def cmd_sweep_stride(cfg, out):
    data = _dataset(cfg, 1)
    rows = sweep_stride(data, cfg["strides"], _grid(cfg), cfg["model"],
                        int(cfg["repeats"]), cfg["raster"])
    if cfg.get("no_timing"):
        for r in rows:
            r.mean_time_s = float("nan")
    with open(os.path.join(out, "sweep_stride.csv"), "w") as fh:
        fh.write(sweep_csv(rows, "stride"))


def cmd_synth(cfg, out):
    if int(cfg["frames"]) < 1:
        raise ConfigError("--frames must be >= 1")
    base = DEFAULT_INTRINSICS
    width = cfg.get("width") or base.width
    height = cfg.get("height") or base.height
    if cfg.get("intrinsics") or cfg.get("focal"):
        k = _intrinsics(cfg, width, height)
    else:
        k = CameraIntrinsics(base.f, width / 2.0, height / 2.0, width, height)
    rng = np.random.default_rng(int(cfg["seed"]))
    gts = []
    for i in range(int(cfg["frames"])):
        r = random_rotation(rng, float(cfg["max_deg"]))
        if cfg["scene"] == "crowded":
            spec, _ = crowded_scene(rng, r, float(cfg["inlier_fraction"]),
                                    float(cfg["noise_px"]), k, stride=1)
        else:
            spec = SceneSpec(rotation=tuple(r), noise_sigma=float(cfg["noise_px"]),
                             intrinsics=k, stride=1)
        fld, _ = generate_field(spec, seed=int(cfg["seed"]) * 100003 + i)
        write_flow(os.path.join(out, f"frame_{i:05d}.flo"), fld.to_dense())
        gts.append(exp_so3(r))
    write_ground_truth_csv(os.path.join(out, "gt.csv"), gts, cfg["convention"])
    save_config(os.path.join(out, "intrinsics.json"), k.as_dict())


def cmd_gyro_gt(cfg, out):
    for key in ("gyro", "frame_times"):
        if not os.path.isfile(cfg[key]):
            raise DataError(f"file not found: {cfg[key]}")
    g = read_gyro_csv(cfg["gyro"])
    if cfg.get("bias_window"):
        if len(cfg["bias_window"]) != 2:
            raise ConfigError("--bias-window takes t_start,t_end")
        g = remove_bias(g, *cfg["bias_window"])
    with open(cfg["frame_times"], newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t_s"]:
        raise DataError(f"{cfg['frame_times']}: expected header t_s")
    try:
        times = np.array([float(r[0]) for r in rows[1:] if r]) + float(cfg["time_offset"])
    except ValueError as exc:
        raise DataError(f"{cfg['frame_times']}: {exc}") from None
    E = None
    if cfg.get("extrinsic"):
        ext = cfg["extrinsic"]
        E = np.asarray(load_config(ext)["R"] if isinstance(ext, str) else ext, dtype=np.float64)
        if E.shape != (3, 3) or not np.allclose(E @ E.T, np.eye(3), atol=1e-6):
            raise ConfigError("extrinsic must be a 3x3 rotation")
    track = build_ground_truth(g, times, E)
    write_ground_truth_csv(os.path.join(out, "gt.csv"), track, cfg["convention"])


COMMANDS = {
    "estimate": cmd_estimate,
    "eval": cmd_eval,
    "sweep-bin": cmd_sweep_bin,
    "sweep-stride": cmd_sweep_stride,
    "synth": cmd_synth,
    "gyro-gt": cmd_gyro_gt,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        out = cfg.pop("out")
        os.makedirs(out, exist_ok=True)
        manifest = {"version": __version__, **cfg}
        save_config(os.path.join(out, MANIFEST), manifest)
        COMMANDS[cfg["command"]](cfg, out)
    except ConfigError as exc:
        print(f"rotvote: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FlowFormatError, DegenerateGeometryError, OSError) as exc:
        print(f"rotvote: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
