"""Command-line front end.

Every subcommand takes ``--config FILE`` (flat ``key = value`` text) plus flags
named after the same keys. Precedence, lowest first: built-in defaults, the
config file, ``LCCAL_SEED`` (seed only), explicit flags.

Exit status: 0 success, 2 invalid input or configuration, 3 optimizer failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .augment import (NoOverlapError, generate_sample, generate_single_sided, intrinsics_from_meta,
                      intrinsics_meta, read_meta, write_bundle, write_meta)
from .depth_refine import AnchorError, depth_metrics, read_normalized_pgm, refine, write_normalized_pgm
from .diffmap import build_difference_map, write_difference_map
from .fusion import fuse, load_pose_directory, score_self_supervised, write_scores
from .geometry import MiscalibrationRange, RigidTransform, pose_error, read_pose, write_poses
from .io import FormatError, load_config, load_point_cloud, read_ppm, render_overlay, save_point_cloud
from .optimize import ConvergenceError, OptimizerConfig, refine_pose, refine_pose_shared
from .projection import CameraIntrinsics, project, read_depth_pgm, write_depth_pgm
from .scene import EmptySceneError, corridor, default_poses, generate_scene

log = logging.getLogger("lccal")

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration

def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _paths(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    return [t for t in str(text).replace(",", " ").split() if t]


@dataclass(frozen=True)
class Param:
    name: str
    kind: Callable[[Any], Any]
    default: Any = None
    help: str = ""
    check: Callable[[Any], bool] | None = None
    rule: str = ""            # human text for ``check``
    io: str = ""              # "in" paths must exist when set
    required: bool = False
    choices: tuple = ()


def _pos(v): return v > 0
def _nonneg(v): return v >= 0
def _ratio(v): return 0 < v <= 1


INTRINSICS = (
    Param("fx", float, 600.0, "focal length x (px)", _pos, "> 0"),
    Param("fy", float, 600.0, "focal length y (px)", _pos, "> 0"),
    Param("cx", float, 256.0, "principal point x (px)"),
    Param("cy", float, 128.0, "principal point y (px)"),
    Param("width", int, 512, "image width (px)", _pos, "> 0"),
    Param("height", int, 256, "image height (px)", _pos, "> 0"),
)

OPTIMIZER = (
    Param("max_iters", int, 100, "iteration cap per stage", _pos, "> 0"),
    Param("tol", float, 1e-8, "relative loss-change stop", _pos, "> 0"),
    Param("damping_init", float, 1e-4, "initial Levenberg damping", _pos, "> 0"),
    Param("alpha", float, 0.5, "weight of the LiDAR-to-camera term", _nonneg, ">= 0"),
    Param("beta", float, 0.5, "weight of the camera-to-LiDAR term", _nonneg, ">= 0"),
    Param("subsample_cap", int, 20000, "max points per cloud (0 = all)", _nonneg, ">= 0"),
    Param("occlusion_margin", float, 0.25, "occlusion test slack in meters (inf disables)", _nonneg, ">= 0"),
    Param("damping_max", float, 1e10, "give up when damping exceeds this", _pos, "> 0"),
    Param("cond_max", float, 1e12, "largest acceptable normal-matrix condition number", _pos, "> 0"),
)

SEED = Param("seed", int, 0, "random seed (LCCAL_SEED overrides the config file)")


class RunConfig(dict):
    """Validated parameters of one subcommand run, readable as attributes."""

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError:
            raise AttributeError(key) from None

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(max_iters=self.max_iters, tol=self.tol, damping_init=self.damping_init,
                               alpha=self.alpha, beta=self.beta, subsample_cap=self.subsample_cap,
                               seed=self.seed, occlusion_margin=self.occlusion_margin,
                               damping_max=self.damping_max, cond_max=self.cond_max)


def build_config(params: tuple[Param, ...], file_values: dict, flag_values: dict, env: dict) -> RunConfig:
    table = {p.name: p for p in params}
    unknown = sorted(set(file_values) - set(table))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    raw = {p.name: p.default for p in params}
    raw.update(file_values)
    if "seed" in table and env.get("LCCAL_SEED", "").strip():
        raw["seed"] = env["LCCAL_SEED"].strip()
    raw.update({k: v for k, v in flag_values.items() if v is not None})
    out = RunConfig()
    for p in params:
        v = raw[p.name]
        if v is None or v == "":
            if p.required:
                raise ConfigError(f"missing required parameter '{p.name}'")
            out[p.name] = None
            continue
        try:
            v = p.kind(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{p.name}: cannot parse {raw[p.name]!r}") from None
        if p.choices and v not in p.choices:
            raise ConfigError(f"{p.name}: must be one of {', '.join(p.choices)}")
        if p.check is not None and not p.check(v):
            raise ConfigError(f"{p.name}: must be {p.rule}, got {v!r}")
        if p.io == "in":
            for item in (v if isinstance(v, list) else [v]):
                if not Path(item).exists():
                    raise ConfigError(f"{p.name}: path does not exist: {item}")
        out[p.name] = v
    return out


# ---------------------------------------------------------------------------
# subcommands

def _intrinsics_for(cfg: RunConfig) -> CameraIntrinsics:
    if cfg.get("meta"):
        return intrinsics_from_meta(read_meta(cfg.meta))
    return cfg.intrinsics()


def _sub_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


def cmd_synth(cfg: RunConfig) -> int:
    intr = cfg.intrinsics()
    spec = corridor(cfg.seed, noise_sigma=cfg.noise_sigma, lidar_density=cfg.lidar_density,
                    camera_density=cfg.camera_density, distortion=cfg.distortion,
                    distortion_breaks=cfg.distortion_breaks)
    lidar_pose, cam_pose = default_poses()
    scene = generate_scene(spec, lidar_pose, cam_pose, intr)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_point_cloud(out / "lidar.bin", scene.lidar)
    save_point_cloud(out / "camcloud.bin", scene.cam_cloud)
    write_depth_pgm(out / "ldp.pgm", project(scene.lidar, scene.truth, intr))
    write_depth_pgm(out / "cdp.pgm", scene.cam_depth)
    write_normalized_pgm(out / "ncdp.pgm", scene.normalized_cdp)
    # the clouds are consistent at the true extrinsic, so no correction is needed
    write_poses(out / "t_cam.txt", [scene.truth])
    write_poses(out / "t_lidar.txt", [scene.truth])
    write_poses(out / "t_gt.txt", [RigidTransform()])
    write_poses(out / "truth.txt", [scene.truth])
    write_meta(out / "meta.txt", {**intrinsics_meta(intr), "seed": cfg.seed, "scene": cfg.scene,
                                  "noise_sigma": cfg.noise_sigma, "distortion": cfg.distortion})
    print(f"synth: {len(scene.lidar)} LiDAR points, {len(scene.cam_cloud)} camera points -> {out}")
    return EXIT_OK


def cmd_augment(cfg: RunConfig) -> int:
    intr = _intrinsics_for(cfg)
    lidar = load_point_cloud(cfg.lidar)
    cam = load_point_cloud(cfg.camcloud)
    base = read_pose(cfg.extrinsic)
    cam_range = MiscalibrationRange(cfg.rot_range, cfg.trans_range)
    lidar_range = MiscalibrationRange(cfg.lidar_rot_range, cfg.lidar_trans_range)
    out = Path(cfg.out)
    for i in range(cfg.count):
        seed = _sub_seed(cfg.seed, i)
        if cfg.mode == "double":
            sample = generate_sample(lidar, cam, base, cam_range, lidar_range, intr, seed)
        else:
            sample = generate_single_sided(lidar, cam, base, lidar_range, intr, seed)
        write_bundle(out / f"sample_{i:04d}", sample, {"seed": seed, "mode": cfg.mode})
    print(f"augment: {cfg.count} {cfg.mode}-sided samples -> {out}")
    return EXIT_OK


def cmd_refine_depth(cfg: RunConfig) -> int:
    intr = _intrinsics_for(cfg)
    ldp = read_depth_pgm(cfg.ldp, intr)
    ncdp = read_normalized_pgm(cfg.ncdp, intr, zero_is_invalid=cfg.zero_is_invalid)
    metric, anchors = refine(ldp, ncdp, cfg.anchors, return_anchors=True)
    write_depth_pgm(cfg.out, metric)
    if cfg.anchors_out:
        Path(cfg.anchors_out).write_text("".join(f"{c!r} {l!r}\n" for c, l in anchors.pairs))
    if cfg.diff_dir:
        write_difference_map(cfg.diff_dir, build_difference_map(ldp, metric, cfg.e_tar))
    print(f"refine-depth: {len(anchors)} anchors -> {cfg.out}")
    return EXIT_OK


def _load_frame(directory: str):
    d = Path(directory)
    for name in ("lidar.bin", "camcloud.bin", "meta.txt"):
        if not (d / name).exists():
            raise ConfigError(f"frame {d}: missing {name}")
    return (load_point_cloud(d / "lidar.bin"), load_point_cloud(d / "camcloud.bin"),
            intrinsics_from_meta(read_meta(d / "meta.txt")))


def cmd_calibrate(cfg: RunConfig) -> int:
    frames = [_load_frame(f) for f in cfg.frames]
    init = read_pose(cfg.init) if cfg.init else RigidTransform()
    opt = cfg.optimizer()
    intr = frames[0][2] if cfg.crop_to_image else None
    if cfg.crop_to_image and any(f[2] != intr for f in frames):
        raise ConfigError("shared calibration needs identical intrinsics across frames")
    if cfg.mode == "shared":
        res = refine_pose_shared([(f[0], f[1]) for f in frames], init, opt, intrinsics=intr)
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        write_poses(cfg.out, [res.pose])
        print(f"calibrate: shared pose over {len(frames)} frame(s), {res.status} after "
              f"{res.iterations} iterations, loss {res.loss.total:.6g} -> {cfg.out}")
        return EXIT_OK

    def one(frame):
        lidar, cam, fi = frame
        return refine_pose(lidar, cam, init, opt, intrinsics=fi if cfg.crop_to_image else None)

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        results = list(pool.map(one, frames))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    scores = []
    for i, (res, frame) in enumerate(zip(results, frames)):
        write_poses(out / f"frame_{i:04d}.txt", [res.pose])
        score = score_self_supervised(res.pose, frame[0], frame[1], intrinsics=frame[2] if cfg.crop_to_image else None)
        scores.append(max(score, np.finfo(float).tiny))
        print(f"frame {i}: {res.status} after {res.iterations} iterations, loss {res.loss.total:.6g}")
    write_scores(out / "scores.txt", scores)
    print(f"calibrate: {len(frames)} per-frame poses -> {out}")
    return EXIT_OK


def cmd_fuse(cfg: RunConfig) -> int:
    pose_set = load_pose_directory(cfg.poses, cfg.ratio)
    fused = fuse(pose_set, uniform=cfg.uniform)
    out = cfg.out or str(Path(cfg.poses) / "fused.txt")
    write_poses(out, [fused])
    print(f"fuse: top {pose_set.k} of {len(pose_set.poses)} poses -> {out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    lines = []
    if cfg.estimate or cfg.truth:
        if not (cfg.estimate and cfg.truth):
            raise ConfigError("pose evaluation needs both 'estimate' and 'truth'")
        err = pose_error(read_pose(cfg.estimate), read_pose(cfg.truth))
        lines += [f"e_r = {err.rotation_deg!r}", f"e_t = {err.translation_m!r}",
                  f"degenerate = {str(err.degenerate).lower()}"]
    if cfg.depth or cfg.depth_truth:
        if not (cfg.depth and cfg.depth_truth):
            raise ConfigError("depth evaluation needs both 'depth' and 'depth_truth'")
        m = depth_metrics(read_depth_pgm(cfg.depth), read_depth_pgm(cfg.depth_truth))
        lines += [f"{k} = {v!r}" for k, v in m._asdict().items()]
    if not lines:
        raise ConfigError("nothing to evaluate: give estimate/truth and/or depth/depth_truth")
    text = "".join(line + "\n" for line in lines)
    if cfg.out:
        Path(cfg.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_overlay(cfg: RunConfig) -> int:
    ldp = read_depth_pgm(cfg.ldp)
    bg_path = Path(cfg.background)
    background = read_ppm(bg_path) if bg_path.suffix.lower() == ".ppm" else read_depth_pgm(bg_path, ldp.intrinsics)
    render_overlay(ldp, background, cfg.out)
    print(f"overlay -> {cfg.out}")
    return EXIT_OK


COMMANDS: dict[str, tuple[Callable[[RunConfig], int], tuple[Param, ...], str]] = {
    "synth": (cmd_synth, (
        Param("out", str, None, "output directory", required=True),
        SEED,
        Param("scene", str, "corridor", "scene preset", choices=("corridor",)),
        Param("noise_sigma", float, 0.01, "LiDAR noise sigma (m)", _nonneg, ">= 0"),
        Param("lidar_density", float, 60.0, "LiDAR samples per m^2", _pos, "> 0"),
        Param("camera_density", float, 400.0, "camera cloud samples per m^2", _pos, "> 0"),
        Param("distortion", str, "piecewise", "monocular depth distortion",
              choices=("identity", "affine", "piecewise")),
        Param("distortion_breaks", int, 3, "breakpoints of the piecewise distortion", _nonneg, ">= 0"),
        *INTRINSICS,
    ), "generate a synthetic corridor scene with known extrinsic"),
    "augment": (cmd_augment, (
        Param("lidar", str, None, "LiDAR cloud (.bin/.xyz)", io="in", required=True),
        Param("camcloud", str, None, "camera depth cloud, camera frame (.bin/.xyz)", io="in", required=True),
        Param("extrinsic", str, None, "base LiDAR-to-camera pose file", io="in", required=True),
        Param("out", str, None, "output directory", required=True),
        Param("mode", str, "double", "double- or single-sided", choices=("double", "single")),
        Param("count", int, 10, "number of samples", _pos, "> 0"),
        SEED,
        Param("rot_range", float, 5.0, "camera-side rotation bound (deg)", _nonneg, ">= 0"),
        Param("trans_range", float, 0.5, "camera-side translation bound (m)", _nonneg, ">= 0"),
        Param("lidar_rot_range", float, 5.0, "LiDAR-side rotation bound (deg)", _nonneg, ">= 0"),
        Param("lidar_trans_range", float, 0.5, "LiDAR-side translation bound (m)", _nonneg, ">= 0"),
        Param("meta", str, None, "meta.txt to take intrinsics from", io="in"),
        *INTRINSICS,
    ), "write LDP/CDP sample bundles under random mis-calibration"),
    "refine-depth": (cmd_refine_depth, (
        Param("ldp", str, None, "LiDAR depth projection, 16-bit PGM in mm", io="in", required=True),
        Param("ncdp", str, None, "normalized camera depth, 16-bit PGM (65535 = 1.0)", io="in", required=True),
        Param("out", str, None, "refined metric depth PGM (mm)", required=True),
        Param("anchors", int, 32, "target anchor count", lambda v: v >= 2, ">= 2"),
        Param("zero_is_invalid", _bool, False, "treat normalized value 0 as missing"),
        Param("anchors_out", str, None, "optional file for the selected anchors"),
        Param("diff_dir", str, None, "optional directory for the difference map"),
        Param("e_tar", float, 0.1, "difference-map split threshold (m)", _pos, "> 0"),
        Param("meta", str, None, "meta.txt to take intrinsics from", io="in"),
        *INTRINSICS,
    ), "metric depth from a normalized depth map and sparse LiDAR depth"),
    "calibrate": (cmd_calibrate, (
        Param("frames", _paths, None, "frame directories (lidar.bin, camcloud.bin, meta.txt)",
              io="in", required=True),
        Param("init", str, None, "initial LiDAR-to-camera pose file (default identity)", io="in"),
        Param("out", str, None, "pose file (shared) or directory (per-frame)", required=True),
        Param("mode", str, "shared", "one pose for all frames or one per frame", choices=("shared", "per-frame")),
        Param("jobs", int, 1, "parallel frames in per-frame mode", _pos, "> 0"),
        Param("crop_to_image", _bool, True, "only match LiDAR points that project into the image"),
        SEED,
        *OPTIMIZER,
    ), "refine the extrinsic by Chamfer-distance minimization"),
    "fuse": (cmd_fuse, (
        Param("poses", str, None, "directory of pose files plus optional scores.txt", io="in", required=True),
        Param("ratio", float, 0.5, "fraction of top-scoring poses kept", _ratio, "in (0, 1]"),
        Param("uniform", _bool, False, "equal weights instead of score weights"),
        Param("out", str, None, "output pose file (default <poses>/fused.txt)"),
    ), "fuse per-frame poses into one extrinsic"),
    "evaluate": (cmd_evaluate, (
        Param("estimate", str, None, "estimated pose file", io="in"),
        Param("truth", str, None, "ground-truth pose file", io="in"),
        Param("depth", str, None, "predicted depth PGM (mm)", io="in"),
        Param("depth_truth", str, None, "ground-truth depth PGM (mm)", io="in"),
        Param("out", str, None, "optional report file"),
    ), "pose error and depth metrics against ground truth"),
    "overlay": (cmd_overlay, (
        Param("ldp", str, None, "LiDAR depth projection PGM (mm)", io="in", required=True),
        Param("background", str, None, "depth PGM (mm) or binary PPM image", io="in", required=True),
        Param("out", str, None, "output PPM", required=True),
    ), "paint LiDAR depth over a camera depth map or image"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lccal", description="Target-free LiDAR-camera calibration toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, (_, params, summary) in COMMANDS.items():
        sp = subs.add_parser(name, help=summary, description=summary)
        sp.add_argument("-c", "--config", help="key = value config file")
        for p in params:
            flag = "--" + p.name.replace("_", "-")
            extra = {"nargs": "+"} if p.kind is _paths else {}
            default = "" if p.default is None else f" (default: {p.default})"
            sp.add_argument(flag, dest=p.name, default=None, help=p.help + default, **extra)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, params, _ = COMMANDS[args.command]
    try:
        file_values = load_config(args.config) if args.config else {}
        flags = {p.name: getattr(args, p.name) for p in params}
        cfg = build_config(params, file_values, flags, dict(os.environ))
        return func(cfg)
    except ConvergenceError as exc:
        print(f"lccal {args.command}: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ConfigError, FormatError, AnchorError, NoOverlapError, EmptySceneError, ValueError, OSError) as exc:
        print(f"lccal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
