"""Command-line interface: generate scenarios, localize, run the particle filter baseline, evaluate"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import asdict, dataclass, field, replace

import cv2
import numpy as np
import pandas as pd

try:
    from .config import (
        APP_NAME, ARTIFACT_VERSION, LOG_FILE_NAME, LOG_FORMAT, LAMBDA, PYRAMID_LEVELS, ALIGN_LEVELS,
        ITERS_PER_LEVEL, WINDOW_SIZE, KEYFRAME_STRIDE, SEMANTIC_NORMALIZATION, PRED_PROBABILITY,
        PF_PARTICLES, PF_BEST_FRACTION, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_HFOV_DEG, NOISE_SEED,
        CSV_FLOAT_FORMAT, DEFAULT_THREADS,
    )
    from .errors import SemlocError, LostTracking, ConfigError, FormatError
    from .geom import CameraIntrinsics, Pose, compose, random_pose_offset
    from .align import AlignmentConfig
    from .window import WindowConfig, LocalizationEngine
    from .mesh import load_smesh, save_smesh, filter_classes, perturb_vertices
    from .semantics import LabelImage, LogitsImage, labels_to_logits
    from .frame_io import (
        read_frame, list_frames, write_labels, write_logits, read_trajectory, write_trajectory,
        read_odometry, write_odometry,
    )
    from .scenegen import (
        PRESETS, NoiseModel, preset, default_intrinsics, generate_scene, generate_trajectory,
        synthesize_frames, synthesize_odometry,
    )
    from .baseline_pf import PfConfig, ParticleFilter
    from .evaluation import (
        evaluate_trajectories, summarize_errors, cumulative_distribution, convergence_index,
        write_errors_csv, write_cdf_csv, errors_frame,
    )
except ImportError:
    from config import (
        APP_NAME, ARTIFACT_VERSION, LOG_FILE_NAME, LOG_FORMAT, LAMBDA, PYRAMID_LEVELS, ALIGN_LEVELS,
        ITERS_PER_LEVEL, WINDOW_SIZE, KEYFRAME_STRIDE, SEMANTIC_NORMALIZATION, PRED_PROBABILITY,
        PF_PARTICLES, PF_BEST_FRACTION, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_HFOV_DEG, NOISE_SEED,
        CSV_FLOAT_FORMAT, DEFAULT_THREADS,
    )
    from errors import SemlocError, LostTracking, ConfigError, FormatError
    from geom import CameraIntrinsics, Pose, compose, random_pose_offset
    from align import AlignmentConfig
    from window import WindowConfig, LocalizationEngine
    from mesh import load_smesh, save_smesh, filter_classes, perturb_vertices
    from semantics import LabelImage, LogitsImage, labels_to_logits
    from frame_io import (
        read_frame, list_frames, write_labels, write_logits, read_trajectory, write_trajectory,
        read_odometry, write_odometry,
    )
    from scenegen import (
        PRESETS, NoiseModel, preset, default_intrinsics, generate_scene, generate_trajectory,
        synthesize_frames, synthesize_odometry,
    )
    from baseline_pf import PfConfig, ParticleFilter
    from evaluation import (
        evaluate_trajectories, summarize_errors, cumulative_distribution, convergence_index,
        write_errors_csv, write_cdf_csv, errors_frame,
    )

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_LOST = 3

# Run directory layout written by `generate`
MAP_FILE = "map.smesh"
FRAMES_DIR = "frames"
ODOMETRY_FILE = "odometry.csv"
GROUNDTRUTH_FILE = "groundtruth.csv"
CAMERA_FILE = "camera.json"
MANIFEST_FILE = "manifest.json"


@dataclass
class RunManifest:
    command: str
    argv: list
    version: str = ARTIFACT_VERSION
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    status: str = "ok"

    def write(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
        logging.info(f"Wrote manifest {path}")

    @classmethod
    def read(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            return cls(**data)
        except (OSError, ValueError, TypeError) as e:
            raise FormatError(f"Could not read manifest {path}: {e}")


@dataclass
class Scenario:
    mesh: object
    k: CameraIntrinsics
    frame_paths: list
    frame_ids: list
    steps: list  # steps[i] moves frame i to frame i + 1
    groundtruth: dict
    inputs: dict


def setup_logging(out_dir=None, verbose=False):
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    level = logging.DEBUG if verbose else logging.INFO
    root.setLevel(level)
    formatter = logging.Formatter(LOG_FORMAT)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(formatter)
    stream.setLevel(level if verbose else logging.WARNING)
    root.addHandler(stream)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(out_dir, LOG_FILE_NAME))
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)


def parse_floats(text, count, name):
    try:
        values = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{name} must be {count} numbers, got '{text}'")
    if len(values) != count:
        raise ConfigError(f"{name} must be {count} numbers, got {len(values)}")
    return values


def write_camera(k, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(k), fh, indent=2, sort_keys=True)


def read_camera(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return CameraIntrinsics(**json.load(fh))
    except (OSError, ValueError, TypeError) as e:
        raise FormatError(f"Could not read camera {path}: {e}")


# ----------------------------------------------------------------------
# generate
# ----------------------------------------------------------------------

def cmd_generate(args):
    scene, trajectory, noise = preset(args.preset)
    if args.seed is not None:
        scene = replace(scene, seed=args.seed)
    if args.frames is not None:
        trajectory = replace(trajectory, num_frames=args.frames)
    noise = NoiseModel(
        seg_flip_prob=args.noise_flip if args.noise_flip is not None else noise.seg_flip_prob,
        seg_boundary_jitter=args.noise_jitter if args.noise_jitter is not None else noise.seg_boundary_jitter,
        odom_sigma_trans=args.odom_sigma_trans if args.odom_sigma_trans is not None else noise.odom_sigma_trans,
        odom_sigma_rot=(np.deg2rad(args.odom_sigma_rot_deg) if args.odom_sigma_rot_deg is not None
                        else noise.odom_sigma_rot),
        seed=args.noise_seed,
    )
    k = default_intrinsics(args.width, args.height, args.hfov)

    mesh = generate_scene(scene)
    poses = generate_trajectory(trajectory)
    frames = synthesize_frames(mesh, poses, k, noise)
    steps = synthesize_odometry(poses, noise)

    out = args.out
    frames_dir = os.path.join(out, FRAMES_DIR)
    os.makedirs(frames_dir, exist_ok=True)
    save_smesh(mesh, os.path.join(out, MAP_FILE))
    for i, frame in enumerate(frames):
        if args.format == "slog":
            write_logits(labels_to_logits(frame, mesh.table, args.p_pred), os.path.join(frames_dir, f"{i:06d}.slog"))
        else:
            write_labels(frame, os.path.join(frames_dir, f"{i:06d}.pgm"))
    ids = list(range(len(poses)))
    write_trajectory(os.path.join(out, GROUNDTRUTH_FILE), ids, poses)
    write_odometry(os.path.join(out, ODOMETRY_FILE), ids, [Pose.identity()] + steps)
    write_camera(k, os.path.join(out, CAMERA_FILE))

    manifest = RunManifest(
        command="generate",
        argv=args.argv,
        seeds={"scene": scene.seed, "noise": noise.seed},
        config={"scene": asdict(scene), "trajectory": asdict(trajectory), "noise": asdict(noise), "camera": asdict(k)},
        outputs={"run_dir": out, "frames": len(frames)},
    )
    manifest.write(args.manifest or os.path.join(out, MANIFEST_FILE))
    print(f"Generated {len(frames)} frames, {mesh.num_triangles} triangles in {out}")
    return EXIT_OK


# ----------------------------------------------------------------------
# scenario loading shared by localize / pf / ablate / sweep-init
# ----------------------------------------------------------------------

def _input_path(args, name, default_file, required=True):
    explicit = getattr(args, name, None)
    if explicit:
        return explicit
    if args.run:
        path = os.path.join(args.run, default_file)
        if os.path.exists(path) or not required:
            return path
    if required:
        raise ConfigError(f"--{name.replace('_', '-')} (or --run with {default_file}) is required")
    return None


def load_scenario(args):
    map_path = _input_path(args, "map", MAP_FILE)
    frames_dir = _input_path(args, "frames", FRAMES_DIR)
    odometry_path = _input_path(args, "odometry", ODOMETRY_FILE)
    camera_path = _input_path(args, "camera", CAMERA_FILE, required=False)
    gt_path = _input_path(args, "groundtruth", GROUNDTRUTH_FILE, required=False)

    mesh = load_smesh(map_path)
    if args.drop_classes:
        dropped = mesh.table.ids_of([n.strip() for n in args.drop_classes.split(",") if n.strip()])
        keep = [c for c in range(mesh.table.num_classes) if c not in dropped]
        mesh = filter_classes(mesh, keep)
        logging.info(f"Dropped classes {args.drop_classes}: {mesh.num_triangles} triangles left")
    if args.map_noise:
        mesh = perturb_vertices(mesh, args.map_noise, args.map_noise_seed)

    k = read_camera(camera_path) if camera_path and os.path.exists(camera_path) else default_intrinsics()
    frame_paths = list_frames(frames_dir)
    odom_ids, odom = read_odometry(odometry_path)
    if len(odom) != len(frame_paths):
        raise FormatError(f"{len(frame_paths)} frames but {len(odom)} odometry rows")
    if args.max_frames:
        frame_paths = frame_paths[:args.max_frames]
        odom_ids, odom = odom_ids[:args.max_frames], odom[:args.max_frames]

    groundtruth = {}
    if gt_path and os.path.exists(gt_path):
        gt_ids, gt_poses = read_trajectory(gt_path)
        groundtruth = dict(zip(gt_ids, gt_poses))

    inputs = {"map": map_path, "frames": frames_dir, "odometry": odometry_path,
              "camera": camera_path, "groundtruth": gt_path}
    return Scenario(mesh, k, frame_paths, odom_ids, odom[1:], groundtruth, inputs)


def initial_pose(args, scenario):
    if args.init:
        values = parse_floats(args.init, 7, "--init")
        pose = Pose.from_quaternion(values[:3], values[3:])
    elif scenario.frame_ids and scenario.frame_ids[0] in scenario.groundtruth:
        pose = scenario.groundtruth[scenario.frame_ids[0]]
    else:
        raise ConfigError("No initial pose: pass --init or provide ground truth for the first frame")
    if args.init_offset:
        dt, dr, seed = parse_floats(args.init_offset, 3, "--init-offset")
        pose = compose(pose, random_pose_offset(dt, dr, np.random.default_rng(int(seed))))
    return pose


def alignment_config(args):
    return AlignmentConfig(levels_total=args.levels, levels_used=args.align_levels, iters_per_level=args.iters)


def window_config(args):
    return WindowConfig(
        window_size=args.window, lam=args.lam, keyframe_stride=args.keyframe_stride,
        normalization=args.normalization,
    )


def run_localization(scenario, init, wcfg, acfg, background=False, p_pred=PRED_PROBABILITY):
    """Returns (frame_ids, poses, lost) for every frame processed before any tracking loss"""
    engine = LocalizationEngine(scenario.mesh, scenario.k, wcfg, acfg, p_pred=p_pred, background=background)
    engine.initialize(init)
    ids, poses = [], []
    try:
        for i, path in enumerate(scenario.frame_paths):
            step = scenario.steps[i - 1] if i > 0 else None
            poses.append(engine.process_frame(read_frame(path), step))
            ids.append(scenario.frame_ids[i])
        engine.wait_for_optimization()
    except LostTracking as e:
        logging.warning(f"Tracking lost: {e}")
        return ids, poses, True
    return ids, poses, False


def _trajectory_manifest_path(args, out):
    return args.manifest or os.path.splitext(out)[0] + ".manifest.json"


def _default_output(args, name):
    if args.out:
        return args.out
    if args.run:
        return os.path.join(args.run, name)
    raise ConfigError("--out is required without --run")


def cmd_localize(args):
    scenario = load_scenario(args)
    init = initial_pose(args, scenario)
    acfg, wcfg = alignment_config(args), window_config(args)
    out = _default_output(args, "estimate.csv")

    ids, poses, lost = run_localization(scenario, init, wcfg, acfg, args.background, args.p_pred)
    write_trajectory(out, ids, poses)
    manifest = RunManifest(
        command="localize",
        argv=args.argv,
        seeds={"map_noise": args.map_noise_seed},
        inputs=scenario.inputs,
        config={"alignment": asdict(acfg), "window": asdict(wcfg), "p_pred": args.p_pred,
                "background": args.background, "init": init.translation.tolist() + init.quaternion().tolist()},
        outputs={"trajectory": out, "frames": len(poses)},
        status="lost" if lost else "ok",
    )
    manifest.write(_trajectory_manifest_path(args, out))
    if lost:
        print(f"Tracking lost after {len(poses)} frames; partial trajectory in {out}", file=sys.stderr)
        return EXIT_LOST
    print(f"Localized {len(poses)} frames -> {out}")
    return EXIT_OK


def cmd_pf(args):
    scenario = load_scenario(args)
    init = initial_pose(args, scenario)
    config = PfConfig(
        num_particles=args.particles, best_fraction=args.best_fraction, keyframe_stride=args.keyframe_stride,
        seed=args.pf_seed, threads=args.threads,
    )
    out = _default_output(args, "estimate_pf.csv")
    pf = ParticleFilter(scenario.mesh, scenario.k, config)
    pf.initialize(init)
    poses = []
    for i, path in enumerate(scenario.frame_paths):
        step = scenario.steps[i - 1] if i > 0 else None
        frame = read_frame(path)
        if isinstance(frame, LogitsImage):
            frame = LabelImage(np.argmax(frame.logits, axis=2))
        poses.append(pf.step(frame, step))
    ids = scenario.frame_ids[:len(poses)]
    write_trajectory(out, ids, poses)
    RunManifest(
        command="pf",
        argv=args.argv,
        seeds={"pf": config.seed, "map_noise": args.map_noise_seed},
        inputs=scenario.inputs,
        config={"pf": asdict(config)},
        outputs={"trajectory": out, "frames": len(poses)},
    ).write(_trajectory_manifest_path(args, out))
    print(f"Particle filter tracked {len(poses)} frames -> {out}")
    return EXIT_OK


# ----------------------------------------------------------------------
# evaluation and experiments
# ----------------------------------------------------------------------

def _print_summary(summary, stream=sys.stdout):
    rows = {name: stats for name, stats in summary.items()}
    print(pd.DataFrame(rows).T[["median", "mean", "p90", "max"]].to_string(float_format=lambda x: f"{x:.4f}"),
          file=stream)


def cmd_eval(args):
    gt_ids, gt_poses = read_trajectory(args.gt)
    est_ids, est_poses = read_trajectory(args.est)
    errors = evaluate_trajectories(dict(zip(gt_ids, gt_poses)), dict(zip(est_ids, est_poses)))

    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    df = errors_frame(errors)
    write_errors_csv(errors, os.path.join(out_dir, "errors.csv"))
    write_cdf_csv(cumulative_distribution(df["trans"], args.cdf_trans), os.path.join(out_dir, "cdf_trans.csv"), "meters")
    write_cdf_csv(cumulative_distribution(df["rot_deg"], args.cdf_rot), os.path.join(out_dir, "cdf_rot.csv"), "degrees")
    for name in ("lat", "lon", "vert"):
        write_cdf_csv(cumulative_distribution(df[name].abs(), args.cdf_trans),
                      os.path.join(out_dir, f"cdf_{name}.csv"), "meters")

    summary = summarize_errors(errors)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    RunManifest(
        command="eval",
        argv=args.argv,
        inputs={"groundtruth": args.gt, "estimate": args.est},
        config={"cdf_trans": args.cdf_trans, "cdf_rot": args.cdf_rot},
        outputs={"dir": out_dir, "frames": len(errors)},
    ).write(args.manifest or os.path.join(out_dir, MANIFEST_FILE))
    _print_summary(summary)
    return EXIT_OK


def cmd_ablate(args):
    """Localize once per class-drop set and report median errors"""
    base_drop = args.drop_classes
    acfg, wcfg = alignment_config(args), window_config(args)
    rows = []
    for drop in [s.strip() for s in args.drop_sets.split(";")]:
        args.drop_classes = ",".join(x for x in (base_drop, drop) if x)
        scenario = load_scenario(args)
        if not scenario.groundtruth:
            raise ConfigError("Ablation needs ground truth")
        ids, poses, lost = run_localization(scenario, initial_pose(args, scenario), wcfg, acfg, p_pred=args.p_pred)
        label = drop or "none"
        if lost or not poses:
            rows.append({"dropped": label, "median_trans_cm": "fail", "median_rot_deg": "fail"})
            continue
        summary = summarize_errors(evaluate_trajectories(scenario.groundtruth, dict(zip(ids, poses))))
        rows.append({
            "dropped": label,
            "median_trans_cm": round(100.0 * summary["trans"]["median"], 2),
            "median_rot_deg": round(summary["rot_deg"]["median"], 3),
        })
        logging.info(f"Ablation {label}: {rows[-1]}")
    args.drop_classes = base_drop

    table = pd.DataFrame(rows)
    os.makedirs(args.out_dir, exist_ok=True)
    table.to_csv(os.path.join(args.out_dir, "ablation.csv"), index=False)
    RunManifest(
        command="ablate", argv=args.argv,
        config={"alignment": asdict(acfg), "window": asdict(wcfg), "drop_sets": args.drop_sets},
        outputs={"dir": args.out_dir},
    ).write(args.manifest or os.path.join(args.out_dir, MANIFEST_FILE))
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_sweep_init(args):
    """Initialization robustness: random start offsets, keyframe index at which the error settles"""
    scenario = load_scenario(args)
    if not scenario.groundtruth:
        raise ConfigError("The initialization sweep needs ground truth")
    acfg, wcfg = alignment_config(args), window_config(args)
    start = scenario.groundtruth[scenario.frame_ids[0]]
    rows = []
    for seed in range(args.seeds):
        offset = random_pose_offset(args.max_trans, args.max_rot, np.random.default_rng(seed))
        ids, poses, lost = run_localization(scenario, compose(start, offset), wcfg, acfg, p_pred=args.p_pred)
        errors = evaluate_trajectories(scenario.groundtruth, dict(zip(ids, poses))) if poses else []
        keyframe_errors = [e.trans for e in errors if e.frame_id % wcfg.keyframe_stride == 0]
        settled = None if lost or not keyframe_errors else convergence_index(keyframe_errors, args.threshold)
        rows.append({
            "seed": seed,
            "offset_m": float(np.linalg.norm(offset.translation)),
            "converged_keyframe": settled if settled is not None else -1,
            "lost": lost,
        })
        logging.info(f"Sweep seed {seed}: {rows[-1]}")

    table = pd.DataFrame(rows)
    os.makedirs(args.out_dir, exist_ok=True)
    table.to_csv(os.path.join(args.out_dir, "sweep_init.csv"), index=False, float_format=CSV_FLOAT_FORMAT)
    RunManifest(
        command="sweep-init", argv=args.argv, seeds={"offsets": list(range(args.seeds))},
        inputs=scenario.inputs,
        config={"alignment": asdict(acfg), "window": asdict(wcfg), "max_trans": args.max_trans,
                "max_rot": args.max_rot, "threshold": args.threshold},
        outputs={"dir": args.out_dir},
    ).write(args.manifest or os.path.join(args.out_dir, MANIFEST_FILE))
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_replay(args):
    manifest = RunManifest.read(args.manifest)
    logging.info(f"Replaying '{manifest.command}' from {args.manifest}")
    return main(manifest.argv)


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def _add_scenario_args(p):
    p.add_argument("--run", help="run directory written by generate")
    p.add_argument("--map")
    p.add_argument("--frames", help="directory of .pgm label or .slog logits frames")
    p.add_argument("--odometry")
    p.add_argument("--camera")
    p.add_argument("--groundtruth")
    p.add_argument("--init", help='"tx ty tz qx qy qz qw"')
    p.add_argument("--init-offset", help='"dt_m dr_deg seed": random offset applied to the initial pose')
    p.add_argument("--max-frames", type=int)
    p.add_argument("--drop-classes", default="", help="comma separated class names removed from the map")
    p.add_argument("--map-noise", type=float, default=0.0, help="vertex noise sigma in meters")
    p.add_argument("--map-noise-seed", type=int, default=0)
    p.add_argument("--keyframe-stride", type=int, default=KEYFRAME_STRIDE)
    p.add_argument("--manifest")


def _add_engine_args(p):
    p.add_argument("--lambda", dest="lam", type=float, default=LAMBDA)
    p.add_argument("--levels", type=int, default=PYRAMID_LEVELS)
    p.add_argument("--align-levels", type=int, default=ALIGN_LEVELS)
    p.add_argument("--iters", type=int, default=ITERS_PER_LEVEL)
    p.add_argument("--window", type=int, default=WINDOW_SIZE)
    p.add_argument("--normalization", choices=("mean", "raw"), default=SEMANTIC_NORMALIZATION)
    p.add_argument("--p-pred", type=float, default=PRED_PROBABILITY)


def build_parser():
    parser = argparse.ArgumentParser(prog=APP_NAME, description="Semantic map-based camera localization")
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=DEFAULT_THREADS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic scenario")
    p.add_argument("--preset", choices=sorted(PRESETS), default="urban-street")
    p.add_argument("--seed", type=int, help="scene seed")
    p.add_argument("--noise-seed", type=int, default=NOISE_SEED)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--width", type=int, default=DEFAULT_WIDTH)
    p.add_argument("--height", type=int, default=DEFAULT_HEIGHT)
    p.add_argument("--hfov", type=float, default=DEFAULT_HFOV_DEG)
    p.add_argument("--noise-flip", type=float)
    p.add_argument("--noise-jitter", type=int)
    p.add_argument("--odom-sigma-trans", type=float)
    p.add_argument("--odom-sigma-rot-deg", type=float)
    p.add_argument("--format", choices=("pgm", "slog"), default="pgm")
    p.add_argument("--p-pred", type=float, default=PRED_PROBABILITY)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("localize", help="run the sliding-window localizer")
    _add_scenario_args(p)
    _add_engine_args(p)
    p.add_argument("--background", action="store_true", help="optimize the window on a worker thread")
    p.add_argument("--out")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("pf", help="run the particle filter baseline")
    _add_scenario_args(p)
    p.add_argument("--particles", type=int, default=PF_PARTICLES)
    p.add_argument("--best-fraction", type=float, default=PF_BEST_FRACTION)
    p.add_argument("--pf-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pf)

    p = sub.add_parser("eval", help="compare an estimate against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cdf-trans", type=float, default=0.01, help="CDF step in meters")
    p.add_argument("--cdf-rot", type=float, default=0.05, help="CDF step in degrees")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="localize with classes removed from the map")
    _add_scenario_args(p)
    _add_engine_args(p)
    p.add_argument("--drop-sets", default=";building;nature;building,nature",
                   help="';' separated class lists, empty entry = full map")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-init", help="initialization robustness over seeded start offsets")
    _add_scenario_args(p)
    _add_engine_args(p)
    p.add_argument("--seeds", type=int, default=15)
    p.add_argument("--max-trans", type=float, default=5.0)
    p.add_argument("--max-rot", type=float, default=15.0)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep_init)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def _log_dir(args):
    for name in ("out_dir", "run"):
        value = getattr(args, name, None)
        if value:
            return value
    out = getattr(args, "out", None)
    if out:
        return out if args.command == "generate" else os.path.dirname(os.path.abspath(out))
    return None


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    setup_logging(_log_dir(args), args.verbose)
    if args.threads:
        cv2.setNumThreads(args.threads)
    try:
        return args.func(args)
    except LostTracking as e:
        logging.error(f"Tracking lost: {e}")
        return EXIT_LOST
    except (SemlocError, ValueError, OSError) as e:
        error_msg = f"{args.command} failed: {e}\n{traceback.format_exc()}"
        logging.error(error_msg)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
