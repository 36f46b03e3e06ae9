"""Procedural street scenes, camera trajectories and noisy observations.

The map frame has x along the street, y to the left and z up; the road
surface is the plane z = 0 between y = -road_width/2 and y = +road_width/2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np

try:
    from .config import (
        CLASS_NAMES, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_HFOV_DEG, SCENE_SEED, NOISE_SEED, ODOM_WEIGHTS,
    )
    from .errors import ConfigError
    from .geom import CameraIntrinsics, Pose, compose, exp_map, inverse
    from .mesh import SemanticMesh
    from .renderer import render
    from .semantics import ClassTable, LabelImage
    from .window import OdometryMeasurement
except ImportError:
    from config import (
        CLASS_NAMES, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_HFOV_DEG, SCENE_SEED, NOISE_SEED, ODOM_WEIGHTS,
    )
    from errors import ConfigError
    from geom import CameraIntrinsics, Pose, compose, exp_map, inverse
    from mesh import SemanticMesh
    from renderer import render
    from semantics import ClassTable, LabelImage
    from window import OdometryMeasurement

SEGMENT_LENGTH = 10.0
DASH_LENGTH = 3.0
DASH_WIDTH = 0.15
MARKING_LIFT = 0.01
POLE_SIZE = 0.2
POLE_HEIGHT = 4.0
SIGN_WIDTH = 0.8
SIGN_BOTTOM = 2.0
SIGN_TOP = 2.8
NATURE_WIDTH = 3.0
CAMERA_HEIGHT = 1.5


@dataclass(frozen=True)
class SceneSpec:
    street_length: float = 200.0
    road_width: float = 7.0
    sidewalk_width: float = 2.0
    building_density: float = 4.0  # facades per 100 m per side
    building_setback: float = 1.5
    pole_count: int = 20
    sign_count: int = 10
    marking_count: int = 30
    nature_count: int = 10
    seed: int = SCENE_SEED
    class_names: tuple = CLASS_NAMES

    def __post_init__(self):
        if self.street_length <= 0 or self.road_width <= 0:
            raise ConfigError("street_length and road_width must be positive")
        if self.sidewalk_width < 0 or self.building_density < 0 or self.building_setback < 0:
            raise ConfigError("sidewalk_width, building_density and building_setback must be >= 0")
        for name in ("pole_count", "sign_count", "marking_count", "nature_count"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @property
    def buildings_per_side(self):
        return int(np.floor(self.building_density * self.street_length / 100.0))


@dataclass(frozen=True)
class NoiseModel:
    seg_flip_prob: float = 0.0
    seg_boundary_jitter: int = 0  # pixels
    odom_sigma_trans: float = 0.0  # meters per frame
    odom_sigma_rot: float = 0.0  # radians per frame
    seed: int = NOISE_SEED

    def __post_init__(self):
        if not 0.0 <= self.seg_flip_prob <= 1.0:
            raise ConfigError(f"seg_flip_prob must be in [0, 1], got {self.seg_flip_prob}")
        if self.seg_boundary_jitter < 0 or self.odom_sigma_trans < 0 or self.odom_sigma_rot < 0:
            raise ConfigError("Noise magnitudes must be >= 0")


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "straight"  # straight | circle | waypoints
    num_frames: int = 200
    speed: float = 10.0  # m/s
    frame_rate: float = 25.0
    start_x: float = 10.0
    lateral_offset: float = -1.75  # right lane
    height: float = CAMERA_HEIGHT
    radius: float = 20.0
    waypoints: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("straight", "circle", "waypoints"):
            raise ConfigError(f"Unknown trajectory kind '{self.kind}'")
        if self.num_frames < 1 or self.frame_rate <= 0 or self.speed < 0:
            raise ConfigError("num_frames, frame_rate must be positive and speed >= 0")
        if self.kind == "circle" and self.radius <= 0:
            raise ConfigError("radius must be positive")
        if self.kind == "waypoints" and len(self.waypoints) < 2:
            raise ConfigError("A waypoint trajectory needs at least two waypoints")

    @property
    def step(self):
        return self.speed / self.frame_rate


# Scene richness levels: (scene, trajectory, noise); noise-free by default
PRESETS = {
    "urban-street": (
        SceneSpec(
            street_length=200.0, sidewalk_width=2.5, building_density=5.0,
            pole_count=30, sign_count=15, marking_count=40, nature_count=12,
        ),
        TrajectorySpec(num_frames=200, speed=10.0, frame_rate=25.0),
        NoiseModel(),
    ),
    "sparse-rural": (
        SceneSpec(
            street_length=200.0, road_width=6.0, sidewalk_width=0.0, building_density=0.0,
            pole_count=6, sign_count=2, marking_count=20, nature_count=20,
        ),
        TrajectorySpec(num_frames=200, speed=10.0, frame_rate=25.0, lateral_offset=-1.5),
        NoiseModel(),
    ),
    "markings-only": (
        SceneSpec(
            street_length=200.0, sidewalk_width=0.0, building_density=0.0,
            pole_count=0, sign_count=0, marking_count=40, nature_count=0,
        ),
        TrajectorySpec(num_frames=200, speed=10.0, frame_rate=25.0),
        NoiseModel(),
    ),
}


def preset(name):
    """(SceneSpec, TrajectorySpec, NoiseModel) of a named preset"""
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"Unknown scene preset '{name}', choose from {', '.join(PRESETS)}")


def default_intrinsics(width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT, hfov_deg=DEFAULT_HFOV_DEG):
    """Square-pixel pinhole camera with the given horizontal field of view"""
    if not 0.0 < hfov_deg < 180.0:
        raise ConfigError(f"hfov must be in (0, 180) degrees, got {hfov_deg}")
    f = 0.5 * width / np.tan(np.deg2rad(hfov_deg) / 2.0)
    return CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


class _MeshBuilder:
    def __init__(self):
        self.vertices = []
        self.triangles = []
        self.classes = []

    def quad(self, corners, cls):
        """Two triangles over four corners given in order around the quad"""
        base = len(self.vertices)
        self.vertices.extend(np.asarray(c, dtype=float) for c in corners)
        self.triangles.append([base, base + 1, base + 2])
        self.triangles.append([base, base + 2, base + 3])
        self.classes.extend([cls, cls])

    def ground_rect(self, x0, x1, y0, y1, z, cls):
        self.quad([(x0, y0, z), (x1, y0, z), (x1, y1, z), (x0, y1, z)], cls)

    def wall_x(self, x, y0, y1, z0, z1, cls):
        """Vertical quad in the plane x = const"""
        self.quad([(x, y0, z0), (x, y1, z0), (x, y1, z1), (x, y0, z1)], cls)

    def wall_y(self, y, x0, x1, z0, z1, cls):
        """Vertical quad in the plane y = const"""
        self.quad([(x0, y, z0), (x1, y, z0), (x1, y, z1), (x0, y, z1)], cls)

    def box(self, x, y, size, height, cls):
        """Four side faces and a top, ten triangles"""
        h = size / 2.0
        self.wall_x(x - h, y - h, y + h, 0.0, height, cls)
        self.wall_x(x + h, y - h, y + h, 0.0, height, cls)
        self.wall_y(y - h, x - h, x + h, 0.0, height, cls)
        self.wall_y(y + h, x - h, x + h, 0.0, height, cls)
        self.ground_rect(x - h, x + h, y - h, y + h, height, cls)

    def build(self, table):
        return SemanticMesh(
            np.array(self.vertices).reshape(-1, 3),
            np.array(self.triangles, dtype=np.int64).reshape(-1, 3),
            np.array(self.classes, dtype=np.int64),
            table,
        )


def generate_scene(spec):
    """Deterministic street mesh: same spec and seed give the same mesh"""
    table = ClassTable(spec.class_names)
    rng = np.random.default_rng(spec.seed)
    b = _MeshBuilder()
    length = spec.street_length
    half_road = spec.road_width / 2.0
    curb = half_road + spec.sidewalk_width
    names = set(table.names)

    road = table.id_of("road")
    segments = int(np.ceil(length / SEGMENT_LENGTH))
    for i in range(segments):
        x0, x1 = i * SEGMENT_LENGTH, min((i + 1) * SEGMENT_LENGTH, length)
        b.ground_rect(x0, x1, -half_road, half_road, 0.0, road)
        if spec.sidewalk_width > 0 and "sidewalk" in names:
            sidewalk = table.id_of("sidewalk")
            b.ground_rect(x0, x1, half_road, curb, 0.0, sidewalk)
            b.ground_rect(x0, x1, -curb, -half_road, 0.0, sidewalk)

    if spec.marking_count and "marking" in names:
        marking = table.id_of("marking")
        spacing = length / spec.marking_count
        for i in range(spec.marking_count):
            xc = (i + 0.5) * spacing
            b.ground_rect(
                xc - DASH_LENGTH / 2, xc + DASH_LENGTH / 2, -DASH_WIDTH / 2, DASH_WIDTH / 2, MARKING_LIFT, marking
            )

    if spec.pole_count and "pole" in names:
        pole = table.id_of("pole")
        side_offset = half_road + max(spec.sidewalk_width * 0.5, 0.3)
        for i in range(spec.pole_count):
            x = rng.uniform(0.0, length)
            side = 1.0 if i % 2 == 0 else -1.0
            b.box(x, side * side_offset, POLE_SIZE, POLE_HEIGHT, pole)

    if spec.sign_count and "sign" in names:
        sign = table.id_of("sign")
        side_offset = half_road + max(spec.sidewalk_width * 0.5, 0.3)
        for _ in range(spec.sign_count):
            x = rng.uniform(0.0, length)
            y = side_offset * (1.0 if rng.random() < 0.5 else -1.0)
            b.wall_x(x, y - SIGN_WIDTH / 2, y + SIGN_WIDTH / 2, SIGN_BOTTOM, SIGN_TOP, sign)

    per_side = spec.buildings_per_side
    if per_side and "building" in names:
        building = table.id_of("building")
        slot = length / per_side
        for side in (1.0, -1.0):
            y = side * (curb + spec.building_setback)
            for i in range(per_side):
                x0 = i * slot + 0.1 * slot
                x1 = x0 + 0.8 * slot
                b.wall_y(y, x0, x1, 0.0, rng.uniform(6.0, 15.0), building)

    if spec.nature_count and "nature" in names:
        nature = table.id_of("nature")
        for _ in range(spec.nature_count):
            x = rng.uniform(0.0, length - NATURE_WIDTH)
            side = 1.0 if rng.random() < 0.5 else -1.0
            y = side * (curb + 0.5 * spec.building_setback)
            b.wall_y(y, x, x + NATURE_WIDTH, 0.0, rng.uniform(3.0, 5.0), nature)

    mesh = b.build(table)
    logging.info(f"Generated scene with {mesh.num_triangles} triangles, counts {mesh.class_counts().tolist()}")
    return mesh


def camera_pose(position, heading):
    """Level camera at position looking along heading (radians, about map z)"""
    c, s = np.cos(heading), np.sin(heading)
    forward = np.array([c, s, 0.0])
    left = np.array([-s, c, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    rotation = np.column_stack([-left, -up, forward])
    return Pose(rotation, np.asarray(position, dtype=float))


def generate_trajectory(spec):
    """Ground-truth camera poses, one per frame"""
    s = spec.step * np.arange(spec.num_frames)
    poses = []
    if spec.kind == "straight":
        for d in s:
            poses.append(camera_pose((spec.start_x + d, spec.lateral_offset, spec.height), 0.0))
    elif spec.kind == "circle":
        # Counter-clockwise around (start_x, lateral_offset + radius), starting at the lane position
        cx, cy = spec.start_x, spec.lateral_offset + spec.radius
        for d in s:
            a = d / spec.radius
            pos = (cx + spec.radius * np.sin(a), cy - spec.radius * np.cos(a), spec.height)
            poses.append(camera_pose(pos, a))
    else:
        pts = np.asarray(spec.waypoints, dtype=float).reshape(-1, 2)
        seg = np.diff(pts, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        for d in s:
            d = min(d, cum[-1])
            i = min(int(np.searchsorted(cum, d, side="right")) - 1, len(seg) - 1)
            frac = (d - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
            xy = pts[i] + frac * seg[i]
            poses.append(camera_pose((xy[0], xy[1], spec.height), np.arctan2(seg[i, 1], seg[i, 0])))
    return poses


def perturb_labels(labels, table, noise, rng):
    """Boundary jitter by per-class dilation, then uniform random class flips"""
    out = labels.labels.copy()
    if noise.seg_boundary_jitter > 0:
        present = [c for c in np.unique(out) if c != table.background_id]
        for c in rng.permutation(present):
            if rng.random() < 0.5:
                continue
            radius = int(rng.integers(1, noise.seg_boundary_jitter + 1))
            kernel = np.ones((2 * radius + 1, 2 * radius + 1), np.uint8)
            grown = cv2.dilate((out == c).astype(np.uint8), kernel) > 0
            out[grown] = c
    if noise.seg_flip_prob > 0:
        flip = rng.random(out.shape) < noise.seg_flip_prob
        out[flip] = rng.integers(0, table.num_classes, size=int(flip.sum()))
    return LabelImage(out)


def synthesize_frames(mesh, trajectory, k, noise=None):
    """Rendered label frames along trajectory with optional segmentation noise"""
    noise = noise or NoiseModel()
    frames = []
    for i, pose in enumerate(trajectory):
        clean = render(mesh, k, pose).labels
        rng = np.random.default_rng([noise.seed, i])
        frames.append(perturb_labels(clean, mesh.table, noise, rng))
    logging.info(f"Synthesized {len(frames)} frames at {k.width}x{k.height}")
    return frames


def synthesize_odometry(trajectory, noise=None):
    """Per-step relative motions (frame i-1 to i) perturbed by Gaussian twists"""
    noise = noise or NoiseModel()
    rng = np.random.default_rng([noise.seed, 0x0D0])
    sigma = np.array([noise.odom_sigma_trans] * 3 + [noise.odom_sigma_rot] * 3)
    steps = []
    for prev, cur in zip(trajectory[:-1], trajectory[1:]):
        true_rel = compose(inverse(prev), cur)
        steps.append(compose(true_rel, exp_map(rng.normal(size=6) * sigma)))
    return steps


def accumulate_odometry(steps, start, stop):
    """Composition of steps[start:stop] as a single relative motion"""
    out = Pose.identity()
    for step in steps[start:stop]:
        out = compose(out, step)
    return out


def keyframe_odometry(steps, stride, weights=ODOM_WEIGHTS):
    """Integrated odometry between consecutive keyframes of a stride"""
    n = len(steps) + 1
    kf = list(range(0, n, stride))
    return [OdometryMeasurement(accumulate_odometry(steps, a, b), weights) for a, b in zip(kf[:-1], kf[1:])]


def dead_reckon(start, steps):
    poses = [start]
    for step in steps:
        poses.append(compose(poses[-1], step))
    return poses
