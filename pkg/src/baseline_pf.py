"""Particle filter baseline that scores rendered label images against frames"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

try:
    from .config import (
        PF_PARTICLES, PF_BEST_FRACTION, PF_PROCESS_SIGMA, PF_RENDER_FACTOR, PF_RESAMPLE_RATIO,
        KEYFRAME_STRIDE, DEFAULT_THREADS,
    )
    from .errors import ConfigError, DimensionError, EmptyInput, NotInitialized
    from .geom import Pose, compose, exp_map
    from .renderer import render
except ImportError:
    from config import (
        PF_PARTICLES, PF_BEST_FRACTION, PF_PROCESS_SIGMA, PF_RENDER_FACTOR, PF_RESAMPLE_RATIO,
        KEYFRAME_STRIDE, DEFAULT_THREADS,
    )
    from errors import ConfigError, DimensionError, EmptyInput, NotInitialized
    from geom import Pose, compose, exp_map
    from renderer import render

if not logging.getLogger().handlers:
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(levelname)s - %(message)s')


@dataclass(frozen=True, eq=False)
class Particle:
    pose: Pose
    weight: float


@dataclass(frozen=True)
class PfConfig:
    num_particles: int = PF_PARTICLES
    best_fraction: float = PF_BEST_FRACTION
    process_sigma: tuple = PF_PROCESS_SIGMA
    init_sigma: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    render_factor: int = PF_RENDER_FACTOR
    resample_ratio: float = PF_RESAMPLE_RATIO
    score_exponent: float = 10.0  # likelihood = score ** exponent
    keyframe_stride: int = KEYFRAME_STRIDE
    seed: int = 0
    threads: int = DEFAULT_THREADS

    def __post_init__(self):
        if self.num_particles < 1:
            raise ConfigError(f"num_particles must be >= 1, got {self.num_particles}")
        if not 0.0 < self.best_fraction <= 1.0:
            raise ConfigError(f"best_fraction must be in (0, 1], got {self.best_fraction}")
        f = self.render_factor
        if f < 1 or f & (f - 1):
            raise ConfigError(f"render_factor must be a power of two, got {f}")
        if len(self.process_sigma) != 6 or len(self.init_sigma) != 6:
            raise ConfigError("process_sigma and init_sigma need 6 values")

    @property
    def render_level(self):
        return int(self.render_factor).bit_length() - 1


def score_particle(mesh, k, pose, frame, render_factor=PF_RENDER_FACTOR):
    """Fraction of non-background rendered pixels whose label matches the frame.

    Rendering happens at 1/render_factor resolution; the frame is subsampled
    to match. A render with no foreground scores 0.
    """
    if (frame.width, frame.height) != (k.width, k.height):
        raise DimensionError(f"Frame is {frame.width}x{frame.height}, camera is {k.width}x{k.height}")
    level = int(render_factor).bit_length() - 1
    small_k = k.at_level(level, top_left=True)
    labels = render(mesh, small_k, pose).labels.labels
    observed = frame.labels[::render_factor, ::render_factor]
    foreground = labels != mesh.table.background_id
    count = int(foreground.sum())
    if count == 0:
        return 0.0
    return float(np.sum(labels[foreground] == observed[foreground])) / count


def systematic_resample(weights, rng):
    """Low-variance resampling; returns particle indices"""
    n = weights.size
    positions = (np.arange(n) + rng.uniform()) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="left")


def effective_sample_size(weights):
    return 1.0 / float(np.sum(weights * weights))


def pf_estimate(particles, best_fraction=PF_BEST_FRACTION):
    """Mean of the highest-weighted particles; ties keep the lower index first"""
    if not particles:
        raise EmptyInput("No particles to estimate from")
    weights = np.array([p.weight for p in particles])
    order = np.argsort(-weights, kind="stable")
    count = max(1, int(np.ceil(best_fraction * len(particles))))
    best = [particles[i].pose for i in order[:count]]

    translation = np.mean([p.translation for p in best], axis=0)
    quats = np.array([p.quaternion() for p in best])
    signs = np.where(quats @ quats[0] < 0.0, -1.0, 1.0)
    q = np.mean(quats * signs[:, None], axis=0)
    return Pose.from_quaternion(translation, q / np.linalg.norm(q))


class ParticleFilter:
    def __init__(self, mesh, k, config=None):
        self.mesh = mesh
        self.k = k
        self.config = config or PfConfig()
        self.rng = np.random.default_rng(self.config.seed)
        self.poses = []
        self.weights = np.zeros(0)
        self._frame_count = 0
        self._estimate = None
        self._accumulated = Pose.identity()

    @property
    def particles(self):
        return [Particle(p, float(w)) for p, w in zip(self.poses, self.weights)]

    def initialize(self, pose):
        n = self.config.num_particles
        sigma = np.asarray(self.config.init_sigma, dtype=float)
        self.poses = [pose] + [compose(pose, exp_map(self.rng.normal(size=6) * sigma)) for _ in range(n - 1)]
        self.weights = np.full(n, 1.0 / n)
        self._frame_count = 0
        self._estimate = pose
        self._accumulated = Pose.identity()
        logging.info(f"Particle filter initialized with {n} particles")

    def _propagate(self, odometry_step):
        sigma = np.asarray(self.config.process_sigma, dtype=float)
        noise = self.rng.normal(size=(len(self.poses), 6)) * sigma
        self.poses = [compose(compose(p, odometry_step), exp_map(n)) for p, n in zip(self.poses, noise)]

    def _score_all(self, frame):
        def score(pose):
            return score_particle(self.mesh, self.k, pose, frame, self.config.render_factor)

        workers = self.config.threads or 1
        if workers == 1:
            return np.array([score(p) for p in self.poses])
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(score, self.poses)))

    def step(self, frame, odometry_step=None):
        """Propagate, reweight on keyframes, resample when the sample degenerates.

        Keyframes return the estimate of the reweighted set; frames in between
        extrapolate it with the odometry accumulated since.
        """
        if not self.poses:
            raise NotInitialized("initialize() must be called before step()")
        index = self._frame_count
        self._frame_count += 1
        if index > 0:
            motion = odometry_step if odometry_step is not None else Pose.identity()
            self._propagate(motion)
            self._accumulated = compose(self._accumulated, motion)
        if index % self.config.keyframe_stride != 0:
            return compose(self._estimate, self._accumulated)
        self._reweight(frame, index)
        self._accumulated = Pose.identity()
        return self._estimate

    def _reweight(self, frame, index):
        scores = self._score_all(frame)
        weights = self.weights * scores ** self.config.score_exponent
        total = weights.sum()
        if not total > 0:
            logging.warning(f"Frame {index}: every particle scored zero, keeping the previous weights")
            weights = self.weights
            total = weights.sum()
        self.weights = weights / total
        self._estimate = self.estimate()

        ess = effective_sample_size(self.weights)
        if ess < self.config.resample_ratio * len(self.poses):
            idx = systematic_resample(self.weights, self.rng)
            self.poses = [self.poses[i] for i in idx]
            self.weights = np.full(len(self.poses), 1.0 / len(self.poses))
            logging.debug(f"Frame {index}: resampled (ESS {ess:.1f})")

    def estimate(self):
        return pf_estimate(self.particles, self.config.best_fraction)


def pf_step(particles, odometry_step, frame, mesh, k, config=None, rng=None):
    """One propagate/score/resample cycle on an explicit particle list"""
    pf = ParticleFilter(mesh, k, config)
    if rng is not None:
        pf.rng = rng
    pf.poses = [p.pose for p in particles]
    weights = np.array([p.weight for p in particles], dtype=float)
    pf.weights = weights / weights.sum()
    pf._propagate(odometry_step)
    pf._reweight(frame, 0)
    return pf.particles
