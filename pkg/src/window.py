"""Sliding-window optimization of keyframe poses and the frame-by-frame localization engine.

Every keyframe keeps its render pose fixed and optimizes rel, the transform from
the rendered camera into the frame camera; the frame pose is render_pose @ rel^-1.
The window cost at one pyramid level is

    lam * sum_k s_k * sum_i r_ki^2  +  (1 - lam) * sum_k |W (M_k [-] E_k)|^2

with s_k = 1 / (number of residuals of keyframe k) under "mean" normalization
and s_k = 1 under "raw". E_k is the estimated motion between consecutive
keyframes and M_k the integrated odometry between them.
"""
from __future__ import annotations

import logging
import traceback
from dataclasses import dataclass, field, replace

import numpy as np
from PyQt6.QtCore import QMutex, QThread, Qt, pyqtSignal

try:
    from .config import (
        WINDOW_SIZE, KEYFRAME_STRIDE, LAMBDA, ODOM_WEIGHTS, SEMANTIC_NORMALIZATION,
        LOST_AFTER, STEP_RETRIES, PRED_PROBABILITY,
    )
    from .errors import ConfigError, DimensionError, EmptyInput, LostTracking, NotInitialized, SolverFailure
    from .geom import (
        Pose, adjoint, boxminus, compose, exp_map, inverse, left_jacobian_inverse, log_map,
    )
    from .align import (
        AlignmentConfig, AlignmentProblem, align_multiscale, evaluate_level, is_well_conditioned,
        solve_normal_equations,
    )
    from .renderer import render
    from .semantics import LabelImage, build_pyramid, labels_to_logits
except ImportError:
    from config import (
        WINDOW_SIZE, KEYFRAME_STRIDE, LAMBDA, ODOM_WEIGHTS, SEMANTIC_NORMALIZATION,
        LOST_AFTER, STEP_RETRIES, PRED_PROBABILITY,
    )
    from errors import ConfigError, DimensionError, EmptyInput, LostTracking, NotInitialized, SolverFailure
    from geom import (
        Pose, adjoint, boxminus, compose, exp_map, inverse, left_jacobian_inverse, log_map,
    )
    from align import (
        AlignmentConfig, AlignmentProblem, align_multiscale, evaluate_level, is_well_conditioned,
        solve_normal_equations,
    )
    from renderer import render
    from semantics import LabelImage, build_pyramid, labels_to_logits

if not logging.getLogger().handlers:
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(levelname)s - %(message)s')


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = WINDOW_SIZE
    lam: float = LAMBDA
    keyframe_stride: int = KEYFRAME_STRIDE
    normalization: str = SEMANTIC_NORMALIZATION
    lost_after: int = LOST_AFTER
    step_retries: int = STEP_RETRIES
    odom_weights: tuple = ODOM_WEIGHTS

    def __post_init__(self):
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if self.keyframe_stride < 1:
            raise ConfigError(f"keyframe_stride must be >= 1, got {self.keyframe_stride}")
        if self.normalization not in ("mean", "raw"):
            raise ConfigError(f"normalization must be 'mean' or 'raw', got '{self.normalization}'")
        if self.lost_after < 1:
            raise ConfigError(f"lost_after must be >= 1, got {self.lost_after}")
        if len(self.odom_weights) != 6 or min(self.odom_weights) < 0:
            raise ConfigError(f"odom_weights must be 6 non-negative values, got {self.odom_weights}")


@dataclass(eq=False)
class Keyframe:
    frame_index: int
    render_pose: Pose
    problem: AlignmentProblem
    rel: Pose = field(default_factory=Pose.identity)
    converged: bool = False

    @property
    def frame_pose(self):
        return frame_pose_of(self.render_pose, self.rel)


@dataclass(frozen=True, eq=False)
class OdometryMeasurement:
    """Relative motion between two consecutive keyframes, older to newer"""
    rel: Pose
    weights: tuple = ODOM_WEIGHTS


@dataclass
class WindowResult:
    rels: list
    converged: list
    cost_before: float
    cost_after: float
    reverted: bool = False
    level_costs: dict = field(default_factory=dict)


def frame_pose_of(render_pose, rel):
    return compose(render_pose, inverse(rel))


def odometry_residual(est_k, est_k1, meas):
    """Weighted difference between measured and estimated motion of two frame poses"""
    estimated = compose(inverse(est_k), est_k1)
    return np.asarray(meas.weights, dtype=float) * boxminus(meas.rel, estimated)


def odometry_jacobians(kf_k, kf_k1, rel_k, rel_k1, meas):
    """Residual and its Jacobians w.r.t. left increments of rel_k and rel_k1"""
    w = np.asarray(meas.weights, dtype=float)
    est_k = frame_pose_of(kf_k.render_pose, rel_k)
    est_k1 = frame_pose_of(kf_k1.render_pose, rel_k1)
    estimated = compose(inverse(est_k), est_k1)
    d = log_map(compose(inverse(estimated), meas.rel))
    j_inv = left_jacobian_inverse(d)
    jac_k1 = w[:, None] * j_inv
    jac_k = -w[:, None] * (j_inv @ adjoint(inverse(estimated)))
    return w * d, jac_k, jac_k1


@dataclass
class _WindowTerms:
    cost: float
    hessian: np.ndarray
    gradient: np.ndarray
    semantic_blocks: list  # per keyframe: J^T J of the semantic term, or None


def _window_terms(keyframes, rels, odometry, level, config, align_config, with_jacobian=True):
    n = len(keyframes)
    hessian = np.zeros((6 * n, 6 * n))
    gradient = np.zeros(6 * n)
    blocks = [None] * n
    cost = 0.0
    lam = config.lam

    if lam > 0.0:
        for k, (kf, rel) in enumerate(zip(keyframes, rels)):
            res = evaluate_level(kf.problem, level, rel, align_config, with_jacobian)
            if res.used < align_config.min_residuals:
                continue
            scale = lam / res.used if config.normalization == "mean" else lam
            cost += scale * res.cost
            if with_jacobian:
                jtj = res.jac.T @ res.jac
                blocks[k] = jtj
                sl = slice(6 * k, 6 * k + 6)
                hessian[sl, sl] += scale * jtj
                gradient[sl] += scale * (res.jac.T @ res.r)

    if lam < 1.0:
        for k, meas in enumerate(odometry):
            if with_jacobian:
                e, jac_k, jac_k1 = odometry_jacobians(keyframes[k], keyframes[k + 1], rels[k], rels[k + 1], meas)
                jac = np.hstack([jac_k, jac_k1])
                sl = slice(6 * k, 6 * k + 12)
                hessian[sl, sl] += (1.0 - lam) * (jac.T @ jac)
                gradient[sl] += (1.0 - lam) * (jac.T @ e)
            else:
                e = odometry_residual(
                    frame_pose_of(keyframes[k].render_pose, rels[k]),
                    frame_pose_of(keyframes[k + 1].render_pose, rels[k + 1]),
                    meas,
                )
            cost += (1.0 - lam) * float(e @ e)

    return _WindowTerms(cost, hessian, gradient, blocks)


def total_cost(keyframes, odometry, config, align_config, rels=None, level=None):
    """Window cost at one level (default: the finest optimized level)"""
    rels = [kf.rel for kf in keyframes] if rels is None else rels
    level = align_config.used_levels[-1] if level is None else level
    return _window_terms(keyframes, rels, odometry, level, config, align_config, with_jacobian=False).cost


def _optimize_decoupled(keyframes, align_config):
    """lam == 1: keyframes are independent, each one is a single-frame alignment"""
    rels, converged = [], []
    for kf in keyframes:
        result = align_multiscale(replace(kf.problem, initial_rel=kf.rel), align_config)
        if not result.converged:
            logging.warning(f"Keyframe {kf.frame_index}: alignment did not converge")
        rels.append(result.rel)
        converged.append(result.converged)
    return rels, converged


def optimize_window(keyframes, odometry, config=None, align_config=None):
    """Jointly refine all keyframes of the window; returns a WindowResult, inputs are untouched"""
    config = config or WindowConfig()
    align_config = align_config or AlignmentConfig()
    if not keyframes:
        raise EmptyInput("Cannot optimize an empty window")
    if len(odometry) != len(keyframes) - 1:
        raise DimensionError(f"{len(keyframes)} keyframes need {len(keyframes) - 1} odometry links, got {len(odometry)}")

    initial = [kf.rel for kf in keyframes]
    finest = align_config.used_levels[-1]
    cost_before = total_cost(keyframes, odometry, config, align_config, initial, finest)

    if config.lam == 1.0:
        rels, converged = _optimize_decoupled(keyframes, align_config)
        cost_after = total_cost(keyframes, odometry, config, align_config, rels, finest)
        return WindowResult(rels, converged, cost_before, cost_after)

    n = len(keyframes)
    # With odometry alone the window is only defined up to a global motion; pin the oldest keyframe
    free = list(range(1, n)) if config.lam == 0.0 else list(range(n))
    index = np.concatenate([np.arange(6 * k, 6 * k + 6) for k in free]) if free else np.zeros(0, dtype=int)
    rels = list(initial)
    level_costs = {}
    failed = False

    for level in align_config.used_levels:
        terms = _window_terms(keyframes, rels, odometry, level, config, align_config)
        for iteration in range(align_config.iters_per_level):
            if index.size == 0 or not np.any(terms.hessian):
                break
            h = terms.hessian[np.ix_(index, index)]
            g = terms.gradient[index]
            damping = align_config.damping
            accepted = None
            for attempt in range(config.step_retries + 1):
                try:
                    delta = solve_normal_equations(h, g, damping)
                except SolverFailure as e:
                    logging.warning(f"Window level {level}: {e}")
                    failed = True
                    break
                candidate = list(rels)
                for j, k in enumerate(free):
                    candidate[k] = compose(exp_map(-delta[6 * j:6 * j + 6]), rels[k])
                # The accepted candidate's linearization is the next iteration's
                trial = _window_terms(keyframes, candidate, odometry, level, config, align_config)
                if trial.cost <= terms.cost:
                    accepted = (candidate, delta, trial)
                    break
                damping = max(damping * 10.0, 1e-4 * float(np.mean(np.diag(h))))
                logging.debug(f"Window level {level} it {iteration}: step rejected, damping {damping:.3e}")
            if accepted is None:
                break
            rels, delta, terms = accepted
            level_costs.setdefault(level, []).append(terms.cost)
            step = float(np.max(np.abs(delta)))
            logging.debug(f"Window level {level} it {iteration}: cost={terms.cost:.6f} step={step:.3e}")
            if step < align_config.early_exit_step:
                break

    final = terms  # finest level, evaluated at rels
    cost_after = final.cost
    reverted = False
    if cost_after > cost_before:
        logging.warning(f"Window cost rose from {cost_before:.6f} to {cost_after:.6f}, reverting")
        rels, cost_after, reverted = list(initial), cost_before, True

    converged = []
    for k in range(n):
        if reverted or failed:
            converged.append(False)
        elif config.lam == 0.0:
            converged.append(True)
        else:
            block = final.semantic_blocks[k]
            converged.append(block is not None and is_well_conditioned(block, align_config.min_conditioning))
    return WindowResult(rels, converged, cost_before, cost_after, reverted, level_costs)


class WindowOptimizationThread(QThread):
    error_occurred = pyqtSignal(str)

    def __init__(self, keyframes, odometry, config, align_config):
        super().__init__()
        self.keyframes = list(keyframes)
        self.odometry = list(odometry)
        self.config = config
        self.align_config = align_config
        self.mutex = QMutex()
        self._result = None

    def run(self):
        try:
            result = optimize_window(self.keyframes, self.odometry, self.config, self.align_config)
            self.mutex.lock()
            self._result = result
            self.mutex.unlock()
        except Exception as e:
            error_msg = f"Background window optimization failed: {e}\n{traceback.format_exc()}"
            logging.error(error_msg)
            self.error_occurred.emit(str(e))

    def result(self):
        self.mutex.lock()
        try:
            return self._result
        finally:
            self.mutex.unlock()


class LocalizationEngine:
    """Feeds frames and odometry in, returns one pose per frame.

    Every keyframe_stride-th frame becomes a keyframe and triggers a window
    optimization; the frames in between are dead-reckoned from the newest
    keyframe. With background=True the optimization runs in a worker thread
    and is collected before the next keyframe is added.
    """

    def __init__(self, mesh, k, window_config=None, align_config=None, table=None,
                 p_pred=PRED_PROBABILITY, background=False):
        self.mesh = mesh
        self.k = k
        self.window_config = window_config or WindowConfig()
        self.align_config = align_config or AlignmentConfig()
        self.table = table or mesh.table
        self.p_pred = p_pred
        self.background = background
        factor = 2 ** (self.align_config.levels_total - 1)
        if k.width % factor or k.height % factor:
            raise DimensionError(f"Image size {k.width}x{k.height} is not divisible by {factor}")
        self._keyframes = []
        self._odometry = []
        self._initialized = False
        self._worker = None
        self._worker_error = ""

    def initialize(self, pose):
        self.wait_for_optimization()
        self._keyframes = []
        self._odometry = []
        self._last_keyframe_pose = pose
        self._accumulated = Pose.identity()
        self._frame_count = 0
        self._failures = 0
        self._initialized = True
        logging.info(f"Localization initialized at t={np.round(pose.translation, 3).tolist()}")

    @property
    def keyframes(self):
        return list(self._keyframes)

    def window_poses(self):
        return [kf.frame_pose for kf in self._keyframes]

    def process_frame(self, frame, odometry_step=None):
        """Pose of this frame; odometry_step is the motion since the previous frame"""
        if not self._initialized:
            raise NotInitialized("initialize() must be called before process_frame()")
        index = self._frame_count
        if index > 0:
            if odometry_step is None:
                raise ConfigError(f"Frame {index} needs an odometry step")
            self._accumulated = compose(self._accumulated, odometry_step)
        self._frame_count += 1

        if self._worker is not None and self._worker.isFinished():
            self._collect()
        prediction = compose(self._last_keyframe_pose, self._accumulated)
        if index % self.window_config.keyframe_stride != 0:
            return prediction

        self.wait_for_optimization()
        prediction = compose(self._last_keyframe_pose, self._accumulated)
        keyframe = self._make_keyframe(index, frame, prediction)
        if self._keyframes:
            self._odometry.append(OdometryMeasurement(self._accumulated, self.window_config.odom_weights))
        self._keyframes.append(keyframe)
        self._accumulated = Pose.identity()
        self._last_keyframe_pose = prediction
        if len(self._keyframes) > self.window_config.window_size:
            self._keyframes.pop(0)
            self._odometry.pop(0)

        if self.background:
            self._worker = WindowOptimizationThread(self._keyframes, self._odometry, self.window_config, self.align_config)
            self._worker.error_occurred.connect(self._on_worker_error, Qt.ConnectionType.DirectConnection)
            self._worker.start()
            return prediction

        self._apply(optimize_window(self._keyframes, self._odometry, self.window_config, self.align_config))
        return self._last_keyframe_pose

    def wait_for_optimization(self):
        if self._worker is not None:
            self._worker.wait()
            self._collect()

    def _on_worker_error(self, message):
        self._worker_error = message

    def _collect(self):
        worker, self._worker = self._worker, None
        result = worker.result()
        if result is None:
            logging.error(f"Window optimization produced no result: {self._worker_error}")
            self._worker_error = ""
            result = WindowResult(
                [kf.rel for kf in worker.keyframes], [False] * len(worker.keyframes), float("nan"), float("nan")
            )
        self._apply(result)

    def _make_keyframe(self, index, frame, render_pose):
        logits = labels_to_logits(frame, self.table, self.p_pred) if isinstance(frame, LabelImage) else frame
        if (logits.width, logits.height) != (self.k.width, self.k.height):
            raise DimensionError(
                f"Frame {index} is {logits.width}x{logits.height}, camera is {self.k.width}x{self.k.height}"
            )
        pyramid = build_pyramid(logits, self.align_config.levels_total)
        view = render(self.mesh, self.k, render_pose)
        problem = AlignmentProblem.build(view, pyramid, self.k, self.align_config)
        return Keyframe(index, render_pose, problem)

    def _apply(self, result):
        for kf, rel, ok in zip(self._keyframes, result.rels, result.converged):
            kf.rel = rel
            kf.converged = ok
        newest = self._keyframes[-1]
        self._last_keyframe_pose = newest.frame_pose
        if newest.converged:
            self._failures = 0
        else:
            self._failures += 1
            logging.warning(
                f"Keyframe {newest.frame_index} did not converge ({self._failures} in a row)"
            )
        if self._failures >= self.window_config.lost_after:
            raise LostTracking(
                f"{self._failures} consecutive keyframes failed to converge (last frame {newest.frame_index})"
            )
