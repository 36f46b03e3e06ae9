"""Semantic direct image alignment of one keyframe against its rendered map view.

The unknown is rel, the transform from the rendered camera into the frame
camera. Residual sites sit on the boundaries of the rendered label image,
between two 4-adjacent pixels of different classes. Each site is unprojected
with the nearer rendered depth, moved by rel, projected into the frame's
logits pyramid and scored twice, once per class, with r = sqrt(-2 log softmax_c).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

try:
    from .config import (
        PYRAMID_LEVELS, ALIGN_LEVELS, ITERS_PER_LEVEL, PROB_FLOOR, EARLY_EXIT_STEP,
        DAMPING, MIN_RESIDUALS, RESIDUAL_CLAMP, MIN_CONDITIONING, MIN_SITE_MASS, PURE_MASS,
    )
    from .errors import ConfigError, DegenerateLevel, SolverFailure, DimensionError
    from .geom import Pose, exp_map, pixel_jacobian_many, project_many, unproject_many
    from .renderer import EdgePixel, boundary_pairs
    from .semantics import class_logprob, interpolate_logits, label_fractions, split_coordinate
except ImportError:
    from config import (
        PYRAMID_LEVELS, ALIGN_LEVELS, ITERS_PER_LEVEL, PROB_FLOOR, EARLY_EXIT_STEP,
        DAMPING, MIN_RESIDUALS, RESIDUAL_CLAMP, MIN_CONDITIONING, MIN_SITE_MASS, PURE_MASS,
    )
    from errors import ConfigError, DegenerateLevel, SolverFailure, DimensionError
    from geom import Pose, exp_map, pixel_jacobian_many, project_many, unproject_many
    from renderer import EdgePixel, boundary_pairs
    from semantics import class_logprob, interpolate_logits, label_fractions, split_coordinate

if not logging.getLogger().handlers:
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(levelname)s - %(message)s')


@dataclass(frozen=True)
class AlignmentConfig:
    levels_total: int = PYRAMID_LEVELS
    levels_used: int = ALIGN_LEVELS
    iters_per_level: int = ITERS_PER_LEVEL
    prob_floor: float = PROB_FLOOR
    early_exit_step: float = EARLY_EXIT_STEP
    damping: float = DAMPING
    min_residuals: int = MIN_RESIDUALS
    min_conditioning: float = MIN_CONDITIONING

    def __post_init__(self):
        if self.levels_total < 1:
            raise ConfigError(f"levels_total must be >= 1, got {self.levels_total}")
        if not 1 <= self.levels_used <= self.levels_total:
            raise ConfigError(f"levels_used must be in 1..{self.levels_total}, got {self.levels_used}")
        if self.iters_per_level < 1:
            raise ConfigError(f"iters_per_level must be >= 1, got {self.iters_per_level}")
        if not 0.0 < self.prob_floor < 0.5:
            raise ConfigError(f"prob_floor must be in (0, 0.5), got {self.prob_floor}")
        if self.damping < 0:
            raise ConfigError(f"damping must be >= 0, got {self.damping}")

    @property
    def used_levels(self):
        """Optimized pyramid levels, coarsest first"""
        return list(range(self.levels_total - 1, self.levels_total - self.levels_used - 1, -1))


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Residual sites of one level; site i yields rows 2i and 2i+1, one per class"""
    uv: np.ndarray  # (m, 2) level pixel coordinates in the rendered view
    depth: np.ndarray
    points: np.ndarray  # (m, 3) rendered camera coordinates
    classes: np.ndarray  # (m, 2)

    def __len__(self):
        return self.depth.size

    @property
    def row_count(self):
        return 2 * len(self)

    def rows(self):
        return [
            EdgePixel((float(u), float(v)), int(c), float(d))
            for (u, v), pair, d in zip(self.uv, self.classes, self.depth)
            for c in pair
        ]


def _crossings(grid, along, across, first, second):
    """Where the shares of first and second become equal along grid rows.

    grid is (rows, cols, N) with along running over columns. Searches the
    cell holding each start position and its two neighbours, returns the
    nearest crossing (nan when there is none) and the summed share there.
    """
    rows, cols = grid.shape[:2]
    pos = np.full(along.size, np.nan)
    mass = np.zeros(along.size)
    ok = np.flatnonzero((across >= 0) & (across <= rows - 1) & (along >= 0) & (along <= cols - 1))
    if rows < 2 or cols < 2 or not ok.size:
        return pos, mass

    a, f, s = along[ok], first[ok], second[ok]
    r0, fr = split_coordinate(across[ok], rows)
    start = np.minimum(np.floor(a).astype(np.int64), cols - 2)

    def shares(c):
        top, bottom = grid[r0, c], grid[r0 + 1, c]
        row = np.arange(c.size)
        pa = (1.0 - fr) * top[row, f] + fr * bottom[row, f]
        pb = (1.0 - fr) * top[row, s] + fr * bottom[row, s]
        return pa - pb, pa + pb

    best = np.full(ok.size, np.nan)
    best_mass = np.zeros(ok.size)
    best_dist = np.full(ok.size, np.inf)
    for shift in (0, -1, 1):
        c = np.clip(start + shift, 0, cols - 2)
        d_left, m_left = shares(c)
        d_right, m_right = shares(c + 1)
        hit = (d_left * d_right <= 0.0) & (d_left != d_right)
        t = np.where(hit, d_left / np.where(hit, d_left - d_right, 1.0), 0.0)
        p = c + t
        better = hit & (np.abs(p - a) < best_dist)
        best[better] = p[better]
        best_mass[better] = ((1.0 - t) * m_left + t * m_right)[better]
        best_dist[better] = np.abs(p - a)[better]
    pos[ok] = best
    mass[ok] = best_mass
    return pos, mass


def _stencil_is_pure(fractions, uv, first, second):
    """True where every cell the sampler reads at uv holds only the two classes"""
    h, w = fractions.shape[:2]
    x0, fx = split_coordinate(uv[:, 0], w)
    y0, fy = split_coordinate(uv[:, 1], h)
    back_x = (fx == 0.0) & (x0 >= 1)
    back_y = (fy == 0.0) & (y0 >= 1)
    pure = np.ones(uv.shape[0], dtype=bool)
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1), (-1, 0), (-1, 1), (0, -1), (1, -1)):
        yy = np.clip(y0 + dy, 0, h - 1)
        xx = np.clip(x0 + dx, 0, w - 1)
        cell_mass = fractions[yy, xx, first] + fractions[yy, xx, second]
        ok = cell_mass >= PURE_MASS
        if dy < 0:
            ok |= ~back_y
        elif dx < 0:
            ok |= ~back_x
        pure &= ok
    return pure


def level_sites(pairs, fractions, k, level, pure_only):
    """Residual sites of one pyramid level.

    Pair midpoints are mapped onto the level grid (2x2 mean convention) and
    slid along the pair axis to where the rendered view's interpolated shares
    of both classes are equal. With pure_only, every cell read by the sampler
    there must hold nothing but those two classes, which makes the rendered
    pose a stationary point of the level cost. One site is kept per level
    pixel, orientation and class pair.
    """
    h, w, n_cls = fractions.shape
    uv = (pairs.pos + 0.5) / 2.0 ** level - 0.5
    first, second = pairs.first, pairs.second
    placed = np.full(uv.shape, np.nan)
    mass = np.zeros(len(pairs))
    for axis in (0, 1):
        sel = np.flatnonzero(pairs.axis == axis)
        if not sel.size:
            continue
        grid = fractions if axis == 0 else fractions.transpose(1, 0, 2)
        pos, m = _crossings(grid, uv[sel, axis], uv[sel, 1 - axis], first[sel], second[sel])
        placed[sel, axis] = pos
        placed[sel, 1 - axis] = uv[sel, 1 - axis]
        mass[sel] = m

    inside = np.isfinite(placed).all(axis=1)
    inside[inside] = (
        (placed[inside, 0] >= 0) & (placed[inside, 0] < w - 1)
        & (placed[inside, 1] >= 0) & (placed[inside, 1] < h - 1)
    )
    idx = np.flatnonzero(inside)
    if pure_only:
        idx = idx[_stencil_is_pure(fractions, placed[idx], first[idx], second[idx])]
    else:
        idx = idx[mass[idx] >= MIN_SITE_MASS]

    cell = np.floor(placed[idx] + 0.5).astype(np.int64)
    key = ((pairs.axis[idx] * n_cls + first[idx]) * n_cls + second[idx]) * (h + 1) + cell[:, 1]
    key = key * (w + 1) + cell[:, 0]
    _, unique = np.unique(key, return_index=True)
    idx = idx[np.sort(unique)]

    site_uv = placed[idx]
    depth = pairs.depth[idx]
    return SiteSet(
        uv=site_uv,
        depth=depth,
        points=unproject_many(k, site_uv, depth),
        classes=np.stack([first[idx], second[idx]], axis=1),
    )


@dataclass(frozen=True, eq=False)
class AlignmentLevel:
    sites: SiteSet
    logits: object  # LogitsImage
    k: object  # CameraIntrinsics, 2x2 mean convention


@dataclass(frozen=True, eq=False)
class AlignmentProblem:
    """Per-level residual sites and frame logits; None marks levels never optimized"""
    levels: tuple
    initial_rel: Pose

    @classmethod
    def build(cls, view, frame_pyramid, k, config, initial_rel=None, levels=None):
        """Sites for the config's optimized levels, or for levels when given.

        The finest built level only keeps sites whose sampler stencil is pure.
        """
        if len(frame_pyramid) != config.levels_total:
            raise DimensionError(
                f"Frame pyramid has {len(frame_pyramid)} levels, expected {config.levels_total}"
            )
        if (view.width, view.height) != (k.width, k.height):
            raise DimensionError(f"View is {view.width}x{view.height}, camera is {k.width}x{k.height}")
        for level in range(config.levels_total):
            f = frame_pyramid[level]
            if (f.width, f.height) != (k.width >> level, k.height >> level):
                raise DimensionError(
                    f"Level {level}: frame is {f.width}x{f.height}, expected {k.width >> level}x{k.height >> level}"
                )
        wanted = sorted(set(config.used_levels if levels is None else levels))
        if not wanted or wanted[0] < 0 or wanted[-1] >= config.levels_total:
            raise ConfigError(f"Levels {wanted} outside 0..{config.levels_total - 1}")

        fractions = label_fractions(view.labels, frame_pyramid[0].num_classes, wanted[-1] + 1)
        pairs = boundary_pairs(view)
        out = [None] * config.levels_total
        for level in wanted:
            kl = k.at_level(level)
            sites = level_sites(pairs, fractions[level], kl, level, pure_only=level == wanted[0])
            out[level] = AlignmentLevel(sites, frame_pyramid[level], kl)
            logging.debug(f"Level {level}: {len(sites)} residual sites from {len(pairs)} boundary pairs")
        return cls(tuple(out), initial_rel if initial_rel is not None else Pose.identity())

    def site_count(self, level):
        return len(self.levels[level].sites)


@dataclass
class LevelResiduals:
    r: np.ndarray  # kept residuals
    jac: np.ndarray  # (m, 6) or None
    kept: np.ndarray  # bool mask over the level's residual rows
    dropped: int

    @property
    def used(self):
        return int(self.r.size)

    @property
    def cost(self):
        return float(np.sum(self.r * self.r))


@dataclass
class LevelReport:
    level: int
    rel: Pose
    costs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    used: int = 0
    dropped: int = 0
    well_conditioned: bool = True
    error: str = ""

    @property
    def final_cost(self):
        return self.costs[-1] if self.costs else float("nan")


@dataclass
class AlignmentResult:
    rel: Pose
    level_costs: dict
    residuals_used: dict
    residuals_dropped: dict
    converged: bool
    reports: list = field(default_factory=list)


def semantic_residual(logprob, prob_floor=PROB_FLOOR):
    """sqrt(-2 log p) with p floored at prob_floor; works on scalars and arrays"""
    lp = np.maximum(np.asarray(logprob, dtype=float), np.log(prob_floor))
    r = np.sqrt(np.maximum(-2.0 * lp, 0.0))
    return float(r) if r.ndim == 0 else r


def _score(lvl, points, classes, rel, config, with_jacobian):
    """Residuals of points scored against classes (m, c); kept is (m, c), rows in row-major order"""
    moved = rel.apply(points)
    uv, in_front = project_many(lvl.k, moved)
    uv[~in_front] = np.nan
    logits, d_du, d_dv, in_bounds = interpolate_logits(lvl.logits, uv[:, 0], uv[:, 1])
    logprob, grad = class_logprob(logits, d_du, d_dv, classes)
    kept = (in_front & in_bounds)[:, None] & (logprob > np.log(config.prob_floor))

    r = semantic_residual(logprob[kept], config.prob_floor)
    jac = None
    if with_jacobian:
        pix_jac = pixel_jacobian_many(lvl.k, moved[np.nonzero(kept)[0]])
        g = grad[kept]
        dlogp = g[:, :1] * pix_jac[:, 0] + g[:, 1:] * pix_jac[:, 1]
        jac = -dlogp / np.maximum(r, RESIDUAL_CLAMP)[:, None]
    return r, jac, kept


def evaluate_level(problem, level, rel, config, with_jacobian=True):
    """Residuals (and Jacobians) for every residual row of one level at rel"""
    sites = problem.levels[level].sites
    if len(sites) == 0:
        return LevelResiduals(np.zeros(0), np.zeros((0, 6)) if with_jacobian else None,
                              np.zeros(0, dtype=bool), 0)
    r, jac, kept = _score(problem.levels[level], sites.points, sites.classes, rel, config, with_jacobian)
    kept = kept.reshape(-1)
    return LevelResiduals(r, jac, kept, int(kept.size - kept.sum()))


def residual_row(problem, level, sample, rel, config=None):
    """(r, J) of one residual row, sample being an EdgePixel at level coordinates, or None when dropped"""
    config = config or AlignmentConfig()
    lvl = problem.levels[level]
    point = unproject_many(lvl.k, [sample.pixel], [sample.depth])
    r, jac, kept = _score(lvl, point, np.array([[sample.class_id]]), rel, config, True)
    if not kept[0, 0]:
        return None
    return float(r[0]), jac[0]


def solve_normal_equations(hessian, gradient, damping):
    """Solve (H + damping I) x = g; Cholesky first, least squares as fallback"""
    a = hessian + damping * np.eye(hessian.shape[0])
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(gradient))):
        raise SolverFailure("Normal equations contain non-finite entries")
    try:
        x = cho_solve(cho_factor(a), gradient)
    except LinAlgError:
        x = np.linalg.lstsq(a, gradient, rcond=None)[0]
    if not np.all(np.isfinite(x)):
        raise SolverFailure("Normal equations produced a non-finite step")
    return x


def is_well_conditioned(hessian, min_conditioning):
    eig = np.linalg.eigvalsh(hessian)
    return bool(eig[-1] > 0 and eig[0] / eig[-1] >= min_conditioning)


def gauss_newton_level(problem, level, rel, config):
    """Damped Gauss-Newton on one pyramid level; returns a LevelReport"""
    report = LevelReport(level=level, rel=rel)
    for iteration in range(config.iters_per_level):
        res = evaluate_level(problem, level, rel, config)
        if res.used < config.min_residuals:
            if iteration == 0:
                raise DegenerateLevel(
                    f"Level {level}: {res.used} usable residuals, need {config.min_residuals}"
                )
            logging.warning(f"Level {level}: residuals fell to {res.used} at iteration {iteration}")
            report.well_conditioned = False
            break
        report.costs.append(res.cost)
        report.used, report.dropped = res.used, res.dropped

        hessian = res.jac.T @ res.jac
        gradient = res.jac.T @ res.r
        if iteration == 0 and not is_well_conditioned(hessian, config.min_conditioning):
            logging.warning(f"Level {level}: normal equations are rank deficient")
            report.well_conditioned = False
        delta = solve_normal_equations(hessian, gradient, config.damping)
        rel = exp_map(-delta) @ rel
        step = float(np.linalg.norm(delta))
        report.steps.append(step)
        logging.debug(f"Level {level} it {iteration}: cost={res.cost:.6f} used={res.used} step={step:.3e}")
        if step < config.early_exit_step:
            break

    final = evaluate_level(problem, level, rel, config, with_jacobian=False)
    report.costs.append(final.cost)
    report.rel = rel
    return report


def align_multiscale(problem, config):
    """Coarse-to-fine alignment over the coarsest levels_used levels"""
    rel = problem.initial_rel
    reports = []
    finest = config.used_levels[-1]
    converged = True
    for level in config.used_levels:
        try:
            report = gauss_newton_level(problem, level, rel, config)
            rel = report.rel
            if level == finest and not report.well_conditioned:
                converged = False
        except (DegenerateLevel, SolverFailure) as e:
            logging.warning(f"Alignment level {level} skipped: {e}")
            report = LevelReport(level=level, rel=rel, error=str(e), well_conditioned=False)
            if level == finest:
                converged = False
        reports.append(report)

    return AlignmentResult(
        rel=rel,
        level_costs={r.level: r.final_cost for r in reports},
        residuals_used={r.level: r.used for r in reports},
        residuals_dropped={r.level: r.dropped for r in reports},
        converged=converged,
        reports=reports,
    )
