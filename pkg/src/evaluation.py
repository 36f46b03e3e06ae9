"""Per-frame pose errors, cumulative distributions and summary statistics.

Errors are expressed in the ground-truth vehicle frame: lon forward,
lat to the left, vert up. For an optical camera (x right, y down,
z forward) that is lon = z, lat = -x and vert = -y.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd

try:
    from .config import ERROR_COLUMNS, CSV_FLOAT_FORMAT
    from .errors import EmptyInput, IdMismatch, ConfigError
    from .geom import compose, inverse, rotation_angle
except ImportError:
    from config import ERROR_COLUMNS, CSV_FLOAT_FORMAT
    from errors import EmptyInput, IdMismatch, ConfigError
    from geom import compose, inverse, rotation_angle


@dataclass(frozen=True)
class FrameError:
    frame_id: int
    lat: float
    lon: float
    vert: float
    trans: float
    rot_deg: float


def pose_error(gt, est, frame_id=0):
    """Signed component errors of est relative to gt, meters and degrees"""
    d = compose(inverse(gt), est)
    x, y, z = d.translation
    return FrameError(
        frame_id=int(frame_id),
        lat=float(-x),
        lon=float(z),
        vert=float(-y),
        trans=float(np.linalg.norm(d.translation)),
        rot_deg=float(np.rad2deg(rotation_angle(d.rotation))),
    )


def evaluate_trajectories(gt, est):
    """Errors for every estimated frame; gt and est map frame_id -> Pose.

    Every estimated frame must have ground truth. Ground-truth frames
    without an estimate (a run cut short) are skipped with a warning.
    """
    if not est:
        raise EmptyInput("Estimated trajectory is empty")
    unknown = sorted(set(est) - set(gt))
    if unknown:
        raise IdMismatch(f"{len(unknown)} estimated frames have no ground truth, first {unknown[:5]}")
    missing = len(set(gt) - set(est))
    if missing:
        logging.warning(f"{missing} ground-truth frames have no estimate")
    return [pose_error(gt[i], est[i], i) for i in sorted(est)]


def errors_frame(errors):
    return pd.DataFrame([asdict(e) for e in errors], columns=ERROR_COLUMNS)


def cumulative_distribution(values, resolution=None, thresholds=None):
    """(threshold, fraction of values <= threshold) pairs.

    Thresholds are explicit, or multiples of resolution from 0 up to the
    first one covering the largest value.
    """
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        raise EmptyInput("No values for a cumulative distribution")
    if thresholds is None:
        if resolution is None or resolution <= 0:
            raise ConfigError(f"resolution must be positive, got {resolution}")
        steps = int(np.ceil(v[-1] / resolution))
        grid = resolution * np.arange(steps + 1)
        if grid[-1] < v[-1]:
            grid = np.append(grid, resolution * (steps + 1))
    else:
        grid = np.asarray(thresholds, dtype=float).reshape(-1)
    fraction = np.searchsorted(v, grid, side="right") / v.size
    return list(zip(grid.tolist(), fraction.tolist()))


def summarize(values):
    """median (lower middle), mean, 90th percentile (nearest rank) and max"""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        raise EmptyInput("No values to summarize")
    return {
        "median": float(v[(v.size - 1) // 2]),
        "mean": float(v.mean()),
        "p90": float(v[int(np.ceil(0.9 * v.size)) - 1]),
        "max": float(v[-1]),
    }


def summarize_errors(errors):
    """Summaries of the absolute value of every error component"""
    df = errors_frame(errors)
    return {col: summarize(df[col].abs().to_numpy()) for col in ERROR_COLUMNS[1:]}


def convergence_index(values, threshold):
    """First index from which every value stays below threshold, or None"""
    v = np.asarray(values, dtype=float).reshape(-1)
    above = np.flatnonzero(~(v < threshold))
    if above.size == 0:
        return 0 if v.size else None
    first = int(above[-1]) + 1
    return first if first < v.size else None


def write_errors_csv(errors, path):
    errors_frame(errors).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logging.info(f"Wrote {len(errors)} frame errors to {path}")


def write_cdf_csv(pairs, path, value_name="threshold"):
    pd.DataFrame(pairs, columns=[value_name, "fraction"]).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
