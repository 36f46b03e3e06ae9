"""Class tables, label and logits images, and the logits pyramid"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:
    from .config import BACKGROUND_ID, CLASS_NAMES, GRID_SNAP, PRED_PROBABILITY
    from .errors import ConfigError, DimensionError, InvalidLabel, OutOfBounds
except ImportError:
    from config import BACKGROUND_ID, CLASS_NAMES, GRID_SNAP, PRED_PROBABILITY
    from errors import ConfigError, DimensionError, InvalidLabel, OutOfBounds


@dataclass(frozen=True)
class ClassTable:
    names: tuple = CLASS_NAMES
    background_id: int = BACKGROUND_ID

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise ConfigError(f"A class table needs at least 2 classes, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"Duplicate class names in {self.names}")
        if not 0 <= self.background_id < len(self.names):
            raise ConfigError(f"Background id {self.background_id} outside 0..{len(self.names) - 1}")

    @property
    def num_classes(self):
        return len(self.names)

    def id_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"Unknown class '{name}', known: {', '.join(self.names)}")

    def ids_of(self, names):
        return {self.id_of(n) for n in names}


@dataclass(frozen=True, eq=False)
class LabelImage:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionError(f"Label image must be 2-D, got shape {labels.shape}")
        object.__setattr__(self, "labels", labels.astype(np.int64, copy=False))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]


@dataclass(frozen=True, eq=False)
class LogitsImage:
    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        if logits.ndim != 3:
            raise DimensionError(f"Logits image must be HxWxN, got shape {logits.shape}")
        object.__setattr__(self, "logits", logits)

    @property
    def height(self):
        return self.logits.shape[0]

    @property
    def width(self):
        return self.logits.shape[1]

    @property
    def num_classes(self):
        return self.logits.shape[2]


@dataclass(frozen=True, eq=False)
class LogitsPyramid:
    """Level 0 is the finest; every level halves both dimensions"""
    levels: list = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, level):
        return self.levels[level]


def softmax(logits):
    """Softmax over the last axis"""
    x = np.asarray(logits, dtype=float)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    x = np.asarray(logits, dtype=float)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_prob(logits, c):
    x = np.asarray(logits, dtype=float).reshape(-1)
    if not 0 <= c < x.size:
        raise InvalidLabel(f"Class {c} outside 0..{x.size - 1}")
    e = np.exp(x - x.max())
    return float(e[c] / e.sum())


def labels_to_logits(img, table, p_pred=PRED_PROBABILITY):
    """Fixed-confidence logits: p_pred for the labeled class, the rest shared evenly"""
    n = table.num_classes
    if not (1.0 / n - 1e-15 <= p_pred < 1.0):
        raise ConfigError(f"Predicted probability must be in [1/N, 1), got {p_pred}")
    labels = img.labels
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise InvalidLabel(f"Label values must be in 0..{n - 1}, found {labels.min()}..{labels.max()}")
    other = np.log((1.0 - p_pred) / (n - 1))
    logits = np.full(labels.shape + (n,), other)
    np.put_along_axis(logits, labels[..., None], np.log(p_pred), axis=-1)
    return LogitsImage(logits)


def downscale_logits(img):
    """Halve both dimensions by averaging every 2x2 cell per class"""
    x = img.logits
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise DimensionError(f"Cannot halve a {w}x{h} logits image")
    return LogitsImage(
        (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2]) * 0.25
    )


def build_pyramid(img, levels):
    if levels < 1:
        raise ConfigError(f"Pyramid needs at least one level, got {levels}")
    factor = 2 ** (levels - 1)
    if img.width % factor or img.height % factor:
        raise DimensionError(
            f"Image size {img.width}x{img.height} is not divisible by {factor} for {levels} levels"
        )
    out = [img]
    for _ in range(levels - 1):
        out.append(downscale_logits(out[-1]))
    return LogitsPyramid(out)


def label_frame_to_pyramid(labels, table, levels, p_pred=PRED_PROBABILITY):
    return build_pyramid(labels_to_logits(labels, table, p_pred), levels)


def label_fractions(img, num_classes, levels):
    """Per-level share of every class in each cell, the one-hot labels averaged like the logits"""
    labels = img.labels
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidLabel(f"Label values must be in 0..{num_classes - 1}, found {labels.min()}..{labels.max()}")
    one_hot = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(one_hot, labels[..., None], 1.0, axis=-1)
    return [level.logits for level in build_pyramid(LogitsImage(one_hot), levels)]


def split_coordinate(coord, size):
    """Cell index and fraction of sample coordinates on a grid of size nodes.

    Coordinates within GRID_SNAP of a grid line are put exactly on it, and the
    last node is reached as fraction 1 of the last cell.
    """
    i = np.floor(coord).astype(np.int64)
    f = coord - i
    up = f > 1.0 - GRID_SNAP
    i[up] += 1
    f[up | (f < GRID_SNAP)] = 0.0
    last = i >= size - 1
    i[last] = size - 2
    f[last] = 1.0
    return i, f


def interpolate_logits(img, u, v):
    """Bilinear logits and their derivatives along u and v.

    Returns (logits, d_du, d_dv, valid) with the first three of shape (n, N);
    rows of invalid samples are zero. A sample is valid when its 2x2
    neighbourhood lies inside the image, 0 <= u < W - 1 and 0 <= v < H - 1.
    On a grid line the interpolant has a kink, there the derivative across
    the line is the mean of both one-sided slopes.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    h, w, n_cls = img.height, img.width, img.num_classes
    valid = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (v >= 0) & (u < w - 1) & (v < h - 1)
    n = u.size
    logits = np.zeros((n, n_cls))
    d_du = np.zeros((n, n_cls))
    d_dv = np.zeros((n, n_cls))
    if not valid.any():
        return logits, d_du, d_dv, valid

    x0, fx = split_coordinate(u[valid], w)
    y0, fy = split_coordinate(v[valid], h)
    flat = img.logits.reshape(-1, n_cls)
    idx = y0 * w + x0
    l00 = flat[idx]
    l01 = flat[idx + 1]
    l10 = flat[idx + w]
    l11 = flat[idx + w + 1]
    fx = fx[:, None]
    fy = fy[:, None]

    top = l00 + fx * (l01 - l00)
    bottom = l10 + fx * (l11 - l10)
    val = top + fy * (bottom - top)
    du = (1.0 - fy) * (l01 - l00) + fy * (l11 - l10)
    dv = bottom - top

    on_u = np.flatnonzero((fx[:, 0] == 0.0) & (x0 >= 1))
    if on_u.size:
        i = idx[on_u]
        back = (1.0 - fy[on_u]) * (flat[i] - flat[i - 1]) + fy[on_u] * (flat[i + w] - flat[i + w - 1])
        du[on_u] = 0.5 * (du[on_u] + back)
    on_v = np.flatnonzero((fy[:, 0] == 0.0) & (y0 >= 1))
    if on_v.size:
        i = idx[on_v]
        up = flat[i - w] + fx[on_v] * (flat[i - w + 1] - flat[i - w])
        dv[on_v] = 0.5 * (dv[on_v] + top[on_v] - up)

    logits[valid] = val
    d_du[valid] = du
    d_dv[valid] = dv
    return logits, d_du, d_dv, valid


def class_logprob(logits, d_du, d_dv, classes):
    """log softmax of classes[:, j] and its (u, v) gradient -> (n, m) and (n, m, 2)"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    probs = e / total
    log_probs = shifted - np.log(total)
    mean_du = (probs * d_du).sum(axis=1, keepdims=True)
    mean_dv = (probs * d_dv).sum(axis=1, keepdims=True)
    logprob = np.take_along_axis(log_probs, classes, axis=1)
    grad = np.stack([
        np.take_along_axis(d_du, classes, axis=1) - mean_du,
        np.take_along_axis(d_dv, classes, axis=1) - mean_dv,
    ], axis=2)
    return logprob, grad


def sample_logprob_many(img, u, v, classes):
    """Bilinear logits at (u, v), then log-softmax of the requested class.

    Returns (logprob, grad, valid): grad is d(logprob)/d(u, v) of shape (n, 2).
    """
    classes = np.asarray(classes, dtype=np.int64).reshape(-1, 1)
    logits, d_du, d_dv, valid = interpolate_logits(img, u, v)
    logprob, grad = class_logprob(logits, d_du, d_dv, classes)
    logprob = np.where(valid, logprob[:, 0], 0.0)
    grad = np.where(valid[:, None], grad[:, 0], 0.0)
    return logprob, grad, valid


def sample_logprob(img, uv, c):
    logprob, grad, valid = sample_logprob_many(img, [uv[0]], [uv[1]], [c])
    if not valid[0]:
        raise OutOfBounds(f"Sample ({uv[0]:.3f}, {uv[1]:.3f}) outside the {img.width}x{img.height} image")
    return float(logprob[0]), grad[0]
