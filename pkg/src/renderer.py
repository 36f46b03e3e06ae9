"""Software z-buffer rasterizer for semantic meshes and semantic edge selection"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

try:
    from .config import NEAR_PLANE, FAR_PLANE, DEPTH_TIE_EPS, BACKGROUND_ID
    from .errors import DimensionError
    from .geom import inverse
    from .semantics import LabelImage
except ImportError:
    from config import NEAR_PLANE, FAR_PLANE, DEPTH_TIE_EPS, BACKGROUND_ID
    from errors import DimensionError
    from geom import inverse
    from semantics import LabelImage

# Barycentric slack so that pixel centers exactly on a shared edge are covered
_EDGE_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class RenderedView:
    labels: LabelImage
    depth: np.ndarray
    background_id: int = BACKGROUND_ID

    @property
    def width(self):
        return self.labels.width

    @property
    def height(self):
        return self.labels.height


@dataclass(frozen=True)
class EdgePixel:
    pixel: tuple
    class_id: int
    depth: float


@dataclass(frozen=True, eq=False)
class EdgeSet:
    """Edge pixels of one view as parallel arrays, row-major order"""
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    classes: np.ndarray

    def __len__(self):
        return self.u.size

    def pixels(self):
        return np.stack([self.u, self.v], axis=1).astype(float)


def _clip_near(tri, near):
    """Sutherland-Hodgman clip of a camera-space triangle against z >= near"""
    out = []
    for i in range(3):
        a = tri[i]
        b = tri[(i + 1) % 3]
        a_in = a[2] >= near
        b_in = b[2] >= near
        if a_in:
            out.append(a)
        if a_in != b_in:
            s = (near - a[2]) / (b[2] - a[2])
            p = a + s * (b - a)
            p[2] = near
            out.append(p)
    return out


def _rasterize(screen, inv_z, cls, labels, zbuf, far):
    """Rasterize one projected triangle into the buffers in place"""
    height, width = zbuf.shape
    (x0, y0), (x1, y1), (x2, y2) = screen
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    if abs(area) < 1e-12:
        return
    xmin = max(int(np.ceil(min(x0, x1, x2) - _EDGE_EPS)), 0)
    xmax = min(int(np.floor(max(x0, x1, x2) + _EDGE_EPS)), width - 1)
    ymin = max(int(np.ceil(min(y0, y1, y2) - _EDGE_EPS)), 0)
    ymax = min(int(np.floor(max(y0, y1, y2) + _EDGE_EPS)), height - 1)
    if xmin > xmax or ymin > ymax:
        return

    px = np.arange(xmin, xmax + 1, dtype=float)[None, :]
    py = np.arange(ymin, ymax + 1, dtype=float)[:, None]
    b0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
    b1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
    b2 = 1.0 - b0 - b1
    inside = (b0 >= -_EDGE_EPS) & (b1 >= -_EDGE_EPS) & (b2 >= -_EDGE_EPS)
    if not inside.any():
        return

    # 1/z is affine in screen space for a planar triangle
    depth = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2])
    zb = zbuf[ymin:ymax + 1, xmin:xmax + 1]
    lb = labels[ymin:ymax + 1, xmin:xmax + 1]
    update = inside & (depth < zb - DEPTH_TIE_EPS) & (depth <= far)
    zb[update] = depth[update]
    lb[update] = cls


def render(mesh, k, pose, near=NEAR_PLANE, far=FAR_PLANE):
    """Render labels and metric depth of mesh seen from a camera at pose (camera in map).

    Triangles are drawn in index order; a later triangle only wins a pixel
    when it is nearer by more than the tie tolerance.
    """
    labels = np.full((k.height, k.width), mesh.table.background_id, dtype=np.int64)
    zbuf = np.full((k.height, k.width), np.inf)
    if mesh.num_triangles == 0:
        return RenderedView(LabelImage(labels), zbuf, mesh.table.background_id)

    cam = inverse(pose).apply(mesh.vertices)
    tris = cam[mesh.triangles]  # (T, 3, 3)
    z = tris[:, :, 2]
    candidates = np.flatnonzero((z.max(axis=1) >= near) & (z.min(axis=1) <= far))

    # Coarse frustum cull for triangles entirely in front of the near plane
    in_front = z.min(axis=1) >= near
    safe_z = np.where(z > 0, z, 1.0)
    u = k.fx * tris[:, :, 0] / safe_z + k.cx
    v = k.fy * tris[:, :, 1] / safe_z + k.cy
    outside = (
        (u.max(axis=1) < -0.5) | (u.min(axis=1) > k.width - 0.5)
        | (v.max(axis=1) < -0.5) | (v.min(axis=1) > k.height - 0.5)
    )
    culled = in_front & outside

    drawn = 0
    for idx in candidates:
        if culled[idx]:
            continue
        cls = mesh.classes[idx]
        if in_front[idx]:
            polygon = [tris[idx, 0], tris[idx, 1], tris[idx, 2]]
        else:
            polygon = _clip_near(tris[idx].copy(), near)
            if len(polygon) < 3:
                continue
        pts = np.array(polygon)
        screen = np.stack([k.fx * pts[:, 0] / pts[:, 2] + k.cx, k.fy * pts[:, 1] / pts[:, 2] + k.cy], axis=1)
        inv_z = 1.0 / pts[:, 2]
        for j in range(1, len(polygon) - 1):
            fan = [0, j, j + 1]
            _rasterize(screen[fan], inv_z[fan], cls, labels, zbuf, far)
        drawn += 1

    logging.debug(f"Rendered {drawn}/{mesh.num_triangles} triangles at {k.width}x{k.height}")
    return RenderedView(LabelImage(labels), zbuf, mesh.table.background_id)


def edge_mask(view):
    """Non-background pixels with a differently labeled 4-neighbour"""
    lab = view.labels.labels
    diff = np.zeros(lab.shape, dtype=bool)
    horiz = lab[:, :-1] != lab[:, 1:]
    vert = lab[:-1, :] != lab[1:, :]
    diff[:, :-1] |= horiz
    diff[:, 1:] |= horiz
    diff[:-1, :] |= vert
    diff[1:, :] |= vert
    return diff & (lab != view.background_id)


def edge_set(view):
    ys, xs = np.nonzero(edge_mask(view))
    return EdgeSet(
        u=xs.astype(np.int64),
        v=ys.astype(np.int64),
        depth=view.depth[ys, xs].astype(float),
        classes=view.labels.labels[ys, xs].astype(np.int64),
    )


def extract_edge_pixels(view):
    edges = edge_set(view)
    return [
        EdgePixel((int(x), int(y)), int(c), float(d))
        for x, y, c, d in zip(edges.u, edges.v, edges.classes, edges.depth)
    ]


def downscale_view(view):
    """Half-size view keeping the top-left pixel of every 2x2 cell"""
    if view.width % 2 or view.height % 2:
        raise DimensionError(f"Cannot halve a {view.width}x{view.height} view")
    return RenderedView(
        LabelImage(view.labels.labels[0::2, 0::2].copy()),
        view.depth[0::2, 0::2].copy(),
        view.background_id,
    )


@dataclass(frozen=True, eq=False)
class BoundaryPairs:
    """Every pair of 4-adjacent pixels with different labels, row-major, horizontal pairs first.

    pos is the midpoint of the two pixel centres, axis is 0 for left/right
    and 1 for upper/lower neighbours, depth is the nearer of the two
    rendered depths.
    """
    pos: np.ndarray
    axis: np.ndarray
    first: np.ndarray  # class of the left or upper pixel
    second: np.ndarray
    depth: np.ndarray

    def __len__(self):
        return self.axis.size


def boundary_pairs(view):
    lab = view.labels.labels
    depth = view.depth
    ys, xs = np.nonzero(lab[:, :-1] != lab[:, 1:])
    yv, xv = np.nonzero(lab[:-1, :] != lab[1:, :])
    return BoundaryPairs(
        pos=np.concatenate([
            np.stack([xs + 0.5, ys.astype(float)], axis=1),
            np.stack([xv.astype(float), yv + 0.5], axis=1),
        ]).reshape(-1, 2),
        axis=np.concatenate([np.zeros(xs.size, dtype=np.int64), np.ones(xv.size, dtype=np.int64)]),
        first=np.concatenate([lab[ys, xs], lab[yv, xv]]),
        second=np.concatenate([lab[ys, xs + 1], lab[yv + 1, xv]]),
        depth=np.concatenate([
            np.minimum(depth[ys, xs], depth[ys, xs + 1]),
            np.minimum(depth[yv, xv], depth[yv + 1, xv]),
        ]),
    )
