"""Semantically labeled triangle mesh maps and the .smesh text format"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

try:
    from .config import MIN_TRIANGLE_AREA
    from .errors import FormatError, InvalidLabel
    from .semantics import ClassTable
except ImportError:
    from config import MIN_TRIANGLE_AREA
    from errors import FormatError, InvalidLabel
    from semantics import ClassTable


@dataclass(frozen=True, eq=False)
class SemanticMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    classes: np.ndarray
    table: ClassTable = field(default_factory=ClassTable)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if classes.shape[0] != triangles.shape[0]:
            raise FormatError(f"{triangles.shape[0]} triangles but {classes.shape[0]} class ids")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= vertices.shape[0]):
            raise FormatError(
                f"Triangle indices must be in 0..{vertices.shape[0] - 1}, "
                f"found {triangles.min()}..{triangles.max()}"
            )
        if classes.size:
            n = self.table.num_classes
            if classes.min() < 0 or classes.max() >= n:
                raise InvalidLabel(f"Triangle classes must be in 0..{n - 1}")
            if np.any(classes == self.table.background_id):
                raise InvalidLabel("Triangles may not carry the background class")
            areas = triangle_areas(vertices, triangles)
            bad = np.flatnonzero(areas <= MIN_TRIANGLE_AREA)
            if bad.size:
                raise FormatError(f"Degenerate triangles (area <= {MIN_TRIANGLE_AREA} m^2): {bad[:10].tolist()}")
        for arr in (vertices, triangles, classes):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "classes", classes)

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def class_counts(self):
        """Triangle count per class id"""
        return np.bincount(self.classes, minlength=self.table.num_classes)

    def transformed(self, pose):
        """Mesh with every vertex mapped through pose"""
        return SemanticMesh(pose.apply(self.vertices), self.triangles, self.classes, self.table)


def triangle_areas(vertices, triangles):
    if triangles.size == 0:
        return np.zeros(0)
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def filter_classes(mesh, keep):
    """Drop every triangle whose class is not in keep"""
    keep = set(int(c) for c in keep)
    mask = np.isin(mesh.classes, sorted(keep))
    if mask.all():
        return mesh
    return SemanticMesh(mesh.vertices, mesh.triangles[mask], mesh.classes[mask], mesh.table)


def perturb_vertices(mesh, sigma, seed):
    """Add isotropic Gaussian noise (meters) to every vertex"""
    if sigma <= 0:
        return mesh
    rng = np.random.default_rng(seed)
    noisy = mesh.vertices + rng.normal(scale=sigma, size=mesh.vertices.shape)
    return SemanticMesh(noisy, mesh.triangles, mesh.classes, mesh.table)


def save_smesh(mesh, path):
    lines = [f"# class {i} {name}" for i, name in enumerate(mesh.table.names)]
    lines.append(f"# background {mesh.table.background_id}")
    lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    lines.extend(
        f"f {i} {j} {k} {c}"
        for (i, j, k), c in zip(mesh.triangles.tolist(), mesh.classes.tolist())
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    logging.info(f"Wrote map with {mesh.num_triangles} triangles to {path}")


def load_smesh(path):
    names = {}
    background = 0
    vertices, triangles, classes = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            try:
                if parts[0] == "#":
                    if len(parts) >= 4 and parts[1] == "class":
                        names[int(parts[2])] = parts[3]
                    elif len(parts) >= 3 and parts[1] == "background":
                        background = int(parts[2])
                elif parts[0] == "v":
                    if len(parts) != 4:
                        raise ValueError("vertex needs 3 coordinates")
                    vertices.append([float(p) for p in parts[1:4]])
                elif parts[0] == "f":
                    if len(parts) != 5:
                        raise ValueError("face needs 3 indices and a class id")
                    triangles.append([int(p) for p in parts[1:4]])
                    classes.append(int(parts[4]))
                else:
                    raise ValueError(f"unknown record '{parts[0]}'")
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}")

    if names:
        if sorted(names) != list(range(len(names))):
            raise FormatError(f"{path}: class ids in the header are not dense: {sorted(names)}")
        table = ClassTable(tuple(names[i] for i in range(len(names))), background)
    else:
        table = ClassTable()
    mesh = SemanticMesh(
        np.array(vertices, dtype=float).reshape(-1, 3),
        np.array(triangles, dtype=np.int64).reshape(-1, 3),
        np.array(classes, dtype=np.int64),
        table,
    )
    logging.info(f"Loaded map {path}: {len(vertices)} vertices, {mesh.num_triangles} triangles")
    return mesh
