"""Rectilinear triangular meshes over unions of axis-aligned rectangles.

Grid lines snap to every rectangle edge so that no triangle straddles a
material interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABELS = ("steel", "iron", "air", "winding_plus", "winding_minus")


@dataclass(frozen=True)
class RectRegion:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    label: str

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate region {self.label!r}: "
                f"[{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )

    def contains(self, x, y):
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class Mesh:
    """P1 triangle mesh with per-triangle region labels.

    ``free_vertices`` are the interior vertices, ordered by vertex index; they
    are the degrees of freedom of the Dirichlet-eliminated system.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region_of: np.ndarray
    boundary_vertices: frozenset
    free_vertices: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_dof(self) -> int:
        return len(self.free_vertices)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def label_areas(self) -> dict[str, float]:
        areas = self.signed_areas()
        return {str(lab): float(areas[self.region_of == lab].sum()) for lab in np.unique(self.region_of)}

    def dof_map(self) -> np.ndarray:
        """Vertex index -> dof index, -1 on the Dirichlet boundary."""
        dof = np.full(self.n_vertices, -1, dtype=np.int64)
        dof[self.free_vertices] = np.arange(self.n_dof)
        return dof

    def bounding_box(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def transformer_regions() -> list[RectRegion]:
    """Transformer cross-section, painter's order, coordinates in meters."""
    mm = 1e-3
    regions = [
        RectRegion(0.0, 355 * mm, 0.0, 466 * mm, "steel"),
        RectRegion(10 * mm, 345 * mm, 10 * mm, 456 * mm, "air"),
        RectRegion(60 * mm, 295 * mm, 28 * mm, 438 * mm, "iron"),
        RectRegion(140 * mm, 215 * mm, 108 * mm, 358 * mm, "air"),
    ]
    y0, y1 = 123 * mm, 343 * mm
    for x0, label in ((28, "winding_minus"), (159, "winding_plus"),
                      (183, "winding_minus"), (314, "winding_plus")):
        regions.append(RectRegion(x0 * mm, (x0 + 13) * mm, y0, y1, label))
    return regions


def _grid_lines(edges, lo, hi, h):
    edges = np.unique(np.round(np.clip(edges, lo, hi), 12))
    lines = [edges[0]]
    for a, b in zip(edges[:-1], edges[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        lines.extend(a + (b - a) * np.arange(1, n + 1) / n)
    lines = np.asarray(lines)
    lines[-1] = edges[-1]
    return lines


def _boundary_from_box(vertices, box):
    x0, x1, y0, y1 = box
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    x, y = vertices[:, 0], vertices[:, 1]
    on = (np.abs(x - x0) < tol) | (np.abs(x - x1) < tol) | (np.abs(y - y0) < tol) | (np.abs(y - y1) < tol)
    return np.flatnonzero(on)


def _finish(vertices, triangles, labels, boundary):
    boundary = np.asarray(sorted(set(int(i) for i in boundary)), dtype=np.int64)
    mask = np.ones(len(vertices), dtype=bool)
    mask[boundary] = False
    return Mesh(
        vertices=vertices,
        triangles=triangles,
        region_of=np.asarray(labels),
        boundary_vertices=frozenset(boundary.tolist()),
        free_vertices=np.flatnonzero(mask),
    )


def build_rectilinear_mesh(regions: list[RectRegion], nx: int, ny: int) -> Mesh:
    """Mesh the bounding rectangle ``regions[0]`` with a tensor grid.

    Grid lines contain every distinct rectangle edge; each interval between
    edges is split evenly so no cell is wider than ``width / nx`` (resp.
    taller than ``height / ny``). Cells are cut along the lower-left to
    upper-right diagonal. A cell takes the label of the last region that
    contains its centroid.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    if not regions:
        raise ValueError("at least one region (the bounding box) is required")
    box = regions[0]
    xs = _grid_lines([e for r in regions for e in (r.x_min, r.x_max)],
                     box.x_min, box.x_max, (box.x_max - box.x_min) / nx)
    ys = _grid_lines([e for r in regions for e in (r.y_min, r.y_max)],
                     box.y_min, box.y_max, (box.y_max - box.y_min) / ny)
    mx, my = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(my - 1), np.arange(mx - 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = j * mx + i
    v10 = v00 + 1
    v01 = v00 + mx
    v11 = v01 + 1
    triangles = np.empty((2 * len(v00), 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    cx = 0.5 * (xs[i] + xs[i + 1])
    cy = 0.5 * (ys[j] + ys[j + 1])
    cell_label = np.full(len(cx), box.label, dtype=object)
    for r in regions[1:]:
        cell_label[r.contains(cx, cy)] = r.label
    labels = np.repeat(cell_label, 2).astype(str)

    boundary = _boundary_from_box(vertices, (box.x_min, box.x_max, box.y_min, box.y_max))
    return _finish(vertices, triangles, labels, boundary)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle is split into four by its edge midpoints."""
    tri = mesh.triangles
    nv = mesh.n_vertices
    local = np.array([[1, 2], [2, 0], [0, 1]])
    edges = np.sort(tri[:, local].reshape(-1, 2), axis=1)
    uniq, inverse, counts = np.unique(edges, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])

    m = nv + inverse.reshape(-1, 3)  # midpoint opposite local vertex 0, 1, 2
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ma, mb, mc = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack([
        np.column_stack([a, mc, mb]),
        np.column_stack([mc, b, ma]),
        np.column_stack([mb, ma, c]),
        np.column_stack([ma, mb, mc]),
    ], axis=1).reshape(-1, 3)
    labels = np.repeat(mesh.region_of, 4)

    boundary_edges = counts == 1
    boundary = set(mesh.boundary_vertices)
    boundary.update((nv + np.flatnonzero(boundary_edges)).tolist())
    return _finish(vertices, children, labels, boundary)


def write_vtk(mesh: Mesh, path, point_data: dict[str, np.ndarray] | None = None,
              title: str = "tperiodic mesh") -> Path:
    """Legacy-VTK ASCII unstructured grid with an integer ``region`` cell field.

    ``point_data`` arrays may be sized per vertex or per free vertex (dof);
    dof-sized arrays are extended by zero on the Dirichlet boundary.
    """
    path = Path(path)
    names = sorted(set(LABELS) | set(np.unique(mesh.region_of).tolist()))
    region_id = np.array([names.index(lab) for lab in mesh.region_of])
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.12g} {y:.12g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {mesh.n_triangles}")
    lines += ["5"] * mesh.n_triangles
    lines += [f"CELL_DATA {mesh.n_triangles}", "SCALARS region int 1", "LOOKUP_TABLE default"]
    lines += [str(r) for r in region_id]
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if len(values) == mesh.n_dof and mesh.n_dof != mesh.n_vertices:
                full = np.zeros(mesh.n_vertices)
                full[mesh.free_vertices] = values
                values = full
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.12g}" for v in values]
    path.write_text("\n".join(lines) + "\n")
    return path
