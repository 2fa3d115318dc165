# mesh.py
"""
Conforming simplicial meshes of intervals and rectangles.

Cells are stored as vertex-index rows (2 per segment, 3 per triangle). Local
facet i of a cell is the facet opposite local vertex i; triangles are kept
counter-clockwise so their facets, read in that order, run counter-clockwise too.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from fem.errors import InvalidArgumentError

# facet i is opposite vertex i
LOCAL_FACETS: Dict[int, Tuple[Tuple[int, ...], ...]] = {
    1: ((1,), (0,)),
    2: ((1, 2), (2, 0), (0, 1)),
}


@dataclass(frozen=True)
class BoundaryFacet:
    cell: int
    local_index: int
    vertices: Tuple[int, ...]
    normal: Tuple[float, ...]


@dataclass(frozen=True)
class MeshMetrics:
    h_max: float
    h_min: float
    mu: float
    quasi_uniformity: float


@dataclass(frozen=True, eq=False)
class Mesh:
    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: Tuple[BoundaryFacet, ...]

    def __post_init__(self):
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_cells(self) -> int:
        return int(self.cells.shape[0])

    # ---------------------------
    # Geometry
    # ---------------------------

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Affine map Jacobians, shape (cells, dim, dim); column j is X_{j+1} - X_0."""
        corners = self.vertices[self.cells]
        return np.ascontiguousarray((corners[:, 1:, :] - corners[:, :1, :]).transpose(0, 2, 1))

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians)

    @cached_property
    def determinants(self) -> np.ndarray:
        return np.linalg.det(self.jacobians)

    @cached_property
    def cell_measures(self) -> np.ndarray:
        return np.abs(self.determinants) / (1.0 if self.dim == 1 else 2.0)

    @property
    def measure(self) -> float:
        return float(self.cell_measures.sum())

    @cached_property
    def diameters(self) -> np.ndarray:
        corners = self.vertices[self.cells]
        if self.dim == 1:
            return np.abs(corners[:, 1, 0] - corners[:, 0, 0])
        return self.edge_lengths.max(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """Per-cell lengths of the local facets, shape (cells, dim + 1)."""
        corners = self.vertices[self.cells]
        if self.dim == 1:
            length = np.abs(corners[:, 1, 0] - corners[:, 0, 0])
            return np.column_stack([length, length])
        local = np.array(LOCAL_FACETS[2])
        a = corners[:, local[:, 0], :]
        b = corners[:, local[:, 1], :]
        return np.linalg.norm(b - a, axis=2)

    def map_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical coordinates of reference points in every cell, shape (cells, points, dim)."""
        ref = np.asarray(ref_points, dtype=float).reshape(-1, self.dim)
        origin = self.vertices[self.cells[:, 0]]
        return origin[:, None, :] + np.einsum("cij,qj->cqi", self.jacobians, ref)

    # ---------------------------
    # Topology
    # ---------------------------

    @cached_property
    def _edge_table(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.dim == 1:
            return np.sort(self.cells, axis=1), np.arange(self.num_cells).reshape(-1, 1)
        local = np.array(LOCAL_FACETS[2])
        pairs = np.sort(self.cells[:, local], axis=2).reshape(-1, 2)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return edges, np.asarray(inverse).reshape(self.num_cells, 3)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs (in 1D the cells themselves)."""
        return self._edge_table[0]

    @property
    def cell_edges(self) -> np.ndarray:
        """Edge index of every local facet (2D) or of the cell itself (1D)."""
        return self._edge_table[1]

    def facet_cell_counts(self) -> np.ndarray:
        """Number of cells sharing each facet (edges in 2D, vertices in 1D)."""
        if self.dim == 1:
            return np.bincount(self.cells.ravel(), minlength=self.num_vertices)
        return np.bincount(self.cell_edges.ravel(), minlength=len(self.edges))

    @cached_property
    def boundary_facet_vertices(self) -> np.ndarray:
        return np.array([f.vertices for f in self.boundary_facets], dtype=np.int64).reshape(-1, self.dim)

    @cached_property
    def boundary_facet_normals(self) -> np.ndarray:
        return np.array([f.normal for f in self.boundary_facets], dtype=float).reshape(-1, self.dim)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_facet_vertices.ravel())

    def to_vtk(self, path: str, point_data: Optional[Dict[str, np.ndarray]] = None) -> None:
        from utils.utils_io import write_vtk
        write_vtk(path, self.vertices, self.cells, point_data=point_data)


# ---------------------------
# Construction
# ---------------------------

def _outward_normal(vertices: np.ndarray, cell: np.ndarray, local_index: int,
                    facet: Tuple[int, ...]) -> Tuple[float, ...]:
    opposite = vertices[cell[local_index]]
    if vertices.shape[1] == 1:
        x = vertices[facet[0], 0]
        return (1.0,) if x > opposite[0] else (-1.0,)
    a, b = vertices[facet[0]], vertices[facet[1]]
    t = b - a
    n = np.array([t[1], -t[0]]) / np.hypot(t[0], t[1])
    if np.dot(n, opposite - a) > 0:
        n = -n
    return (float(n[0]), float(n[1]))


def _boundary_facets(vertices: np.ndarray, cells: np.ndarray) -> Tuple[BoundaryFacet, ...]:
    local = LOCAL_FACETS[vertices.shape[1]]
    owners: Dict[Tuple[int, ...], list] = {}
    for c, cell in enumerate(cells.tolist()):
        for i, lf in enumerate(local):
            key = tuple(sorted(cell[j] for j in lf))
            owners.setdefault(key, []).append((c, i))

    facets = []
    for key, found in owners.items():
        if len(found) > 2:
            raise InvalidArgumentError(f"Non-conforming mesh: facet {key} shared by {len(found)} cells")
        if len(found) == 1:
            c, i = found[0]
            verts = tuple(int(cells[c][j]) for j in local[i])
            facets.append(BoundaryFacet(c, i, verts, _outward_normal(vertices, cells[c], i, verts)))
    facets.sort(key=lambda f: (f.cell, f.local_index))
    return tuple(facets)


def mesh_from_arrays(vertices: Sequence, cells: Sequence) -> Mesh:
    """Build a Mesh from raw arrays, orienting cells and detecting boundary facets."""
    verts = np.array(vertices, dtype=float)
    if verts.ndim == 1:
        verts = verts.reshape(-1, 1)
    dim = verts.shape[1]
    if dim not in (1, 2):
        raise InvalidArgumentError(f"Only 1D and 2D meshes are supported, got dim={dim}")

    cells_arr = np.array(cells, dtype=np.int64)
    if cells_arr.ndim != 2 or cells_arr.shape[1] != dim + 1 or cells_arr.shape[0] == 0:
        raise InvalidArgumentError(f"Cells must be a non-empty (n, {dim + 1}) index array")
    if cells_arr.min() < 0 or cells_arr.max() >= len(verts):
        raise InvalidArgumentError("Cell references a vertex that does not exist")

    corners = verts[cells_arr]
    if dim == 1:
        signed = corners[:, 1, 0] - corners[:, 0, 0]
        flip = signed < 0
        cells_arr[flip] = cells_arr[flip][:, ::-1]
    else:
        e1 = corners[:, 1] - corners[:, 0]
        e2 = corners[:, 2] - corners[:, 0]
        signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        flip = signed < 0
        cells_arr[flip] = cells_arr[flip][:, [0, 2, 1]]

    bad = np.flatnonzero(np.abs(signed) <= 0.0)
    if bad.size:
        raise InvalidArgumentError(f"Degenerate cell {int(bad[0])} has zero measure")

    return Mesh(dim, verts, cells_arr, _boundary_facets(verts, cells_arr))


def unit_interval_mesh(n: int, a: float = 0.0, b: float = 1.0) -> Mesh:
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"Interval mesh needs n >= 1 segments, got {n}")
    if not a < b:
        raise InvalidArgumentError(f"Interval endpoints must satisfy a < b, got ({a}, {b})")
    n = int(n)
    x = np.linspace(a, b, n + 1)
    cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return mesh_from_arrays(x, cells)


def criss_cross_mesh(nx: int, ny: int, rect: Tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """
    Split the rectangle into nx*ny grid cells and every grid cell into four
    triangles meeting at its centroid.

    Vertex numbering: grid vertices row-major (x fastest), then centroids row-major.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError(f"Criss-cross mesh needs nx, ny >= 1, got ({nx}, {ny})")
    x0, y0, x1, y1 = (float(v) for v in rect)
    if not (x0 < x1 and y0 < y1):
        raise InvalidArgumentError(f"Degenerate rectangle {rect}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]))
    vertices = np.vstack([
        np.column_stack([gx.ravel(), gy.ravel()]),
        np.column_stack([cx.ravel(), cy.ravel()]),
    ])

    i, j = (a.ravel() for a in np.meshgrid(np.arange(nx), np.arange(ny)))
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + (nx + 1)
    v11 = v01 + 1
    c = (nx + 1) * (ny + 1) + j * nx + i
    cells = np.stack([
        np.stack([v00, v10, c], axis=-1),
        np.stack([v10, v11, c], axis=-1),
        np.stack([v11, v01, c], axis=-1),
        np.stack([v01, v00, c], axis=-1),
    ], axis=1).reshape(-1, 3)
    return mesh_from_arrays(vertices, cells)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Bisect segments / red-refine triangles through edge midpoints."""
    verts = mesh.vertices
    if mesh.dim == 1:
        mids = 0.5 * (verts[mesh.cells[:, 0]] + verts[mesh.cells[:, 1]])
        m = mesh.num_vertices + np.arange(mesh.num_cells)
        cells = np.stack([
            np.column_stack([mesh.cells[:, 0], m]),
            np.column_stack([m, mesh.cells[:, 1]]),
        ], axis=1).reshape(-1, 2)
        return mesh_from_arrays(np.vstack([verts, mids]), cells)

    edges = mesh.edges
    mids = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
    m = mesh.num_vertices + mesh.cell_edges
    v0, v1, v2 = mesh.cells.T
    m12, m20, m01 = m.T
    cells = np.stack([
        np.stack([v0, m01, m20], axis=-1),
        np.stack([m01, v1, m12], axis=-1),
        np.stack([m20, m12, v2], axis=-1),
        np.stack([m01, m12, m20], axis=-1),
    ], axis=1).reshape(-1, 3)
    return mesh_from_arrays(np.vstack([verts, mids]), cells)


def metrics(mesh: Mesh) -> MeshMetrics:
    """Mesh sizes and the shape regularity constant min_K rho_K / h_K."""
    h = mesh.diameters
    if mesh.dim == 1:
        rho = h
    else:
        rho = 2.0 * mesh.cell_measures / mesh.edge_lengths.sum(axis=1)
    h_max, h_min = float(h.max()), float(h.min())
    return MeshMetrics(
        h_max=h_max,
        h_min=h_min,
        mu=float(np.min(rho / h)),
        quasi_uniformity=h_max / h_min,
    )
