# space.py
"""
Continuous Lagrange spaces P_k(T) ∩ C0 for k in {1, 2}.

DOF numbering: vertex DOFs carry the vertex index, P2 edge DOFs follow as
num_vertices + edge index (in 1D the "edge" of a cell is the cell itself, so its
midpoint DOF is num_vertices + cell index). Local order inside a cell: vertices,
then edge midpoints opposite vertex 0, 1, 2.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from fem.errors import InvalidArgumentError
from fem.mesh import Mesh
from fem.quadrature import QuadratureRule

SUPPORTED_DEGREES = (1, 2)

_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_EDGE_PAIRS = ((1, 2), (2, 0), (0, 1))


def _check_degree(k: int) -> int:
    if k not in SUPPORTED_DEGREES:
        raise InvalidArgumentError(f"Unsupported polynomial degree k={k}; expected one of {SUPPORTED_DEGREES}")
    return int(k)


def shape_table(dim: int, k: int, ref_points) -> Tuple[np.ndarray, np.ndarray]:
    """Basis values (nq, nb) and reference gradients (nq, nb, dim) at reference points."""
    k = _check_degree(k)
    pts = np.asarray(ref_points, dtype=float).reshape(-1, dim)

    if dim == 1:
        t = pts[:, 0]
        if k == 1:
            values = np.column_stack([1.0 - t, t])
            grads = np.column_stack([-np.ones_like(t), np.ones_like(t)])
        else:
            values = np.column_stack([(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)])
            grads = np.column_stack([4.0 * t - 3.0, 4.0 * t - 1.0, 4.0 - 8.0 * t])
        return values, grads[:, :, None]

    lam = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    if k == 1:
        grads = np.broadcast_to(_DLAMBDA, (len(pts), 3, 2)).copy()
        return lam, grads

    values = np.empty((len(pts), 6))
    grads = np.empty((len(pts), 6, 2))
    for i in range(3):
        values[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * _DLAMBDA[i]
    for e, (i, j) in enumerate(_EDGE_PAIRS):
        values[:, 3 + e] = 4.0 * lam[:, i] * lam[:, j]
        grads[:, 3 + e, :] = 4.0 * (lam[:, j][:, None] * _DLAMBDA[i] + lam[:, i][:, None] * _DLAMBDA[j])
    return values, grads


def _inside_reference(point: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.all(point >= -tol) and point.sum() <= 1.0 + tol)


def shape_values(k: int, ref_point) -> Tuple[np.ndarray, np.ndarray]:
    """Basis values and reference gradients at one point; the dimension is len(ref_point)."""
    point = np.atleast_1d(np.asarray(ref_point, dtype=float))
    if point.size not in (1, 2):
        raise InvalidArgumentError(f"Reference point must have 1 or 2 coordinates, got {point.size}")
    if not _inside_reference(point):
        raise InvalidArgumentError(f"Point {tuple(point)} lies outside the reference element")
    values, grads = shape_table(point.size, k, point)
    return values[0], grads[0]


# ---------------------------
# Spaces
# ---------------------------

@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: Mesh
    degree: int
    dof_count: int
    cell_dofs: np.ndarray
    dof_coords: np.ndarray
    boundary_dofs: np.ndarray
    boundary_facet_dofs: np.ndarray  # per boundary facet: vertex DOFs, then the edge DOF (P2, 2D)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @cached_property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.dof_count, dtype=bool)
        mask[self.boundary_dofs] = True
        return mask

    @cached_property
    def interior_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary)

    @cached_property
    def _tables(self) -> Dict[int, tuple]:
        return {}

    def tabulate(self, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
        """Reference basis values (nq, nb) and physical gradients (cells, nq, nb, dim)."""
        key = id(rule)
        if key not in self._tables:
            values, ref_grads = shape_table(self.dim, self.degree, rule.points)
            grads = np.einsum("qbd,cde->cqbe", ref_grads, self.mesh.inverse_jacobians)
            self._tables[key] = (rule, values, grads)
        _, values, grads = self._tables[key]
        return values, grads

    def quadrature_weights(self, rule: QuadratureRule) -> np.ndarray:
        """Physical weights, shape (cells, nq)."""
        return np.abs(self.mesh.determinants)[:, None] * rule.weights[None, :]

    def quadrature_points(self, rule: QuadratureRule) -> np.ndarray:
        return self.mesh.map_points(rule.points)


def build_space(mesh: Mesh, k: int) -> FeSpace:
    k = _check_degree(k)
    nv = mesh.num_vertices

    if k == 1:
        cell_dofs = mesh.cells.copy()
        coords = mesh.vertices.copy()
        boundary = mesh.boundary_vertices
        facet_dofs = mesh.boundary_facet_vertices.copy()
    else:
        edges = mesh.edges
        cell_dofs = np.hstack([mesh.cells, nv + mesh.cell_edges])
        coords = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
        if mesh.dim == 1:
            boundary = mesh.boundary_vertices
            facet_dofs = mesh.boundary_facet_vertices.copy()
        else:
            facet_edges = np.array(
                [mesh.cell_edges[f.cell, f.local_index] for f in mesh.boundary_facets], dtype=np.int64
            )
            facet_dofs = np.column_stack([mesh.boundary_facet_vertices, nv + facet_edges])
            boundary = np.union1d(mesh.boundary_vertices, nv + facet_edges)

    return FeSpace(
        mesh=mesh,
        degree=k,
        dof_count=int(coords.shape[0]),
        cell_dofs=cell_dofs,
        dof_coords=coords,
        boundary_dofs=np.asarray(boundary, dtype=np.int64),
        boundary_facet_dofs=facet_dofs,
    )


# ---------------------------
# Functions
# ---------------------------

@dataclass(eq=False)
class FeFunction:
    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.array(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dof_count,):
            raise InvalidArgumentError(
                f"Coefficient vector has shape {self.coeffs.shape}, expected ({self.space.dof_count},)"
            )

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coeffs.copy())

    @property
    def vertex_values(self) -> np.ndarray:
        return self.coeffs[: self.space.mesh.num_vertices]

    def _local(self, cell: int) -> np.ndarray:
        if not 0 <= int(cell) < self.space.mesh.num_cells:
            raise InvalidArgumentError(f"Cell index {cell} out of range [0, {self.space.mesh.num_cells})")
        return self.coeffs[self.space.cell_dofs[int(cell)]]

    def eval(self, cell: int, ref_point) -> float:
        local = self._local(cell)
        values, _ = shape_values(self.space.degree, ref_point)
        return float(values @ local)

    def eval_grad(self, cell: int, ref_point) -> Tuple[float, ...]:
        local = self._local(cell)
        _, ref_grads = shape_values(self.space.degree, ref_point)
        grads = ref_grads @ self.space.mesh.inverse_jacobians[int(cell)]
        return tuple(float(v) for v in local @ grads)

    def values_at(self, rule: QuadratureRule) -> np.ndarray:
        values, _ = self.space.tabulate(rule)
        return np.einsum("qb,cb->cq", values, self.coeffs[self.space.cell_dofs])

    def gradients_at(self, rule: QuadratureRule) -> np.ndarray:
        _, grads = self.space.tabulate(rule)
        return np.einsum("cqbe,cb->cqe", grads, self.coeffs[self.space.cell_dofs])

    def to_vtk(self, path: str, name: str = "u", extra: Optional[Dict[str, np.ndarray]] = None) -> str:
        """POINT_DATA at the mesh vertices (P2 functions are sampled there)."""
        data = {name: self.vertex_values}
        data.update(extra or {})
        from utils.utils_io import write_vtk
        return write_vtk(path, self.space.mesh.vertices, self.space.mesh.cells, point_data=data)

    def to_csv(self, path: str, name: str = "u") -> str:
        from utils.utils_io import write_function_csv
        return write_function_csv(path, self.space.dof_coords, {name: self.coeffs})


def zero_function(space: FeSpace) -> FeFunction:
    return FeFunction(space, np.zeros(space.dof_count))


def interpolate(space: FeSpace, f: Callable[[np.ndarray], np.ndarray]) -> FeFunction:
    """Nodal interpolation; f receives the (dofs, dim) coordinate array."""
    values = np.asarray(f(space.dof_coords), dtype=float)
    return FeFunction(space, np.broadcast_to(values, (space.dof_count,)))


def ritz_project(space: FeSpace,
                 v: Union[FeFunction, Callable[[np.ndarray], np.ndarray]],
                 bc_values: Optional[Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]] = None) -> FeFunction:
    """
    Discrete-harmonic projection: Rv = bc_values on the boundary DOFs and
    ∫∇(Rv)·∇Φ = ∫∇v·∇Φ for every interior basis function Φ.

    v is an FeFunction of this space or a callback returning ∇v at (..., dim)
    points. bc_values is aligned with space.boundary_dofs, or a callback evaluated
    at their coordinates; an FeFunction input defaults to its own boundary values.
    """
    from fem.assembly import assemble_gradient_load, assemble_stiffness
    from fem.solver import lu_solve

    stiffness = assemble_stiffness(space)
    if isinstance(v, FeFunction):
        if v.space is not space:
            raise InvalidArgumentError("Ritz projection of a function from another space")
        load = stiffness @ v.coeffs
        if bc_values is None:
            bc_values = v.coeffs[space.boundary_dofs]
    else:
        if bc_values is None:
            raise InvalidArgumentError("bc_values are required when projecting a gradient callback")
        load = assemble_gradient_load(space, v)

    bdofs = space.boundary_dofs
    if callable(bc_values):
        bc_values = bc_values(space.dof_coords[bdofs])
    bc = np.broadcast_to(np.asarray(bc_values, dtype=float), (len(bdofs),))

    coeffs = np.zeros(space.dof_count)
    coeffs[bdofs] = bc
    interior = space.interior_dofs
    if interior.size:
        rows = stiffness[interior]
        rhs = load[interior] - rows[:, bdofs] @ bc
        coeffs[interior] = lu_solve(rows[:, interior], rhs)
    return FeFunction(space, coeffs)
