# assembly.py
"""
Discrete forms of the mixed p-Bilaplacian system.

  a(w, psi) = ∫ s_eps(w) psi          s_eps(w) = (w^2 + eps^2)^((q-2)/2) w
  b(u, psi) = ∫ ∇u·∇psi
  f(psi)    = ∫_{∂Ω} (∇g·n) psi
  S(phi)    = -∫ f phi

The saddle system in unknowns (w on every DOF, u on interior DOFs) reads
a(w, psi) + b(u, psi) = f(psi) for all psi, and b(w, phi) = S(phi) for interior phi.
"""
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from fem.errors import InvalidArgumentError
from fem.quadrature import MAX_DEGREE, quad_rule
from fem.space import FeFunction, FeSpace, shape_table

Callback = Callable[[np.ndarray], np.ndarray]


# ---------------------------
# Problem data
# ---------------------------

@dataclass(frozen=True)
class ProblemSpec:
    """Exponent, boundary datum g (value, gradient, Laplacian) and optional source f.

    Callbacks receive an (n, dim) coordinate array; values return (n,), gradients (n, dim).
    """
    p: float
    g_value: Callback
    g_gradient: Callback
    g_laplacian: Callback
    source_f: Optional[Callback] = None
    epsilon: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p < 2.0:
            raise InvalidArgumentError(f"Exponent p must be a finite real >= 2, got {self.p}")
        if not self.epsilon >= 0.0:
            raise InvalidArgumentError(f"Regularisation epsilon must be >= 0, got {self.epsilon}")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def has_source(self) -> bool:
        return self.source_f is not None

    def with_p(self, p: float) -> "ProblemSpec":
        return replace(self, p=float(p))

    def with_epsilon(self, epsilon: float) -> "ProblemSpec":
        return replace(self, epsilon=float(epsilon))

    def scaled(self, sigma: float) -> "ProblemSpec":
        """Data of the problem whose solution is (u / sigma, w / sigma^(p-1))."""
        if sigma == 1.0:
            return self
        if not sigma > 0.0:
            raise InvalidArgumentError(f"Scale must be positive, got {sigma}")
        g, dg, lg, f = self.g_value, self.g_gradient, self.g_laplacian, self.source_f
        fs = sigma ** (self.p - 1.0)
        return replace(
            self,
            g_value=lambda x: np.asarray(g(x)) / sigma,
            g_gradient=lambda x: np.asarray(dg(x)) / sigma,
            g_laplacian=lambda x: np.asarray(lg(x)) / sigma,
            source_f=None if f is None else (lambda x: np.asarray(f(x)) / fs),
        )


def s_eps(w: np.ndarray, q: float, epsilon: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if q == 2.0:
        return w.copy()
    if epsilon > 0.0:
        return (w * w + epsilon * epsilon) ** (0.5 * (q - 2.0)) * w
    # s_0(0) = 0
    return np.sign(w) * np.abs(w) ** (q - 1.0)


def ds_eps(w: np.ndarray, q: float, epsilon: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if q == 2.0:
        return np.ones_like(w)
    if epsilon > 0.0:
        r = w * w + epsilon * epsilon
        return r ** (0.5 * (q - 2.0)) * (1.0 + (q - 2.0) * w * w / r)
    out = np.zeros_like(w)
    nz = w != 0.0
    out[nz] = (q - 1.0) * np.abs(w[nz]) ** (q - 2.0)
    return out


def evaluate(fct: Callback, points: np.ndarray, components: int = 0) -> np.ndarray:
    """Call fct on (..., dim) points; scalars broadcast, the leading shape is kept."""
    lead, dim = points.shape[:-1], points.shape[-1]
    flat = points.reshape(-1, dim)
    shape = (flat.shape[0],) if components == 0 else (flat.shape[0], components)
    values = np.broadcast_to(np.asarray(fct(flat), dtype=float), shape)
    return values.reshape(lead + shape[1:])


def nonlinear_rule(space: FeSpace):
    return quad_rule(space.dim, MAX_DEGREE[space.dim])


def bilinear_rule(space: FeSpace):
    return quad_rule(space.dim, 2 * space.degree)


# ---------------------------
# Scatter helpers
# ---------------------------

def _scatter_matrix(space: FeSpace, local: np.ndarray, symmetric: bool = True) -> sp.csr_matrix:
    cd = space.cell_dofs
    rows = np.broadcast_to(cd[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(cd[:, None, :], local.shape).ravel()
    n = space.dof_count
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    if symmetric:
        mat = ((mat + mat.T) * 0.5).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _scatter_vector(space: FeSpace, local: np.ndarray) -> np.ndarray:
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.dof_count)


# ---------------------------
# Forms
# ---------------------------

def assemble_stiffness(space: FeSpace) -> sp.csr_matrix:
    """B[i, j] = ∫∇phi_j·∇phi_i over every DOF (no boundary elimination)."""
    rule = bilinear_rule(space)
    _, grads = space.tabulate(rule)
    weights = space.quadrature_weights(rule)
    local = np.einsum("cq,cqie,cqje->cij", weights, grads, grads)
    return _scatter_matrix(space, local)


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    rule = bilinear_rule(space)
    values, _ = space.tabulate(rule)
    weights = space.quadrature_weights(rule)
    local = np.einsum("cq,qi,qj->cij", weights, values, values)
    return _scatter_matrix(space, local)


def assemble_a_residual(w: FeFunction, spec: ProblemSpec) -> np.ndarray:
    """r[i] = ∫ s_eps(w_h) phi_i."""
    space = w.space
    rule = nonlinear_rule(space)
    values, _ = space.tabulate(rule)
    weights = space.quadrature_weights(rule)
    s = s_eps(w.values_at(rule), spec.q, spec.epsilon)
    local = np.einsum("cq,cq,qi->ci", weights, s, values)
    return _scatter_vector(space, local)


def assemble_a_jacobian(w: FeFunction, spec: ProblemSpec) -> sp.csr_matrix:
    """J[i, j] = ∫ s_eps'(w_h) phi_j phi_i."""
    space = w.space
    rule = nonlinear_rule(space)
    values, _ = space.tabulate(rule)
    weights = space.quadrature_weights(rule)
    ds = ds_eps(w.values_at(rule), spec.q, spec.epsilon)
    local = np.einsum("cq,qi,qj->cij", weights * ds, values, values)
    return _scatter_matrix(space, local)


def assemble_neumann_rhs(space: FeSpace, spec: ProblemSpec) -> np.ndarray:
    """F[i] = ∫_{∂Ω} (∇g·n) phi_i ds; point evaluations at the endpoints in 1D."""
    mesh = space.mesh
    facet_dofs = space.boundary_facet_dofs
    normals = mesh.boundary_facet_normals
    if len(facet_dofs) == 0:
        return np.zeros(space.dof_count)

    if mesh.dim == 1:
        points = mesh.vertices[facet_dofs[:, 0]]
        flux = np.sum(evaluate(spec.g_gradient, points, 1) * normals, axis=1)
        return np.bincount(facet_dofs[:, 0], weights=flux, minlength=space.dof_count)

    rule = quad_rule(1, MAX_DEGREE[1])
    trace, _ = shape_table(1, space.degree, rule.points)
    fv = mesh.boundary_facet_vertices
    a, b = mesh.vertices[fv[:, 0]], mesh.vertices[fv[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    t = rule.points[:, 0]
    points = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    flux = np.einsum("fqd,fd->fq", evaluate(spec.g_gradient, points, 2), normals)
    local = np.einsum("f,q,fq,qi->fi", lengths, rule.weights, flux, trace)
    return np.bincount(facet_dofs.ravel(), weights=local.ravel(), minlength=space.dof_count)


def assemble_source_rhs(space: FeSpace, spec: ProblemSpec) -> np.ndarray:
    """S[i] = -∫ f phi_i (zero when the problem has no source)."""
    if spec.source_f is None:
        return np.zeros(space.dof_count)
    rule = nonlinear_rule(space)
    values, _ = space.tabulate(rule)
    weights = space.quadrature_weights(rule)
    f = evaluate(spec.source_f, space.quadrature_points(rule))
    local = np.einsum("cq,cq,qi->ci", weights, f, values)
    return -_scatter_vector(space, local)


def assemble_gradient_load(space: FeSpace, grad_v: Callback) -> np.ndarray:
    """L[i] = ∫∇v·∇phi_i for a gradient callback."""
    rule = nonlinear_rule(space)
    _, grads = space.tabulate(rule)
    weights = space.quadrature_weights(rule)
    gv = evaluate(grad_v, space.quadrature_points(rule), space.dim)
    local = np.einsum("cq,cqe,cqie->ci", weights, gv, grads)
    return _scatter_vector(space, local)


# ---------------------------
# Saddle system
# ---------------------------

@dataclass(frozen=True, eq=False)
class SaddleOperators:
    """The parts of the saddle system that do not depend on (u, w)."""
    space: FeSpace
    stiffness: sp.csr_matrix
    neumann: np.ndarray
    source: np.ndarray

    @property
    def interior(self) -> np.ndarray:
        return self.space.interior_dofs

    @cached_property
    def coupling_columns(self) -> sp.csr_matrix:
        """B[:, I]"""
        return self.stiffness[:, self.interior].tocsr()

    @cached_property
    def coupling_rows(self) -> sp.csr_matrix:
        """B[I, :]"""
        return self.stiffness[self.interior, :].tocsr()

    @property
    def size(self) -> int:
        return self.space.dof_count + len(self.interior)


def prepare_saddle(space: FeSpace, spec: ProblemSpec) -> SaddleOperators:
    return SaddleOperators(
        space=space,
        stiffness=assemble_stiffness(space),
        neumann=assemble_neumann_rhs(space, spec),
        source=assemble_source_rhs(space, spec),
    )


def _check_pair(u: FeFunction, w: FeFunction, space: FeSpace) -> None:
    if u.space is not space or w.space is not space:
        raise InvalidArgumentError("u and w must live on the space the saddle system is assembled for")


def saddle_residual(u: FeFunction, w: FeFunction, spec: ProblemSpec, ops: SaddleOperators) -> np.ndarray:
    """[a(w, psi) + b(u, psi) - f(psi) for all psi ; b(w, phi) - S(phi) for interior phi]."""
    _check_pair(u, w, ops.space)
    first = assemble_a_residual(w, spec) + ops.stiffness @ u.coeffs - ops.neumann
    second = ops.coupling_rows @ w.coeffs - ops.source[ops.interior]
    return np.concatenate([first, second])


def assemble_saddle_system(u: FeFunction, w: FeFunction, spec: ProblemSpec, space: FeSpace,
                           ops: Optional[SaddleOperators] = None) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Newton matrix [[J(w), B[:, I]], [B[I, :], 0]] and the negative residual."""
    ops = ops or prepare_saddle(space, spec)
    if ops.space is not space:
        raise InvalidArgumentError("Saddle operators were prepared for another space")
    residual = saddle_residual(u, w, spec, ops)
    jac = assemble_a_jacobian(w, spec)
    matrix = sp.bmat([[jac, ops.coupling_columns], [ops.coupling_rows, None]], format="csr")
    if matrix.shape != (ops.size, ops.size):
        raise InvalidArgumentError(f"Saddle matrix has shape {matrix.shape}, expected {ops.size}")
    return matrix, -residual
