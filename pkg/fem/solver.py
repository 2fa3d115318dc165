# solver.py
"""
Direct sparse solves, the eps-staged damped Newton method for the saddle system
and the p-continuation driver.
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import qr
from scipy.sparse.linalg import norm as sparse_norm
from scipy.sparse.linalg import splu

from constants import (
    BOUNDARY_PROJECTIONS, DENSE_PIVOT_LIMIT, EPSILON_SCHEDULE, LINE_SEARCH_HALVINGS, LU_RESIDUAL_FACTOR,
    MAX_BISECTIONS, NEWTON_ABS_TOL, NEWTON_MAX_ITERS, NEWTON_REL_TOL, P_SCHEDULE_DEFAULT, STABILITY_SLACK,
)
from fem.assembly import (
    ProblemSpec, assemble_saddle_system, evaluate, nonlinear_rule, prepare_saddle, s_eps, saddle_residual,
)
from fem.errors import ContinuationError, InvalidArgumentError, PreconditionError, SolverError
from fem.mesh import Mesh, metrics
from fem.space import FeFunction, FeSpace, build_space, interpolate, ritz_project
from utils.progress import Progress, log


# ---------------------------
# Linear solves
# ---------------------------

def _structural_pivot(A: sp.spmatrix) -> Optional[int]:
    mask = (A != 0)
    empty_rows = np.flatnonzero(mask.getnnz(axis=1) == 0)
    empty_cols = np.flatnonzero(mask.getnnz(axis=0) == 0)
    empty = np.concatenate([empty_rows, empty_cols])
    return int(empty.min()) if empty.size else None


def _dependent_pivot(A: sp.spmatrix, residual: Optional[np.ndarray] = None) -> Optional[int]:
    """First column dropped by a rank-revealing QR, else the row of the largest residual."""
    n = A.shape[0]
    if n <= DENSE_PIVOT_LIMIT:
        R, perm = qr(A.toarray(), mode="r", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.count_nonzero(diag > n * np.finfo(float).eps * diag[0]))
        if rank < n:
            return int(perm[rank])
    if residual is not None:
        return int(np.argmax(np.abs(residual)))
    return None


def lu_solve(A, rhs) -> np.ndarray:
    """Sparse LU with partial pivoting; checks the backward residual of the result."""
    A = sp.csc_matrix(A, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n, m = A.shape
    if n != m:
        raise InvalidArgumentError(f"lu_solve needs a square matrix, got {A.shape}")
    if rhs.shape != (n,):
        raise InvalidArgumentError(f"Right-hand side has shape {rhs.shape}, expected ({n},)")
    if n == 0:
        return np.zeros(0)

    pivot = _structural_pivot(A)
    if pivot is not None:
        raise SolverError("Structurally singular matrix", pivot=pivot)
    try:
        x = splu(A).solve(rhs)
    except RuntimeError as e:
        raise SolverError(f"Sparse LU failed: {e}", pivot=_dependent_pivot(A)) from e

    if not np.all(np.isfinite(x)):
        raise SolverError("Sparse LU produced non-finite values", pivot=_dependent_pivot(A))
    r = A @ x - rhs
    resid = float(np.max(np.abs(r)))
    bound = LU_RESIDUAL_FACTOR * (sparse_norm(A, np.inf) * np.max(np.abs(x)) + np.max(np.abs(rhs)))
    if resid > bound:
        raise SolverError(f"Numerically singular matrix: residual {resid:.3e} exceeds {bound:.3e}",
                          pivot=_dependent_pivot(A, r))
    return x


# ---------------------------
# Configuration and reports
# ---------------------------

@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = NEWTON_ABS_TOL
    rel_tol: float = NEWTON_REL_TOL
    max_iters: int = NEWTON_MAX_ITERS
    max_line_search_halvings: int = LINE_SEARCH_HALVINGS
    epsilon_schedule: Tuple[float, ...] = EPSILON_SCHEDULE
    rescale: bool = True
    boundary_projection: str = "interpolate"

    def __post_init__(self):
        object.__setattr__(self, "epsilon_schedule", tuple(float(e) for e in self.epsilon_schedule))
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InvalidArgumentError("Newton tolerances must be positive")
        if self.max_iters < 1 or self.max_line_search_halvings < 0:
            raise InvalidArgumentError("max_iters must be >= 1 and max_line_search_halvings >= 0")
        eps = np.array(self.epsilon_schedule)
        if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise InvalidArgumentError(f"epsilon_schedule must be positive and strictly decreasing: {self.epsilon_schedule}")
        if self.boundary_projection not in BOUNDARY_PROJECTIONS:
            raise InvalidArgumentError(f"boundary_projection must be one of {BOUNDARY_PROJECTIONS}")


@dataclass(frozen=True)
class ContinuationConfig:
    p_schedule: Tuple[float, ...] = P_SCHEDULE_DEFAULT
    warm_start: bool = True
    max_bisections: int = MAX_BISECTIONS

    def __post_init__(self):
        object.__setattr__(self, "p_schedule", tuple(float(p) for p in self.p_schedule))
        ps = np.array(self.p_schedule)
        if ps.size == 0:
            raise InvalidArgumentError("p_schedule is empty")
        if ps[0] != 2.0:
            raise InvalidArgumentError(f"p_schedule must start at 2, got {self.p_schedule[0]}")
        if np.any(np.diff(ps) <= 0):
            raise InvalidArgumentError(f"p_schedule must be strictly increasing: {self.p_schedule}")
        if self.max_bisections < 0:
            raise InvalidArgumentError("max_bisections must be >= 0")


@dataclass
class SolveReport:
    p: float
    k: int
    h_max: float
    dofs: int
    epsilons: Tuple[float, ...] = ()
    newton_iterations: List[int] = field(default_factory=list)
    residual: float = float("nan")
    tolerance: float = float("nan")
    converged: bool = False
    wall_s: float = 0.0
    scale: float = 1.0

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def newton_iters_total(self) -> int:
        return int(sum(self.newton_iterations))

    def as_row(self) -> Dict:
        return {
            "p": self.p, "q": self.q, "k": self.k, "h_max": self.h_max, "dofs": self.dofs,
            "newton_iters_total": self.newton_iters_total, "residual": self.residual,
            "converged": self.converged, "wall_s": self.wall_s,
        }


# ---------------------------
# Newton
# ---------------------------

def _lp_mean(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    a = np.abs(values)
    big = float(a.max()) if a.size else 0.0
    if big == 0.0 or not np.isfinite(big):
        return 0.0
    return big * float(np.sum(weights * (a / big) ** p) / np.sum(weights)) ** (1.0 / p)


def data_scale(space: FeSpace, spec: ProblemSpec, w0: Optional[FeFunction] = None) -> float:
    """L^p-mean of the expected Laplacian: of the warm start if it has one, else of Δg."""
    rule = nonlinear_rule(space)
    weights = space.quadrature_weights(rule)
    if w0 is not None:
        sigma = _lp_mean(s_eps(w0.values_at(rule), spec.q, 0.0), weights, spec.p)
        if sigma > 0.0:
            return sigma
    sigma = _lp_mean(evaluate(spec.g_laplacian, space.quadrature_points(rule)), weights, spec.p)
    return sigma if sigma > 0.0 else 1.0


def transfer_warm_start(u: FeFunction, w: FeFunction, q_prev: float, p: float) -> Tuple[FeFunction, FeFunction]:
    """Initial state for exponent p: u unchanged, w = |s|^(p-2) s with s the recovered Laplacian."""
    s = s_eps(w.coeffs, q_prev, 0.0)
    return u.copy(), FeFunction(w.space, np.sign(s) * np.abs(s) ** (p - 1.0))


def solve_p_bilaplacian(mesh: Mesh, k: int, spec: ProblemSpec, cfg: Optional[NewtonConfig] = None,
                        initial: Optional[Tuple[FeFunction, FeFunction]] = None,
                        progress: Progress = None) -> Tuple[FeFunction, FeFunction, SolveReport]:
    """
    Solve the discrete saddle system for (u_h, w_h) with eps-staged damped Newton.
    u_h = g at the boundary DOFs (nodal interpolation). Returns the last iterate
    with report.converged False when the smallest-eps stage did not converge.
    """
    start = time.time()
    cfg = cfg or NewtonConfig()

    if initial is not None:
        u0, w0 = initial
        space = u0.space
        if space.mesh is not mesh or space.degree != k or w0.space is not space:
            raise InvalidArgumentError("Warm start lives on another mesh or degree")
    else:
        u0 = w0 = None
        space = build_space(mesh, k)

    sigma = data_scale(space, spec, w0) if cfg.rescale else 1.0
    work = spec.scaled(sigma)
    w_scale = sigma ** (spec.p - 1.0)

    u = interpolate(space, work.g_value)
    bdofs, interior = space.boundary_dofs, space.interior_dofs
    reference = u.copy()
    if u0 is not None:
        u.coeffs[interior] = u0.coeffs[interior] / sigma
    elif cfg.boundary_projection == "ritz":
        u = ritz_project(space, work.g_gradient, bc_values=u.coeffs[bdofs])
    w = FeFunction(space, w0.coeffs / w_scale) if w0 is not None else FeFunction(space, np.zeros(space.dof_count))

    ops = prepare_saddle(space, work)
    log(f"Assembled saddle operators: {space.dof_count} DOFs, {len(interior)} interior, scale {sigma:.4g}", progress)

    # Convergence reference: the residual at the zero state (the eps-independent part)
    r0 = float(np.max(np.abs(saddle_residual(reference, FeFunction(space, np.zeros(space.dof_count)), work, ops))))
    tol = max(cfg.abs_tol, cfg.rel_tol * r0)
    n_w = space.dof_count

    report = SolveReport(p=spec.p, k=k, h_max=metrics(mesh).h_max, dofs=space.dof_count,
                         epsilons=cfg.epsilon_schedule, tolerance=tol, scale=sigma)
    norm = float("inf")
    stage_converged = False

    for eps in cfg.epsilon_schedule:
        stage = work.with_epsilon(eps)
        res = saddle_residual(u, w, stage, ops)
        norm = float(np.max(np.abs(res)))
        its = 0
        stage_converged = False
        while True:
            if its >= 1 and norm <= tol:
                stage_converged = True
                break
            if its >= cfg.max_iters:
                break
            matrix, rhs = assemble_saddle_system(u, w, stage, space, ops)
            try:
                delta = lu_solve(matrix, rhs)
            except SolverError as e:
                log(f"[WARN] Newton ε={eps:.0e}: linear solve failed ({e})", progress)
                break

            base = float(np.linalg.norm(res))
            step = 1.0
            accepted = False
            for _ in range(cfg.max_line_search_halvings + 1):
                w_try = FeFunction(space, w.coeffs + step * delta[:n_w])
                u_try = u.copy()
                u_try.coeffs[interior] += step * delta[n_w:]
                res_try = saddle_residual(u_try, w_try, stage, ops)
                norm_try = float(np.max(np.abs(res_try)))
                if np.isfinite(norm_try) and (np.linalg.norm(res_try) <= base or norm_try <= tol):
                    accepted = True
                    break
                step *= 0.5
            its += 1
            if not accepted:
                log(f"[WARN] Newton ε={eps:.0e} it={its}: line search exhausted at |R|∞={norm:.3e}", progress)
                break
            u, w, res, norm = u_try, w_try, res_try, norm_try
            log(f"Newton ε={eps:.0e} it={its} |R|∞={norm:.3e} step={step:g}", progress)

        report.newton_iterations.append(its)
        if not stage_converged:
            log(f"[WARN] Newton stage ε={eps:.0e} not converged after {its} iterations (|R|∞={norm:.3e}, tol={tol:.1e})", progress)

    report.residual = norm
    report.converged = stage_converged
    report.wall_s = round(time.time() - start, 4)

    u_h = FeFunction(space, sigma * u.coeffs)
    w_h = FeFunction(space, w_scale * w.coeffs)

    if report.converged and not spec.has_source:
        from fem.analysis import stability_margin
        margin = stability_margin(w_h, spec)
        if margin < -STABILITY_SLACK:
            log(f"[ALERT] Stability margin {margin:.3e} below -{STABILITY_SLACK:g} at p={spec.p:g}", progress)

    status = "converged" if report.converged else "NOT converged"
    log(f"Newton {status}: p={spec.p:g} iterations={report.newton_iterations} |R|∞={norm:.3e} in {report.wall_s}s", progress)
    return u_h, w_h, report


# ---------------------------
# Continuation in p
# ---------------------------

@dataclass
class ContinuationStep:
    p: float
    u: FeFunction
    w: FeFunction
    report: SolveReport
    diagnostics: Dict = field(default_factory=dict)
    scheduled: bool = True


def continuation_solve(mesh: Mesh, k: int, base_spec: ProblemSpec, ccfg: Optional[ContinuationConfig] = None,
                       ncfg: Optional[NewtonConfig] = None, progress: Progress = None) -> List[ContinuationStep]:
    """
    March along ccfg.p_schedule, warm-starting each exponent from the previous one.
    A failed step is retried at the midpoint between the last converged exponent and
    the failed one, at most ccfg.max_bisections times per scheduled exponent.
    Intermediate exponents are returned with scheduled=False.
    """
    from fem.analysis import limit_diagnostics

    if base_spec.has_source:
        raise PreconditionError("Continuation is defined for the homogeneous problem (no source)")
    ccfg = ccfg or ContinuationConfig()
    ncfg = ncfg or NewtonConfig()

    steps: List[ContinuationStep] = []
    prev: Optional[ContinuationStep] = None

    for target in ccfg.p_schedule:
        bisections = 0
        p_try = target
        while True:
            initial = None
            if prev is not None and ccfg.warm_start:
                initial = transfer_warm_start(prev.u, prev.w, prev.report.q, p_try)
            log(f"Continuation: solving p={p_try:g} (target {target:g})", progress)
            u, w, rep = solve_p_bilaplacian(mesh, k, base_spec.with_p(p_try), ncfg, initial=initial, progress=progress)

            if rep.converged:
                spec_p = base_spec.with_p(p_try)
                step = ContinuationStep(p_try, u, w, rep, limit_diagnostics(u, w, spec_p), p_try == target)
                steps.append(step)
                prev = step
                if p_try == target:
                    break
                p_try = target
                continue

            if prev is None or bisections >= ccfg.max_bisections:
                raise ContinuationError(
                    f"Continuation failed at p={p_try:g} (target {target:g}) after {bisections} bisections",
                    partial=steps,
                )
            bisections += 1
            p_try = 0.5 * (prev.p + p_try)
            log(f"[WARN] Continuation: bisecting to p={p_try:g} ({bisections}/{ccfg.max_bisections})", progress)

    log(f"Continuation finished: {len(steps)} steps up to p={steps[-1].p:g}", progress)
    return steps
