# analysis.py
"""
Model problems, error norms, convergence tables and the large-p diagnostics of
the recovered Laplacian s_h = |w_h|^(q-2) w_h.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from constants import (
    GUARD_CELLS, HIST_BINS, HOLDER_EXPONENT, INTERIOR_FRACTION, LARGE_EXPONENT, MIN_DIAGNOSTIC_SAMPLES,
    MODE_TOLERANCE, SAMPLES_PER_CELL, SOURCE_CHECK_POINTS, SOURCE_CHECK_RTOL, SOURCE_CHECK_SEED, SOURCE_CHECK_STEP,
)
from fem.assembly import Callback, ProblemSpec, evaluate, nonlinear_rule, s_eps
from fem.errors import DiagnosticError, InvalidArgumentError, PreconditionError
from fem.space import FeFunction, shape_table

PI = math.pi


# ---------------------------
# Model problems
# ---------------------------

@dataclass(frozen=True)
class ManufacturedCase:
    spec: ProblemSpec
    exact_u: Callback
    exact_grad_u: Callback
    exact_w: Callback
    domain: Tuple[float, float, float, float] = (-1.0, -1.0, 1.0, 1.0)

    def interior_box(self, fraction: float = INTERIOR_FRACTION) -> Tuple[float, float, float, float]:
        """Centred box whose sides are `fraction` of the domain's."""
        x0, y0, x1, y1 = self.domain
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        hx, hy = 0.5 * fraction * (x1 - x0), 0.5 * fraction * (y1 - y0)
        return (cx - hx, cy - hy, cx + hx, cy + hy)


def _signed_power(t: np.ndarray, e: float) -> np.ndarray:
    """|t|^(e-1) t"""
    return np.sign(t) * np.abs(t) ** e


def manufactured_sine(p: float) -> ManufacturedCase:
    """u = sin(pi x) sin(pi y) on [-1, 1]^2 with the source f = Δ(|Δu|^(p-2) Δu)."""
    if not p >= 2.0:
        raise InvalidArgumentError(f"manufactured_sine needs p >= 2, got {p}")
    p = float(p)
    c = (2.0 * PI ** 2) ** (p - 1.0)

    def s(x):
        return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])

    def grad_s(x):
        return PI * np.column_stack([
            np.cos(PI * x[:, 0]) * np.sin(PI * x[:, 1]),
            np.sin(PI * x[:, 0]) * np.cos(PI * x[:, 1]),
        ])

    def laplacian(x):
        return -2.0 * PI ** 2 * s(x)

    def exact_w(x):
        return -c * _signed_power(s(x), p - 1.0)

    def source(x):
        sv = s(x)
        first = -2.0 * PI ** 2 * _signed_power(sv, p - 1.0)
        if p == 2.0:
            second = np.zeros_like(sv)
        else:
            grad2 = np.sum(grad_s(x) ** 2, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                second = (p - 2.0) * _signed_power(sv, p - 3.0) * grad2
            second[sv == 0.0] = 0.0
        return -c * (p - 1.0) * (first + second)

    spec = ProblemSpec(p=p, g_value=s, g_gradient=grad_s, g_laplacian=laplacian,
                       source_f=source, name="manufactured_sine")
    return ManufacturedCase(spec, s, grad_s, exact_w)


def check_source_consistency(case: ManufacturedCase, n_points: int = SOURCE_CHECK_POINTS,
                             h: float = SOURCE_CHECK_STEP, rtol: float = SOURCE_CHECK_RTOL,
                             seed: int = SOURCE_CHECK_SEED) -> float:
    """
    Compare the analytic source with a Richardson-extrapolated five-point Laplacian
    of exact_w at seeded random interior points. Stencils across a sign change of
    exact_w are redrawn (|s|^(p-2) s is not smooth there for p < 4). Returns the
    max error relative to max |f|; raises DiagnosticError above rtol.
    """
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = case.domain
    pad_x, pad_y = 0.025 * (x1 - x0), 0.025 * (y1 - y0)
    w = case.exact_w
    offsets = [np.array(o) * h for o in ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))]

    pts = np.empty((0, 2))
    while len(pts) < n_points:
        draw = np.column_stack([
            rng.uniform(x0 + pad_x, x1 - pad_x, 4 * n_points),
            rng.uniform(y0 + pad_y, y1 - pad_y, 4 * n_points),
        ])
        centre = np.sign(w(draw))
        smooth = centre != 0.0
        for o in offsets:
            smooth &= np.sign(w(draw + o)) == centre
        pts = np.vstack([pts, draw[smooth]])
    pts = pts[:n_points]

    def five_point(step):
        ex, ey = np.array([step, 0.0]), np.array([0.0, step])
        return (w(pts + ex) + w(pts - ex) + w(pts + ey) + w(pts - ey) - 4.0 * w(pts)) / step ** 2

    fd = (4.0 * five_point(0.5 * h) - five_point(h)) / 3.0
    f = case.spec.source_f(pts)
    scale = max(float(np.max(np.abs(f))), np.finfo(float).tiny)
    err = float(np.max(np.abs(fd - f))) / scale
    if err > rtol:
        raise DiagnosticError(f"Manufactured source disagrees with finite differences: {err:.3e} > {rtol:g}")
    return err


def cubic_1d_case(p: float = 2.0) -> ProblemSpec:
    """g(x) = (4x - 3)(2x - 1)(4x - 1) / 120 on (0, 1), no source."""
    def g(x):
        t = x[:, 0]
        return (32.0 * t ** 3 - 48.0 * t ** 2 + 22.0 * t - 3.0) / 120.0

    def dg(x):
        t = x[:, :1]
        return (96.0 * t ** 2 - 96.0 * t + 22.0) / 120.0

    def d2g(x):
        return (192.0 * x[:, 0] - 96.0) / 120.0

    return ProblemSpec(p=p, g_value=g, g_gradient=dg, g_laplacian=d2g, name="cubic_1d")


def cosine_2d_case(m: int, p: float = 2.0) -> ProblemSpec:
    """g(x, y) = cos(m pi x) cos(m pi y) / (20 m) on [-1, 1]^2, no source."""
    if int(m) != m or m < 1:
        raise InvalidArgumentError(f"cosine_2d_case needs a positive integer m, got {m}")
    k = m * PI

    def g(x):
        return np.cos(k * x[:, 0]) * np.cos(k * x[:, 1]) / (20.0 * m)

    def dg(x):
        return -(PI / 20.0) * np.column_stack([
            np.sin(k * x[:, 0]) * np.cos(k * x[:, 1]),
            np.cos(k * x[:, 0]) * np.sin(k * x[:, 1]),
        ])

    def lap(x):
        return -(m * PI ** 2 / 10.0) * np.cos(k * x[:, 0]) * np.cos(k * x[:, 1])

    return ProblemSpec(p=p, g_value=g, g_gradient=dg, g_laplacian=lap, name=f"cosine_2d_m{m}")


# ---------------------------
# Norms
# ---------------------------

def lp_norm(values: np.ndarray, weights: np.ndarray, r: float) -> float:
    """(Σ w |v|^r)^(1/r); max-rescaled above LARGE_EXPONENT, the max for r = inf."""
    a = np.abs(np.asarray(values, dtype=float)).ravel()
    wts = np.broadcast_to(np.asarray(weights, dtype=float), np.shape(values)).ravel()
    if a.size == 0:
        return 0.0
    if np.isinf(r):
        return float(a.max())
    if r > LARGE_EXPONENT:
        big = float(a.max())
        if big == 0.0:
            return 0.0
        return big * float(np.sum(wts * (a / big) ** r)) ** (1.0 / r)
    return float(np.sum(wts * a ** r)) ** (1.0 / r)


def function_lp_norm(fh: FeFunction, r: float) -> float:
    rule = nonlinear_rule(fh.space)
    return lp_norm(fh.values_at(rule), fh.space.quadrature_weights(rule), r)


def gradient_lp_norm(fh: FeFunction, r: float) -> float:
    rule = nonlinear_rule(fh.space)
    return lp_norm(np.linalg.norm(fh.gradients_at(rule), axis=2), fh.space.quadrature_weights(rule), r)


def callback_lp_norm(space, fct: Callback, r: float, components: int = 0) -> float:
    rule = nonlinear_rule(space)
    values = evaluate(fct, space.quadrature_points(rule), components)
    if components:
        values = np.linalg.norm(values, axis=-1)
    return lp_norm(values, space.quadrature_weights(rule), r)


def error_w_lq(w_h: FeFunction, exact_w: Callback, q: float,
               region: Optional[Tuple[float, float, float, float]] = None) -> float:
    """||w - w_h||_{L^q}, over the box (x0, y0, x1, y1) only when region is given."""
    rule = nonlinear_rule(w_h.space)
    points = w_h.space.quadrature_points(rule)
    weights = w_h.space.quadrature_weights(rule)
    if region is not None:
        if w_h.space.dim != 2:
            raise InvalidArgumentError("Interior error regions are boxes in 2D")
        x0, y0, x1, y1 = region
        inside = (points[..., 0] > x0) & (points[..., 0] < x1) & (points[..., 1] > y0) & (points[..., 1] < y1)
        weights = weights * inside
    exact = evaluate(exact_w, points)
    return lp_norm(w_h.values_at(rule) - exact, weights, q)


def error_gradu_lp(u_h: FeFunction, exact_grad_u: Callback, p: float) -> float:
    space = u_h.space
    rule = nonlinear_rule(space)
    exact = evaluate(exact_grad_u, space.quadrature_points(rule), space.dim)
    err = np.linalg.norm(u_h.gradients_at(rule) - exact, axis=2)
    return lp_norm(err, space.quadrature_weights(rule), p)


# ---------------------------
# Convergence tables
# ---------------------------

EOC_COLUMNS = ["p", "q", "k", "h_max", "dofs", "err_w_Lq", "err_gradu_Lp", "err_w_Lq_interior",
               "eoc_w", "eoc_u", "eoc_w_interior", "rate_w_predicted", "rate_u_predicted"]


def eoc(errors: Sequence[float], hs: Sequence[float]) -> np.ndarray:
    """eoc[i] = log(e[i]/e[i+1]) / log(h[i]/h[i+1]); +inf where the finer error is 0."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if e.shape != h.shape or e.ndim != 1 or e.size < 2:
        raise InvalidArgumentError("eoc needs two equal-length sequences with at least 2 entries")
    if np.any(np.diff(h) >= 0):
        raise InvalidArgumentError(f"Mesh sizes must be strictly decreasing: {hs}")
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    rates[e[1:] == 0.0] = np.inf
    return rates


def predicted_rates(p: float, k: int) -> Tuple[float, float]:
    """Theoretical rates for ||w - w_h||_{L^q} and ||∇(u - u_h)||_{L^p}."""
    q = p / (p - 1.0)
    return 0.5 * q * (k + 1), min(float(k), (k + 1) / (p - 1.0))


def eoc_table(p: float, k: int, h_max: Sequence[float], dofs: Sequence[int],
              err_w: Sequence[float], err_u: Sequence[float],
              err_w_interior: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """
    One row per mesh level; the first row has empty EOC entries. The interior
    columns stay empty unless interior w errors are given.
    """
    q = p / (p - 1.0)
    rate_w, rate_u = predicted_rates(p, k)
    df = pd.DataFrame({
        "p": float(p), "q": q, "k": int(k),
        "h_max": list(h_max), "dofs": list(dofs),
        "err_w_Lq": list(err_w), "err_gradu_Lp": list(err_u),
    })
    df["err_w_Lq_interior"] = np.nan if err_w_interior is None else list(err_w_interior)
    df["eoc_w"] = np.nan
    df["eoc_u"] = np.nan
    df["eoc_w_interior"] = np.nan
    if len(df) >= 2:
        df.loc[1:, "eoc_w"] = eoc(df["err_w_Lq"], df["h_max"])
        df.loc[1:, "eoc_u"] = eoc(df["err_gradu_Lp"], df["h_max"])
        if err_w_interior is not None:
            df.loc[1:, "eoc_w_interior"] = eoc(df["err_w_Lq_interior"], df["h_max"])
    df["rate_w_predicted"] = rate_w
    df["rate_u_predicted"] = rate_u
    return df[EOC_COLUMNS]


# ---------------------------
# Recovered Laplacian
# ---------------------------

@dataclass(frozen=True, eq=False)
class RecoveredLaplacian:
    """s_h(x) = |w_h(x)|^(q-2) w_h(x)."""
    w_h: FeFunction
    q: float

    def __call__(self, cell: int, ref_point) -> float:
        return float(s_eps(np.array([self.w_h.eval(cell, ref_point)]), self.q, 0.0)[0])

    def at_rule(self, rule) -> np.ndarray:
        return s_eps(self.w_h.values_at(rule), self.q, 0.0)

    def at_dofs(self) -> np.ndarray:
        return s_eps(self.w_h.coeffs, self.q, 0.0)

    def sample_1d(self, per_cell: int = SAMPLES_PER_CELL) -> Tuple[np.ndarray, np.ndarray]:
        """Ordered (x, s_h(x)) samples at per_cell interior points of every cell."""
        space = self.w_h.space
        if space.dim != 1:
            raise InvalidArgumentError("sample_1d needs a 1D space")
        t = (np.arange(per_cell) + 0.5) / per_cell
        values, _ = shape_table(1, space.degree, t)
        w = np.einsum("qb,cb->cq", values, self.w_h.coeffs[space.cell_dofs])
        x = space.mesh.map_points(t)[:, :, 0]
        order = np.argsort(x.ravel(), kind="stable")
        return x.ravel()[order], s_eps(w, self.q, 0.0).ravel()[order]


def recovered_laplacian(w_h: FeFunction, q: float) -> RecoveredLaplacian:
    return RecoveredLaplacian(w_h, float(q))


# ---------------------------
# Large-p diagnostics
# ---------------------------

@dataclass(frozen=True)
class BreakpointDiagnostics:
    num_sign_changes: int
    plateau_means: Tuple[float, float]
    plateau_relative_stddev: float
    break_location: float

    def as_row(self) -> Dict:
        return {
            "num_sign_changes": self.num_sign_changes,
            "plateau_mean_left": self.plateau_means[0],
            "plateau_mean_right": self.plateau_means[1],
            "plateau_relative_stddev": self.plateau_relative_stddev,
            "break_location": self.break_location,
        }


def breakpoint_diagnostics_1d(samples, cell_width: Optional[float] = None,
                              guard_cells: int = GUARD_CELLS) -> BreakpointDiagnostics:
    """
    Count sign changes of a 1D sample of s_h outside Gibbs guard bands.

    samples: (x, s) pair of arrays or a sequence of (x, s) tuples. Samples within
    guard_cells * cell_width of the ends are dropped; sign flips closer than two
    guard bands are one cluster, and a cluster counts as a sign change when it
    flips the sign an odd number of times. cell_width defaults to the median
    sample spacing.
    """
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[0]) == 1:
        x, s = (np.asarray(a, dtype=float) for a in samples)
    else:
        arr = np.asarray(samples, dtype=float).reshape(-1, 2)
        x, s = arr[:, 0], arr[:, 1]
    order = np.argsort(x, kind="stable")
    x, s = x[order], s[order]
    if x.size < 2:
        raise DiagnosticError(f"Only {x.size} samples; need at least {MIN_DIAGNOSTIC_SAMPLES}")

    h = float(np.median(np.diff(x))) if cell_width is None else float(cell_width)
    band = guard_cells * h
    keep = (x >= x[0] + band) & (x <= x[-1] - band) & (s != 0.0)
    x, s = x[keep], s[keep]
    if x.size < MIN_DIAGNOSTIC_SAMPLES:
        raise DiagnosticError(f"Only {x.size} samples outside the boundary guard bands")

    flips = np.flatnonzero(np.sign(s[:-1]) != np.sign(s[1:]))
    crossings = x[flips] - s[flips] * (x[flips + 1] - x[flips]) / (s[flips + 1] - s[flips])

    clusters = []
    for c in crossings:
        if clusters and c - clusters[-1][-1] <= 2.0 * band:
            clusters[-1].append(c)
        else:
            clusters.append([c])
    breaks = [float(np.median(cl)) for cl in clusters if len(cl) % 2 == 1]

    usable = np.ones_like(x, dtype=bool)
    for cl in clusters:
        usable &= ~((x >= cl[0] - band) & (x <= cl[-1] + band))
    x, s = x[usable], s[usable]
    if x.size < MIN_DIAGNOSTIC_SAMPLES:
        raise DiagnosticError(f"Only {x.size} samples outside the Gibbs guard bands")

    location = breaks[0] if breaks else float("nan")
    if breaks:
        left, right = s[x < location], s[x > location]
    else:
        left = right = s
    if left.size == 0 or right.size == 0:
        raise DiagnosticError("A plateau has no usable samples")

    means = (float(left.mean()), float(right.mean()))
    pooled = math.sqrt((np.sum((left - means[0]) ** 2) + np.sum((right - means[1]) ** 2)) / (left.size + right.size))
    level = 0.5 * (abs(means[0]) + abs(means[1]))
    rel = pooled / level if level > 0 else float("inf")
    return BreakpointDiagnostics(len(breaks), means, float(rel), location)


def laplacian_mode_report(w_h: FeFunction, q: float, bins: int = HIST_BINS,
                          tolerance: float = MODE_TOLERANCE) -> Dict:
    """Top-2 histogram modes of |s_h| over quadrature points and the fraction near either."""
    rule = nonlinear_rule(w_h.space)
    a = np.abs(recovered_laplacian(w_h, q).at_rule(rule)).ravel()
    counts, edges = np.histogram(a, bins=bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    top = np.argsort(counts, kind="stable")[::-1][:2]
    modes = sorted(float(centres[i]) for i in top)
    near = np.zeros(a.shape, dtype=bool)
    for mode in modes:
        near |= np.abs(a - mode) <= tolerance * abs(mode)
    return {
        "mode_1": modes[0],
        "mode_2": modes[-1],
        "mode_fraction": float(near.mean()) if a.size else 0.0,
    }


def stability_margin(w_h: FeFunction, spec: ProblemSpec) -> float:
    """||Δg||_{L^p} - ||w_h||_{L^q}^(q-1)."""
    if spec.has_source:
        raise PreconditionError("The stability bound is stated for the problem without source")
    rhs = callback_lp_norm(w_h.space, spec.g_laplacian, spec.p)
    return rhs - function_lp_norm(w_h, spec.q) ** (spec.q - 1.0)


def holder_gap(w_h: FeFunction, p: float, r: float = HOLDER_EXPONENT) -> float:
    """||s_h||_{L^r} - |Ω|^(1/r - 1/p) ||s_h||_{L^p}; nonpositive for r < p."""
    q = p / (p - 1.0)
    space = w_h.space
    rule = nonlinear_rule(space)
    s = recovered_laplacian(w_h, q).at_rule(rule)
    weights = space.quadrature_weights(rule)
    return lp_norm(s, weights, r) - space.mesh.measure ** (1.0 / r - 1.0 / p) * lp_norm(s, weights, p)


def limit_diagnostics(u_h: FeFunction, w_h: FeFunction, spec: ProblemSpec) -> Dict:
    """Per-exponent quantities tracked along the continuation."""
    space = w_h.space
    rule = nonlinear_rule(space)
    weights = space.quadrature_weights(rule)
    s = recovered_laplacian(w_h, spec.q).at_rule(rule)
    lap_g = evaluate(spec.g_laplacian, space.quadrature_points(rule))
    row = {
        "p": spec.p,
        "q": spec.q,
        "s_linf_proxy": float(np.max(np.abs(s))),
        "s_lp": lp_norm(s, weights, spec.p),
        "laplacian_bound": float(np.max(np.abs(lap_g))) * space.mesh.measure ** (1.0 / spec.p),
        "grad_u_lp": gradient_lp_norm(u_h, spec.p),
        "grad_g_lp": callback_lp_norm(space, spec.g_gradient, spec.p, space.dim),
        "holder_gap": holder_gap(w_h, spec.p) if spec.p > HOLDER_EXPONENT else 0.0,
    }
    row["stability_margin"] = float("nan") if spec.has_source else stability_margin(w_h, spec)
    return row
