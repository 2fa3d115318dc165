# quadrature.py
"""
Quadrature on the reference segment [0, 1] and the reference triangle
{x, y >= 0, x + y <= 1}.

Segment rules are Gauss-Legendre. Triangle rules are collapsed (Duffy) products
of Gauss-Legendre rules: x = s, y = t (1 - s) with weight (1 - s), which is exact
for total degree d with ceil((d + 2) / 2) points per direction.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from fem.errors import InvalidArgumentError

MAX_DEGREE = {1: 10, 2: 8}
REFERENCE_MEASURE = {1: 1.0, 2: 0.5}


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    dim: int
    degree: int
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def barycentric(self) -> np.ndarray:
        """Barycentric coordinates (lambda_0, ..., lambda_dim) of the points."""
        return np.column_stack([1.0 - self.points.sum(axis=1), self.points])


def _gauss_01(n: int):
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def quad_rule(dim: int, exact_degree: int) -> QuadratureRule:
    if dim not in MAX_DEGREE:
        raise InvalidArgumentError(f"No quadrature for dim={dim}")
    if exact_degree < 0 or exact_degree > MAX_DEGREE[dim]:
        raise InvalidArgumentError(
            f"Quadrature degree {exact_degree} unsupported in {dim}D (max {MAX_DEGREE[dim]})"
        )

    if dim == 1:
        n = max(1, math.ceil((exact_degree + 1) / 2))
        x, w = _gauss_01(n)
        points, weights = x.reshape(-1, 1), w
    else:
        n = max(1, math.ceil((exact_degree + 2) / 2))
        s, ws = _gauss_01(n)
        t, wt = _gauss_01(n)
        S, T = np.meshgrid(s, t, indexing="ij")
        WS, WT = np.meshgrid(ws, wt, indexing="ij")
        points = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
        weights = (WS * WT * (1.0 - S)).ravel()

    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(dim=dim, degree=int(exact_degree), points=points, weights=weights)
