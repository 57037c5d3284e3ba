"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1)."""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates, weights summing to 1/2."""

    points: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.weights)

    @property
    def xy(self) -> np.ndarray:
        """Reference Cartesian coordinates (lambda_1, lambda_2)."""
        return self.points[:, 1:]


def _orbit3(a, b, w):
    # the three permutations of (a, b, b)
    pts = [(a, b, b), (b, a, b), (b, b, a)]
    return pts, [w] * 3


def strang_fix_7() -> QuadratureRule:
    """Seven-point rule exact for total degree 5."""
    s = np.sqrt(15.0)
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9 / 40]
    p, w = _orbit3((9 - 2 * s) / 21, (6 + s) / 21, (155 + s) / 1200)
    pts += p
    wts += w
    p, w = _orbit3((9 + 2 * s) / 21, (6 - s) / 21, (155 - s) / 1200)
    pts += p
    wts += w
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), 5)


def collapsed_gauss(n: int) -> QuadratureRule:
    """Conical product rule with ``n * n`` points, exact to degree 2n-1.

    Gauss-Jacobi points absorb the ``(1 - u)`` Jacobian of the collapse.
    Used for error norms and as an independent check of the default rule.
    """
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xg, wg = np.polynomial.legendre.leggauss(n)
    u, v = np.meshgrid(0.5 * (xj + 1.0), 0.5 * (xg + 1.0), indexing="ij")
    wu, wv = np.meshgrid(0.25 * wj, 0.5 * wg, indexing="ij")
    # Duffy map (u, v) -> (u, v (1 - u))
    l1 = u.ravel()
    l2 = (v * (1.0 - u)).ravel()
    pts = np.column_stack([1.0 - l1 - l2, l1, l2])
    return QuadratureRule(pts, (wu * wv).ravel(), 2 * n - 1)


def monomial_integral(p: int, q: int) -> float:
    """Exact integral of x**p * y**q over the reference triangle."""
    return factorial(p) * factorial(q) / factorial(p + q + 2)


DEFAULT_RULE = strang_fix_7()
