"""Random viscosity models and Clenshaw-Curtis sparse-grid collocation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

SQRT3 = np.sqrt(3.0)


class NonPositiveViscosityError(ValueError):
    pass


# ------------------------------------------------------------------ viscosity

@dataclass(frozen=True)
class RandomViscosityField:
    """Truncated KL viscosity ``scale * psi(x, y)`` with ``2 q + 1`` random inputs.

    ``psi = c + a0 y_1 + sum_k s_k (sin sin y_{2k} + cos cos y_{2k+1})`` where
    the products are ``f(k pi x_1 / L) f(k pi x_2 / L)``.
    """

    scale: float = 1e-3
    c: float = 1.0
    corr_length: float = 0.01
    char_length: float = np.pi
    q: int = 2

    @property
    def dimension(self) -> int:
        return 2 * self.q + 1

    @property
    def constant_amplitude(self) -> float:
        return float(np.sqrt(np.sqrt(np.pi) * self.corr_length / 2.0))

    def sqrt_eigenvalue(self, k: int) -> float:
        l = self.corr_length
        return float(np.sqrt(np.sqrt(np.pi) * l) * np.exp(-((k * np.pi * l) ** 2) / 8.0))

    def psi(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dimension,):
            raise ValueError(f"sample must have length {self.dimension}")
        x1, x2 = x[..., 0], x[..., 1]
        out = self.c + self.constant_amplitude * y[0] + np.zeros_like(x1)
        for k in range(1, self.q + 1):
            a1 = k * np.pi * x1 / self.char_length
            a2 = k * np.pi * x2 / self.char_length
            out = out + self.sqrt_eigenvalue(k) * (
                np.sin(a1) * np.sin(a2) * y[2 * k - 1] + np.cos(a1) * np.cos(a2) * y[2 * k]
            )
        return out


def kl_viscosity(field: RandomViscosityField, x, y) -> np.ndarray:
    """Viscosity at points ``x`` (..., 2) for the sample ``y``."""
    nu = field.scale * field.psi(x, y)
    if np.any(nu <= 0):
        raise NonPositiveViscosityError(f"viscosity min {np.min(nu):.3e} is not positive")
    return nu


def uniform_viscosity_samples(mean: float, spread: float, J: int, seed: int) -> np.ndarray:
    """``J`` draws from U(mean (1 - spread), mean (1 + spread)) using PCG64."""
    if not 0 <= spread < 1:
        raise ValueError("spread must lie in [0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    return mean * (1.0 + spread * rng.uniform(-1.0, 1.0, size=J))


# ------------------------------------------------------------------ sparse grid

def clenshaw_curtis_1d(level: int):
    """Nested Clenshaw-Curtis nodes and weights for the uniform density on [-1, 1].

    Level 0 is the midpoint; level ``l >= 1`` has ``2**l + 1`` nodes.
    """
    if level == 0:
        return np.zeros(1), np.ones(1)
    m = 2**level + 1
    n = m - 1
    theta = np.pi * np.arange(m) / n
    x = -np.cos(theta)
    w = np.ones(m)
    for j in range(1, n // 2 + 1):
        b = 1.0 if 2 * j == n else 2.0
        w -= b * np.cos(2 * j * theta) / (4 * j * j - 1)
    w *= 2.0 / n
    w[0] *= 0.5
    w[-1] *= 0.5
    x[np.abs(x) < 1e-15] = 0.0
    return x, 0.5 * w


@dataclass(frozen=True)
class SparseGridRule:
    points: np.ndarray  # (J, N) on [-sqrt3, sqrt3]^N
    weights: np.ndarray  # (J,)
    level: int

    @property
    def n_points(self) -> int:
        return len(self.weights)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


def clenshaw_curtis_sparse_grid(N: int, level: int) -> SparseGridRule:
    """Smolyak combination of nested CC rules, scaled so ``E[y]=0, Var[y]=I``."""
    if N < 1 or level < 0:
        raise ValueError("need N >= 1 and level >= 0")
    acc: dict[tuple, float] = {}
    for total in range(max(0, level - N + 1), level + 1):
        coef = (-1) ** (level - total) * comb(N - 1, level - total)
        for levels in _compositions(total, N):
            rules = [clenshaw_curtis_1d(l) for l in levels]
            for combo in itertools.product(*[range(len(r[0])) for r in rules]):
                pt = tuple(float(rules[d][0][i]) for d, i in enumerate(combo))
                w = coef * np.prod([rules[d][1][i] for d, i in enumerate(combo)])
                key = tuple(round(v, 14) for v in pt)
                acc[key] = acc.get(key, 0.0) + w
    # points with zero combined weight stay: the point set is the nested grid
    keys = sorted(acc)
    pts = SQRT3 * np.array(keys, dtype=float)
    wts = np.array([acc[k] for k in keys])
    return SparseGridRule(pts, wts, level)


def _compositions(total: int, parts: int):
    """Tuples of ``parts`` nonnegative ints summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def expectation(rule: SparseGridRule, qoi_values) -> float:
    """Quadrature estimate ``sum_j w_j Theta_j``."""
    v = np.asarray(qoi_values, dtype=float)
    if v.shape[0] != rule.n_points:
        raise ValueError(f"expected {rule.n_points} values, got {v.shape[0]}")
    return np.tensordot(rule.weights, v, axes=(0, 0))
