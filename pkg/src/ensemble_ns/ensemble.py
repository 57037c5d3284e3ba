"""Ensemble bookkeeping: means, fluctuations, eddy viscosity, diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem.quadrature import DEFAULT_RULE
from .fem.spaces import FeSpace


class StaleCacheError(RuntimeError):
    """Mean/fluctuation caches do not match the current velocities."""


@dataclass
class EnsembleState:
    """Per-realization coefficient vectors at one time level.

    ``u_hat`` holds the momentum-step velocities (the coupled velocities for
    the coupled scheme), ``p_hat`` the pressures.  For the projection scheme
    the projected velocity is ``u_hat - dt grad p_hat`` and is never stored
    as a separate coefficient vector; ``u_tilde`` is left ``None``.
    """

    u_hat: np.ndarray  # (J, n_vel)
    p_hat: np.ndarray  # (J, n_pres)
    n: int = 0
    t: float = 0.0
    u_tilde: np.ndarray | None = None
    mean: np.ndarray | None = field(default=None, repr=False)
    fluct: np.ndarray | None = field(default=None, repr=False)
    _stamp: int | None = field(default=None, repr=False)

    @property
    def J(self) -> int:
        return self.u_hat.shape[0]


def update_mean_fluct(state: EnsembleState) -> EnsembleState:
    """Fill the ensemble mean and fluctuation caches in place."""
    u = np.asarray(state.u_hat)
    if u.ndim != 2:
        raise ValueError("u_hat must be a (J, n) array")
    # shifting by the first member makes identical members give exactly zero fluctuations
    mean = u[0] + (u - u[0]).mean(axis=0)
    state.mean = mean
    state.fluct = u - mean
    state._stamp = _fingerprint(state)
    return state


def _fingerprint(state: EnsembleState):
    u = state.u_hat
    return (state.n, u.shape, float(u.sum()), float(np.abs(u).sum()))


def _require_fresh(state: EnsembleState):
    if state.mean is None or state._stamp != _fingerprint(state):
        raise StaleCacheError("call update_mean_fluct before using ensemble caches")


def mixing_length_sq(state: EnsembleState, space: FeSpace, rule=DEFAULT_RULE) -> np.ndarray:
    """Sum over realizations of ``|u'_j|^2`` at quadrature points, (nt, nq)."""
    _require_fresh(state)
    out = None
    for fl in state.fluct:
        v = space.values_at_quad(fl, rule)
        sq = np.einsum("tqc,tqc->tq", v, v)
        out = sq if out is None else out + sq
    return out


def eev_field(state: EnsembleState, space: FeSpace, mu: float, dt: float, rule=DEFAULT_RULE) -> np.ndarray:
    """Eddy viscosity ``mu dt sum_j |u'_j|^2`` at quadrature points."""
    if mu < 0 or dt <= 0:
        raise ValueError("need mu >= 0 and dt > 0")
    return mu * dt * mixing_length_sq(state, space, rule)


@dataclass
class ViscosityDecomposition:
    """Mean viscosity, fluctuations and ``alpha_j = min(nu_bar) - max|nu'_j|``.

    All fields are sampled at quadrature points, shape (nt, nq).
    """

    nu: np.ndarray  # (J, nt, nq)
    nu_bar: np.ndarray
    nu_prime: np.ndarray
    alpha: np.ndarray

    @classmethod
    def from_samples(cls, nu) -> "ViscosityDecomposition":
        nu = np.asarray(nu, dtype=float)
        nu_bar = nu.mean(axis=0)
        nu_prime = nu - nu_bar
        alpha = nu_bar.min() - np.abs(nu_prime).reshape(len(nu), -1).max(axis=1)
        return cls(nu, nu_bar, nu_prime, alpha)

    @property
    def alpha_ok(self) -> bool:
        return bool(np.all(self.alpha > 0))


def constant_viscosities(values, space: FeSpace, rule=DEFAULT_RULE) -> np.ndarray:
    """Broadcast scalar viscosities to (J, nt, nq)."""
    shape = space.tabulate(rule)["wdet"].shape
    return np.asarray(values, dtype=float)[:, None, None] * np.ones((1,) + shape)


@dataclass
class StabilityReport:
    alpha: np.ndarray
    max_div_fluct: np.ndarray  # per realization, max over quadrature points
    energy_mean: float
    mu_advisory: np.ndarray  # alpha / (dt (alpha^2 - div^2)) with the unknown constant set to 1
    warnings: list

    @property
    def alpha_min(self) -> float:
        return float(self.alpha.min())


def stability_diagnostics(state, visc: ViscosityDecomposition, space: FeSpace, mass,
                          mu: float, dt: float, gamma: float, rule=DEFAULT_RULE) -> StabilityReport:
    """Advisory stability quantities; never raises on a failed condition."""
    _require_fresh(state)
    div = np.array([np.abs(space.div_at_quad(fl, rule)).max() for fl in state.fluct])
    energy = 0.5 * float(state.mean @ (mass @ state.mean))
    alpha = visc.alpha
    denom = dt * (alpha**2 - div**2)
    with np.errstate(divide="ignore"):
        mu_adv = np.where(denom > 0, alpha / np.where(denom > 0, denom, 1.0), np.inf)
    warnings = []
    if np.any(alpha <= 0):
        warnings.append("alpha_j <= 0: viscosity fluctuation exceeds mean minimum")
    if np.any(alpha <= div):
        warnings.append("alpha_j <= max|div u'_j| (unit constant)")
    return StabilityReport(alpha, div, energy, mu_adv, warnings)
