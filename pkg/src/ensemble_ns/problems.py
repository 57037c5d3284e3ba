"""Closed-form solutions, perturbation profiles and benchmark problem setups."""

from __future__ import annotations

import numpy as np

from .mesh import barycentric_refine, remove_step, structured_rect_mesh
from .schemes import EnsembleProblem
from .stochastic import RandomViscosityField, SparseGridRule, kl_viscosity


# ------------------------------------------------------------------ perturbations

def alternating_profile(J: int) -> np.ndarray:
    """``k_j = (-1)^(j+1) 4 ceil(j/2) / J`` for j = 1..J."""
    j = np.arange(1, J + 1)
    return (-1.0) ** (j + 1) * 4 * np.ceil(j / 2) / J


def linear_profile(J: int) -> np.ndarray:
    """``k_j = (2j - 1 - J) / floor(J/2)`` for j = 1..J."""
    j = np.arange(1, J + 1)
    return (2 * j - 1 - J) / (J // 2)


PERTURBATION_PROFILES = {"alternating": alternating_profile, "linear": linear_profile}


# ------------------------------------------------------------------ manufactured solution

def mms_velocity(x, t):
    x1, x2 = x[..., 0], x[..., 1]
    a = 1.0 + np.exp(t)
    return np.stack([np.cos(x2) + a * np.sin(x2), np.sin(x1) + a * np.cos(x1)], axis=-1)


def mms_pressure(x, t):
    return np.sin(x[..., 0] + x[..., 1]) * (1.0 + np.exp(t))


def mms_velocity_grad(x, t):
    """``[..., c, d] = d u_c / d x_d``."""
    x1, x2 = x[..., 0], x[..., 1]
    a = 1.0 + np.exp(t)
    g = np.zeros(x.shape[:-1] + (2, 2))
    g[..., 0, 1] = -np.sin(x2) + a * np.cos(x2)
    g[..., 1, 0] = np.cos(x1) - a * np.sin(x1)
    return g


def mms_forcing(x, t, nu, scale=1.0):
    """Body force for the scaled pair ``(scale u, scale p)`` and constant ``nu``.

    ``u_t + u . grad u - nu lap u + grad p`` with ``lap u = -u`` for this
    solution.
    """
    x1, x2 = x[..., 0], x[..., 1]
    e = np.exp(t)
    u = mms_velocity(x, t)
    g = mms_velocity_grad(x, t)
    dudt = np.stack([e * np.sin(x2), e * np.cos(x1)], axis=-1)
    conv = np.einsum("...d,...cd->...c", u, g)
    gradp = (1.0 + e) * np.cos(x1 + x2)
    return scale * dudt + scale**2 * conv + nu * scale * u + scale * gradp[..., None]


def manufactured_problem(mesh, viscosities, eps: float, profile: str = "alternating") -> EnsembleProblem:
    """Noisy ensemble ``u_j = (1 + k_j eps) u`` with constant viscosities ``nu_j``."""
    nu = np.asarray(viscosities, dtype=float)
    J = len(nu)
    k = PERTURBATION_PROFILES[profile](J)
    s = 1.0 + k * eps

    def vel(x, t, j):
        return s[j] * mms_velocity(x, t)

    return EnsembleProblem(
        mesh=mesh,
        J=J,
        viscosity=lambda x, j: np.full(len(x), nu[j]),
        initial=lambda x, j: vel(x, 0.0, j),
        boundary=vel,
        forcing=lambda x, t, j: mms_forcing(x, t, nu[j], s[j]),
        exact_velocity=vel,
        exact_pressure=lambda x, t, j: s[j] * mms_pressure(x, t),
        name="manufactured",
    )


# ------------------------------------------------------------------ Taylor-Green vortex

def tgv_velocity(x, t, nu):
    x1, x2 = x[..., 0], x[..., 1]
    d = np.exp(-2.0 * nu * t)
    return d * np.stack([np.sin(x1) * np.cos(x2), -np.cos(x1) * np.sin(x2)], axis=-1)


def tgv_pressure(x, t, nu):
    return 0.25 * (np.cos(2 * x[..., 0]) + np.cos(2 * x[..., 1])) * np.exp(-4.0 * nu * t)


def tgv_energy(t, nu, L=np.pi):
    """Exact kinetic energy ``1/2 ||u||^2`` on ``[0, L]^2`` for ``L = pi``."""
    return 0.5 * (L * L / 2.0) * np.exp(-4.0 * nu * t)


def _kl_problem(mesh, field, rule, J=None, **kw):
    pts = rule.points if J is None else rule.points[:J]
    return dict(
        mesh=mesh,
        J=len(pts),
        viscosity=lambda x, j: kl_viscosity(field, x, pts[j]),
        **kw,
    )


def tgv_problem(n: int, field: RandomViscosityField, rule: SparseGridRule, refine: bool = True) -> EnsembleProblem:
    mesh = structured_rect_mesh((0, np.pi), (0, np.pi), n, n)
    if refine:
        mesh = barycentric_refine(mesh)
    nu0 = field.scale * field.c
    return EnsembleProblem(**_kl_problem(
        mesh, field, rule,
        initial=lambda x, j: tgv_velocity(x, 0.0, nu0),
        boundary=lambda x, t, j: tgv_velocity(x, t, nu0),
        exact_velocity=lambda x, t, j: tgv_velocity(x, t, nu0),
        name="tgv",
    ))


# ------------------------------------------------------------------ channel over a step

def channel_profile(x):
    """Parabolic inflow with unit centerline speed on a channel of height 10."""
    y = x[..., 1]
    return np.stack([y * (10.0 - y) / 25.0, np.zeros_like(y)], axis=-1)


def step_channel_problem(nx: int, ny: int, field: RandomViscosityField, rule: SparseGridRule,
                         eps: float = 0.01, refine: bool = False) -> EnsembleProblem:
    mesh = structured_rect_mesh(
        (0, 40), (0, 10), nx, ny,
        tags={"left": "inlet", "right": "outlet", "top": "wall", "bottom": "wall"},
    )
    mesh = remove_step(mesh, ((5.0, 6.0), (0.0, 1.0)))
    if refine:
        mesh = barycentric_refine(mesh)
    k = linear_profile(rule.n_points)
    s = 1.0 + k * eps

    def bc(x, t, j):
        out = s[j] * channel_profile(x)
        wall = (x[:, 0] > 1e-12) & (x[:, 0] < 40 - 1e-12)
        out[wall] = 0.0
        return out

    return EnsembleProblem(**_kl_problem(
        mesh, field, rule,
        initial=lambda x, j: s[j] * channel_profile(x),
        boundary=bc,
        name="step_channel",
    ))


# ------------------------------------------------------------------ regularized cavity

def lid_profile(x):
    x1 = x[..., 0]
    return np.stack([(1.0 - x1**2) ** 2, np.zeros_like(x1)], axis=-1)


def rldc_problem(n: int, field: RandomViscosityField, rule: SparseGridRule,
                 eps: float = 0.01, refine: bool = False) -> EnsembleProblem:
    mesh = structured_rect_mesh((-1, 1), (-1, 1), n, n,
                                tags={"top": "lid", "left": "wall", "right": "wall", "bottom": "wall"})
    if refine:
        mesh = barycentric_refine(mesh)
    k = linear_profile(rule.n_points)
    s = 1.0 + k * eps

    def bc(x, t, j):
        out = np.zeros((len(x), 2))
        lid = np.abs(x[:, 1] - 1.0) < 1e-12
        out[lid] = s[j] * lid_profile(x[lid])
        return out

    return EnsembleProblem(**_kl_problem(
        mesh, field, rule,
        initial=lambda x, j: np.zeros((len(x), 2)),
        boundary=bc,
        name="rldc",
    ))
