"""Vectorized assembly of the bilinear and trilinear forms.

All routines integrate with the 7-point degree-5 rule unless a rule is
passed.  Coefficients may be scalars or arrays of shape (n_triangles, nq)
sampled at that rule's quadrature points.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .quadrature import DEFAULT_RULE
from .spaces import FeSpace


def _scatter(row_map, col_map, local, shape) -> sp.csr_matrix:
    nt, nr, nc = local.shape
    rows = np.broadcast_to(row_map[:, :, None], (nt, nr, nc)).ravel()
    cols = np.broadcast_to(col_map[:, None, :], (nt, nr, nc)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _scatter_vector(dof_map, local, n) -> np.ndarray:
    return np.bincount(dof_map.ravel(), weights=local.ravel(), minlength=n)


def _coeff(coeff, wdet):
    c = np.asarray(coeff, dtype=float)
    return np.broadcast_to(c, wdet.shape) if c.ndim == 0 else c


def _vector_blockdiag(space: FeSpace, scalar_mat: sp.csr_matrix) -> sp.csr_matrix:
    if not space.is_vector:
        return scalar_mat
    return sp.block_diag([scalar_mat, scalar_mat], format="csr")


def _vector_div(tab) -> np.ndarray:
    """Divergence of every vector local basis function: (nt, nq, 2 * nloc)."""
    g = tab["grad"]
    return np.concatenate([g[..., 0], g[..., 1]], axis=2)


# ------------------------------------------------------------------ matrices

def assemble_mass(space: FeSpace, rule=DEFAULT_RULE) -> sp.csr_matrix:
    s = space.scalar
    tab = s.tabulate(rule)
    local = np.einsum("tq,qa,qb->tab", tab["wdet"], tab["phi"], tab["phi"], optimize=True)
    return _vector_blockdiag(space, _scatter(s.dof_map, s.dof_map, local, (s.n_dofs, s.n_dofs)))


def assemble_diffusion(space: FeSpace, coeff=1.0, rule=DEFAULT_RULE) -> sp.csr_matrix:
    """Matrix of ``(coeff grad u, grad v)``; ``coeff`` must be nonnegative."""
    s = space.scalar
    tab = s.tabulate(rule)
    c = _coeff(coeff, tab["wdet"])
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ValueError("diffusion coefficient must be finite and nonnegative")
    local = np.einsum("tq,tqad,tqbd->tab", tab["wdet"] * c, tab["grad"], tab["grad"], optimize=True)
    return _vector_blockdiag(space, _scatter(s.dof_map, s.dof_map, local, (s.n_dofs, s.n_dofs)))


def assemble_graddiv(space: FeSpace, rule=DEFAULT_RULE) -> sp.csr_matrix:
    if not space.is_vector:
        raise ValueError("grad-div needs a vector space")
    tab = space.tabulate(rule)
    D = _vector_div(tab)
    local = np.einsum("tq,tqa,tqb->tab", tab["wdet"], D, D, optimize=True)
    return _scatter(space.dof_map, space.dof_map, local, (space.n_dofs, space.n_dofs))


def assemble_divergence(vel: FeSpace, pres: FeSpace, rule=DEFAULT_RULE) -> sp.csr_matrix:
    """``B[a, b] = (q_a, div phi_b)``; shape (pressure dofs, velocity dofs)."""
    if not vel.is_vector or pres.is_vector or vel.mesh is not pres.mesh:
        raise ValueError("need a vector velocity and scalar pressure space on one mesh")
    tv = vel.tabulate(rule)
    tp = pres.tabulate(rule)
    D = _vector_div(tv)
    local = np.einsum("tq,qa,tqb->tab", tv["wdet"], tp["phi"], D, optimize=True)
    return _scatter(pres.dof_map, vel.dof_map, local, (pres.n_dofs, vel.n_dofs))


def assemble_gradient(vel: FeSpace, pres: FeSpace, rule=DEFAULT_RULE) -> sp.csr_matrix:
    """``C[a, b] = (phi_a, grad q_b)``; shape (velocity dofs, pressure dofs).

    This is the weak no-penetration coupling: ``C.T @ u`` collects
    ``(u, grad q)`` and carries no boundary integral.
    """
    tv = vel.tabulate(rule)
    tp = pres.tabulate(rule)
    local = np.concatenate(
        [
            np.einsum("tq,qa,tqb->tab", tv["wdet"], tv["phi"], tp["grad"][..., c], optimize=True)
            for c in (0, 1)
        ],
        axis=1,
    )
    return _scatter(vel.dof_map, pres.dof_map, local, (vel.n_dofs, pres.n_dofs))


def assemble_convection(space: FeSpace, wind, rule=DEFAULT_RULE) -> sp.csr_matrix:
    """Matrix of the skew form ``b*(wind, u, v)`` with ``u`` trial, ``v`` test.

    Built from ``1/2 (w . grad u, v) - 1/2 (w . grad v, u)`` directly, so the
    scalar block is exactly antisymmetric.
    """
    if not space.is_vector:
        raise ValueError("convection needs a vector space")
    s = space.scalar
    tab = s.tabulate(rule)
    W = space.values_at_quad(wind, rule)
    wg = np.einsum("tqd,tqbd->tqb", W, tab["grad"])  # w . grad phi_b
    T = np.einsum("tq,qa,tqb->tab", tab["wdet"], tab["phi"], wg, optimize=True)
    local = 0.5 * (T - T.transpose(0, 2, 1))
    return _vector_blockdiag(space, _scatter(s.dof_map, s.dof_map, local, (s.n_dofs, s.n_dofs)))


# ------------------------------------------------------------------ actions

def convection_action(space: FeSpace, wind, u, rule=DEFAULT_RULE) -> np.ndarray:
    """Vector ``b*(wind, u, phi_a)`` over all test functions ``phi_a``."""
    s = space.scalar
    tab = s.tabulate(rule)
    W = space.values_at_quad(wind, rule)
    U = space.values_at_quad(u, rule)
    GU = space.grads_at_quad(u, rule)
    w_gu = np.einsum("tqd,tqcd->tqc", W, GU, optimize=True)
    w_gphi = np.einsum("tqd,tqad->tqa", W, tab["grad"], optimize=True)
    wd = tab["wdet"]
    term1 = np.einsum("tq,qa,tqc->tca", wd, tab["phi"], w_gu, optimize=True)
    term2 = np.einsum("tq,tqa,tqc->tca", wd, w_gphi, U, optimize=True)
    local = 0.5 * (term1 - term2)
    ns = s.n_dofs
    return np.concatenate([
        _scatter_vector(s.dof_map, local[:, 0], ns),
        _scatter_vector(s.dof_map, local[:, 1], ns),
    ])


def diffusion_action(space: FeSpace, coeff, u, rule=DEFAULT_RULE) -> np.ndarray:
    """Vector ``(coeff grad u, grad phi_a)``; ``coeff`` may take either sign."""
    s = space.scalar
    tab = s.tabulate(rule)
    c = _coeff(coeff, tab["wdet"])
    GU = space.grads_at_quad(u, rule)
    wc = tab["wdet"] * c
    if space.is_vector:
        local = np.einsum("tq,tqcd,tqad->tca", wc, GU, tab["grad"], optimize=True)
        ns = s.n_dofs
        return np.concatenate([
            _scatter_vector(s.dof_map, local[:, 0], ns),
            _scatter_vector(s.dof_map, local[:, 1], ns),
        ])
    local = np.einsum("tq,tqd,tqad->ta", wc, GU, tab["grad"], optimize=True)
    return _scatter_vector(s.dof_map, local, s.n_dofs)


def assemble_load(space: FeSpace, f, t=None, rule=DEFAULT_RULE) -> np.ndarray:
    """Vector ``(f(x, t), phi_a)``.  ``f`` maps (n, 2) points to (n,) or (n, 2)."""
    s = space.scalar
    tab = s.tabulate(rule)
    x = tab["x"].reshape(-1, 2)
    vals = np.asarray(f(x) if t is None else f(x, t), dtype=float)
    nt, nq = tab["wdet"].shape
    if space.is_vector:
        vals = np.broadcast_to(vals, (len(x), 2)).reshape(nt, nq, 2)
        local = np.einsum("tq,qa,tqc->tca", tab["wdet"], tab["phi"], vals, optimize=True)
        return np.concatenate([
            _scatter_vector(s.dof_map, local[:, 0], s.n_dofs),
            _scatter_vector(s.dof_map, local[:, 1], s.n_dofs),
        ])
    vals = np.broadcast_to(vals, (len(x),)).reshape(nt, nq)
    local = np.einsum("tq,qa,tq->ta", tab["wdet"], tab["phi"], vals, optimize=True)
    return _scatter_vector(s.dof_map, local, s.n_dofs)


def pressure_mean_row(pres: FeSpace, rule=DEFAULT_RULE) -> np.ndarray:
    """Vector of ``(q_a, 1)``; its dot product with p is the integral of p."""
    return assemble_load(pres, lambda x: np.ones(len(x)), rule=rule)
