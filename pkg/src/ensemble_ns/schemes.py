"""Coupled and penalty-projection ensemble time steppers.

Both steppers build one system matrix per time step from ensemble-shared
data (mean wind, mean viscosity, eddy viscosity, grad-div parameter) and
solve it for every realization.  The projection stepper additionally reuses
a time-independent pressure Poisson factorization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import linalg
from .ensemble import (
    EnsembleState,
    ViscosityDecomposition,
    eev_field,
    stability_diagnostics,
    update_mean_fluct,
)
from .fem import (
    DEFAULT_RULE,
    FeSpace,
    assemble_convection,
    assemble_diffusion,
    assemble_divergence,
    assemble_gradient,
    assemble_graddiv,
    assemble_load,
    assemble_mass,
    convection_action,
    diffusion_action,
    pressure_mean_row,
)
from .mesh import TriMesh

log = logging.getLogger(__name__)

ELEMENTS = ("TH", "SV")


class BlowUpError(RuntimeError):
    def __init__(self, t: float, reason: str):
        super().__init__(f"blow-up at t={t:g}: {reason}")
        self.t = t
        self.reason = reason


@dataclass
class EnsembleProblem:
    """Realization-indexed data for ``J`` Navier-Stokes problems on one mesh.

    Callables take points ``x`` of shape (n, 2); ``j`` is the 0-based
    realization index.  ``viscosity(x, j)`` returns (n,), the vector-valued
    ones return (n, 2).
    """

    mesh: TriMesh
    J: int
    viscosity: Callable
    initial: Callable
    boundary: Callable
    forcing: Callable | None = None
    dirichlet_tags: tuple | None = None
    exact_velocity: Callable | None = None  # (x, t, j)
    exact_pressure: Callable | None = None  # (x, t, j)
    name: str = "problem"


@dataclass
class SchemeConfig:
    dt: float
    T: float
    gamma: float = 0.0
    mu: float = 1.0
    element: str = "TH"
    blowup_factor: float = 1e6

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        M = self.T / self.dt
        if abs(M - round(M)) > 1e-9 * max(1.0, M):
            raise ValueError(f"T/dt = {M} is not an integer")
        if self.gamma < 0 or self.mu < 0:
            raise ValueError("gamma and mu must be nonnegative")
        if self.element not in ELEMENTS:
            raise ValueError(f"element must be one of {ELEMENTS}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


class Operators:
    """Time-independent spaces and matrices for one mesh and element pair."""

    def __init__(self, mesh: TriMesh, element: str = "TH", dirichlet_tags=None):
        if element == "SV" and not mesh.refined:
            raise ValueError("Scott-Vogelius needs a barycentric-refined mesh")
        self.mesh = mesh
        self.element = element
        self.vel = FeSpace(mesh, "vecP2")
        self.pres = FeSpace(mesh, "P1disc" if element == "SV" else "P1")
        self.rule = DEFAULT_RULE
        self.M = assemble_mass(self.vel)
        self.G = assemble_graddiv(self.vel)
        self.B = assemble_divergence(self.vel, self.pres)
        self.C = assemble_gradient(self.vel, self.pres)
        self.mean_row = pressure_mean_row(self.pres)
        self.area = float(self.mean_row.sum())
        self.bc_dofs = self.vel.boundary_dofs(dirichlet_tags)
        self._poisson = None
        self._pres_mass = None
        self._stiff = None

    @property
    def n_vel(self) -> int:
        return self.vel.n_dofs

    @property
    def n_pres(self) -> int:
        return self.pres.n_dofs

    @property
    def pressure_stiffness(self) -> sp.csr_matrix:
        if self._stiff is None:
            self._stiff = assemble_diffusion(self.pres, 1.0)
        return self._stiff

    @property
    def poisson_matrix(self) -> sp.csr_matrix:
        """Pure-Neumann pressure stiffness with a mean-zero multiplier."""
        S = self.pressure_stiffness
        n = S.shape[0]
        r = sp.csr_matrix(self.mean_row.reshape(1, -1))
        K = sp.bmat([[S, r.T], [r, None]], format="csr")
        assert K.shape == (n + 1, n + 1)
        return linalg.as_csr(K)

    @property
    def poisson(self) -> linalg.Factorization:
        if self.element != "TH":
            raise ValueError("pressure Poisson step needs continuous pressure")
        if self._poisson is None:
            self._poisson = linalg.factorize(self.poisson_matrix)
        return self._poisson

    @property
    def pressure_mass(self) -> linalg.Factorization:
        if self._pres_mass is None:
            self._pres_mass = linalg.factorize(assemble_mass(self.pres))
        return self._pres_mass

    def viscosity_samples(self, problem: EnsembleProblem) -> np.ndarray:
        x = self.vel.tabulate(self.rule)["x"]
        shape = x.shape[:2]
        flat = x.reshape(-1, 2)
        return np.stack([
            np.broadcast_to(np.asarray(problem.viscosity(flat, j), dtype=float), (len(flat),)).reshape(shape)
            for j in range(problem.J)
        ])

    def energy(self, u) -> float:
        return 0.5 * float(u @ (self.M @ u))


# ------------------------------------------------------------------ shared pieces

def initial_state(problem: EnsembleProblem, ops: Operators) -> EnsembleState:
    u0 = np.stack([ops.vel.interpolate(problem.initial, j) for j in range(problem.J)])
    p0 = np.zeros((problem.J, ops.n_pres))
    return EnsembleState(u_hat=u0, p_hat=p0, n=0, t=0.0)


def momentum_matrix(ops: Operators, state: EnsembleState, visc: ViscosityDecomposition,
                    cfg: SchemeConfig) -> sp.csr_matrix:
    """Realization-independent momentum matrix before boundary rows are set.

    ``M/dt + N(<u>^n) + K(nu_bar + 2 nu_T) + gamma G``.
    """
    nu_t = eev_field(state, ops.vel, cfg.mu, cfg.dt, ops.rule)
    A = ops.M * (1.0 / cfg.dt)
    A = A + assemble_convection(ops.vel, state.mean)
    A = A + assemble_diffusion(ops.vel, visc.nu_bar + 2.0 * nu_t)
    if cfg.gamma:
        A = A + cfg.gamma * ops.G
    return linalg.as_csr(A)


def explicit_rhs(ops: Operators, state: EnsembleState, visc: ViscosityDecomposition,
                 problem: EnsembleProblem, j: int, t_new: float) -> np.ndarray:
    """Forcing minus the lagged fluctuation convection and viscosity terms."""
    u = state.u_hat[j]
    rhs = -convection_action(ops.vel, state.fluct[j], u)
    rhs -= diffusion_action(ops.vel, visc.nu_prime[j], u)
    if problem.forcing is not None:
        rhs += assemble_load(ops.vel, lambda x, t: problem.forcing(x, t, j), t_new)
    return rhs


def boundary_values(ops: Operators, problem: EnsembleProblem, j: int, t: float) -> np.ndarray:
    return ops.vel.interpolate(problem.boundary, t, j)[ops.bc_dofs]


def _check_finite(state: EnsembleState):
    if not (np.all(np.isfinite(state.u_hat)) and np.all(np.isfinite(state.p_hat))):
        raise BlowUpError(state.t, "non-finite dof")


# ------------------------------------------------------------------ coupled

def coupled_system(ops: Operators, state: EnsembleState, visc, cfg) -> sp.csr_matrix:
    A = momentum_matrix(ops, state, visc, cfg)
    K = linalg.compose_saddle(A, -ops.B, mean_row=ops.mean_row)
    return linalg.apply_dirichlet_rows(K, ops.bc_dofs)


def coupled_step(state: EnsembleState, cfg: SchemeConfig, visc: ViscosityDecomposition,
                 ops: Operators, problem: EnsembleProblem) -> EnsembleState:
    """One step of the coupled velocity-pressure ensemble scheme."""
    update_mean_fluct(state)
    t_new = state.t + cfg.dt
    K = coupled_system(ops, state, visc, cfg)
    F = linalg.factorize(K)
    nv, npr = ops.n_vel, ops.n_pres
    rhs = np.zeros((K.shape[0], state.J))
    for j in range(state.J):
        r = explicit_rhs(ops, state, visc, problem, j, t_new)
        r += ops.M @ state.u_hat[j] / cfg.dt
        r[ops.bc_dofs] = boundary_values(ops, problem, j, t_new)
        rhs[:nv, j] = r
    sol = linalg.solve_multi(F, rhs)
    new = EnsembleState(
        u_hat=np.ascontiguousarray(sol[:nv].T),
        p_hat=np.ascontiguousarray(sol[nv:nv + npr].T),
        n=state.n + 1,
        t=t_new,
    )
    _check_finite(new)
    return new


# ------------------------------------------------------------------ projection

def projection_step1_matrix(ops: Operators, state: EnsembleState, visc, cfg) -> sp.csr_matrix:
    return linalg.apply_dirichlet_rows(momentum_matrix(ops, state, visc, cfg), ops.bc_dofs)


def projected_mass_rhs(ops: Operators, u_hat, p_hat, dt) -> np.ndarray:
    """``(u_tilde, phi_a)`` for ``u_tilde = u_hat - dt grad p_hat``."""
    return ops.M @ u_hat - dt * (ops.C @ p_hat)


def pressure_poisson(ops: Operators, u_hat_block: np.ndarray, dt: float) -> np.ndarray:
    """Solve ``dt (grad p, grad q) = -(div u_hat, q)`` with mean-zero p.

    This is the Neumann problem ``dt lap p = div u_hat``; the projected
    velocity keeps the normal trace of ``u_hat``.  ``u_hat_block`` has shape
    (J, n_vel); returns (J, n_pres).
    """
    rhs = np.zeros((ops.n_pres + 1, len(u_hat_block)))
    rhs[:-1] = -(ops.B @ u_hat_block.T) / dt
    sol = linalg.solve_multi(ops.poisson, rhs)
    return np.ascontiguousarray(sol[:-1].T)


def spp_step(state: EnsembleState, cfg: SchemeConfig, visc: ViscosityDecomposition,
             ops: Operators, problem: EnsembleProblem) -> EnsembleState:
    """One step of the grad-div penalized projection scheme."""
    if ops.element != "TH":
        raise ValueError("the projection scheme uses Taylor-Hood spaces")
    update_mean_fluct(state)
    t_new = state.t + cfg.dt
    A = projection_step1_matrix(ops, state, visc, cfg)
    F = linalg.factorize(A)
    rhs = np.zeros((ops.n_vel, state.J))
    for j in range(state.J):
        r = explicit_rhs(ops, state, visc, problem, j, t_new)
        r += projected_mass_rhs(ops, state.u_hat[j], state.p_hat[j], cfg.dt) / cfg.dt
        r[ops.bc_dofs] = boundary_values(ops, problem, j, t_new)
        rhs[:, j] = r
    u_new = np.ascontiguousarray(linalg.solve_multi(F, rhs).T)
    p_new = pressure_poisson(ops, u_new, cfg.dt)
    new = EnsembleState(u_hat=u_new, p_hat=p_new, n=state.n + 1, t=t_new)
    _check_finite(new)
    return new


def projection_divergence_residual(ops: Operators, u_hat, p_hat, dt) -> float:
    """``||(div u_tilde, q)_q|| / ||u_tilde||_L2`` for one realization.

    ``(div u_tilde, q) = (div u_hat, q) + dt (grad p, grad q)`` because the
    correction ``-dt grad p`` has zero normal flux in the weak sense.
    """
    S = ops.pressure_stiffness
    r = ops.B @ u_hat + dt * (S @ p_hat)
    norm_sq = u_hat @ (ops.M @ u_hat) - 2 * dt * (u_hat @ (ops.C @ p_hat)) + dt * dt * (p_hat @ (S @ p_hat))
    return float(np.linalg.norm(r) / np.sqrt(max(norm_sq, 1e-300)))


def broken_velocity(ops: Operators, u) -> np.ndarray:
    """Coefficients of a vector P2 field in the element-wise broken P2 space.

    Ordering is component, triangle, local node.
    """
    return ops.vel.local(u).transpose(1, 0, 2).ravel()


def darcy_projection(ops: Operators, u_hat, dt: float):
    """Mixed form of the projection step on broken vector P2 velocities.

    Finds ``w`` and mean-free ``p`` with ``(w, v) + dt (grad p, v) = (u_hat, v)``
    and ``(w, grad q) = <u_hat . n, q>`` on the boundary, i.e. ``w`` is
    weakly solenoidal with the normal trace of ``u_hat``.  Returns ``(w, p)`` with ``w`` in the ordering of
    :func:`broken_velocity`.
    """
    if ops.element != "TH":
        raise ValueError("needs continuous pressure")
    s = ops.vel.scalar
    tab = s.tabulate(ops.rule)
    tp = ops.pres.tabulate(ops.rule)
    nt, nl = s.dof_map.shape
    ny = 2 * nt * nl
    idx = np.arange(ny).reshape(2, nt, nl)
    mloc = np.einsum("tq,qa,qb->tab", tab["wdet"], tab["phi"], tab["phi"])
    rows = np.broadcast_to(idx[:, :, :, None], (2, nt, nl, nl)).ravel()
    cols = np.broadcast_to(idx[:, :, None, :], (2, nt, nl, nl)).ravel()
    Mb = sp.csr_matrix((np.concatenate([mloc.ravel()] * 2), (rows, cols)), shape=(ny, ny))
    dloc = np.stack([
        np.einsum("tq,qa,tqb->tab", tab["wdet"], tab["phi"], tp["grad"][..., c]) for c in (0, 1)
    ])
    pm = ops.pres.dof_map
    rows = np.broadcast_to(idx[:, :, :, None], dloc.shape).ravel()
    cols = np.broadcast_to(pm[None, :, None, :], dloc.shape).ravel()
    D = sp.csr_matrix((dloc.ravel(), (rows, cols)), shape=(ny, ops.n_pres))
    K = linalg.compose_saddle(Mb, D.T, mean_row=ops.mean_row)
    rhs = np.zeros(K.shape[0])
    rhs[:ny] = Mb @ broken_velocity(ops, u_hat)
    rhs[ny:ny + ops.n_pres] = ops.C.T @ u_hat + ops.B @ u_hat  # boundary flux
    sol = linalg.factorize(K).solve(rhs)
    return sol[:ny], sol[ny:ny + ops.n_pres] / dt


def projected_broken_velocity(ops: Operators, u_hat, p_hat, dt: float) -> np.ndarray:
    """``u_hat - dt grad p_hat`` in the broken P2 ordering."""
    grad = ops.pres.tabulate(ops.rule)["grad"][:, 0]  # P1 gradients are constant
    gp = np.einsum("tld,tl->td", grad, ops.pres.local(p_hat))
    nl = ops.vel.scalar.dof_map.shape[1]
    w = ops.vel.local(u_hat).transpose(1, 0, 2).copy()
    w -= dt * gp.T[:, :, None] * np.ones(nl)
    return w.ravel()


def recover_adjusted_pressure(ops: Operators, p_hat, u_hat, gamma: float,
                              target: FeSpace | None = None) -> np.ndarray:
    """Pressure minus ``gamma`` times the projected divergence, made mean-free.

    The mean is removed after the adjustment: interpolated boundary data
    leaves a small net flux, so ``gamma div u`` need not integrate to zero.
    ``target`` is the pressure space the result lives in; the discontinuous
    piecewise-linear space represents the divergence of a P2 field exactly,
    a continuous one receives its L2 projection.  Defaults to ``ops.pres``.
    """
    target = target or ops.pres
    if target.kind == "P1disc":
        out = (ops.pres.local(p_hat) if ops.pres.kind == "P1" else p_hat.reshape(-1, 3)).ravel()
        if gamma:
            # divergence is linear on each triangle: evaluate at its vertices
            out = out - gamma * _vertex_divergence(ops.vel, u_hat).ravel()
        # P1disc mean: vertex average times triangle area
        area = np.repeat(ops.mesh.signed_areas() / 3.0, 3)
        return out - float(area @ out) / ops.area
    if target is not ops.pres:
        raise ValueError("continuous target must be the operator pressure space")
    out = p_hat
    if gamma:
        out = out - gamma * ops.pressure_mass.solve(ops.B @ u_hat)
    return out - float(ops.mean_row @ out) / ops.area


def _vertex_divergence(vel: FeSpace, u) -> np.ndarray:
    from .fem.spaces import _basis

    lam = np.eye(3)
    _, dphi = _basis(2, lam)  # (3 vertices, 6, 3)
    glam = vel.tabulate()["glam"]
    grad = np.einsum("qlk,tkd->tqld", dphi, glam)
    loc = vel.local(u)  # (nt, 2, 6)
    return np.einsum("tql,tl->tq", grad[..., 0], loc[:, 0]) + np.einsum(
        "tql,tl->tq", grad[..., 1], loc[:, 1]
    )


# ------------------------------------------------------------------ driver

@dataclass
class RunResult:
    scheme: str
    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)  # per step, (J,) arrays
    mean_velocity: list = field(default_factory=list)
    mean_pressure: list = field(default_factory=list)  # adjusted, in the target space
    diagnostics: list = field(default_factory=list)
    log_rows: list = field(default_factory=list)
    blowup_time: float | None = None
    blowup_reason: str | None = None
    final_state: EnsembleState | None = None
    extra: dict = field(default_factory=dict)

    @property
    def blew_up(self) -> bool:
        return self.blowup_time is not None


STEPPERS = {"coupled": coupled_step, "spp": spp_step}


def run(scheme: str, cfg: SchemeConfig, problem: EnsembleProblem, ops: Operators | None = None,
        pressure_target: FeSpace | None = None, callback: Callable | None = None,
        keep_means: bool = True, vtk_stride: int = 0, vtk_prefix: str | None = None) -> RunResult:
    """March ``cfg.n_steps`` steps from the interpolated initial data.

    Records per-realization energies, ensemble-mean velocity and adjusted
    mean pressure (projection scheme: ``p - mean - gamma div u``).  A
    blow-up stops the run and is recorded rather than raised.
    """
    if scheme not in STEPPERS:
        raise ValueError(f"scheme must be one of {sorted(STEPPERS)}")
    step = STEPPERS[scheme]
    if ops is None:
        element = "TH" if scheme == "spp" else cfg.element
        ops = Operators(problem.mesh, element, problem.dirichlet_tags)
    visc = ViscosityDecomposition.from_samples(ops.viscosity_samples(problem))
    if not visc.alpha_ok:
        log.warning("alpha_j <= 0 for some realization: %s", visc.alpha)
    state = initial_state(problem, ops)
    res = RunResult(scheme=scheme)
    ref_energy = np.mean([ops.energy(u) for u in state.u_hat])
    gamma_adj = cfg.gamma if scheme == "spp" else 0.0
    for _ in range(cfg.n_steps):
        try:
            new = step(state, cfg, visc, ops, problem)
        except BlowUpError as exc:
            res.blowup_time, res.blowup_reason = exc.t, exc.reason
            break
        energies = np.array([ops.energy(u) for u in new.u_hat])
        e_mean = float(np.mean(energies))
        if ref_energy <= 0:
            ref_energy = e_mean
        if not np.isfinite(e_mean) or e_mean > cfg.blowup_factor * ref_energy:
            res.blowup_time, res.blowup_reason = new.t, "energy growth"
            res.times.append(new.t)
            res.energies.append(energies)
            state = new
            break
        update_mean_fluct(new)
        diag = stability_diagnostics(new, visc, ops.vel, ops.M, cfg.mu, cfg.dt, cfg.gamma)
        res.times.append(new.t)
        res.energies.append(energies)
        res.diagnostics.append(diag)
        if keep_means:
            res.mean_velocity.append(new.mean.copy())
            p_adj = np.mean([
                recover_adjusted_pressure(ops, new.p_hat[j], new.u_hat[j], gamma_adj, pressure_target)
                for j in range(new.J)
            ], axis=0)
            res.mean_pressure.append(p_adj)
        row = {
            "t": new.t,
            "energy_mean": e_mean,
            "alpha_min": diag.alpha_min,
            "max_div_fluct": float(diag.max_div_fluct.max()),
            "energy_of_mean": diag.energy_mean,
        }
        if scheme == "spp":
            row["div_residual"] = max(
                projection_divergence_residual(ops, new.u_hat[j], new.p_hat[j], cfg.dt)
                for j in range(new.J)
            )
        res.log_rows.append(row)
        if callback is not None:
            callback(new, ops, res)
        if vtk_stride and vtk_prefix and new.n % vtk_stride == 0:
            write_snapshot(f"{vtk_prefix}_{new.n:05d}.vtk", ops, new.mean)
        state = new
    res.final_state = state
    res.extra["ops"] = ops
    return res


def write_snapshot(path, ops: Operators, u) -> None:
    from .mesh import write_vtk

    nv = ops.mesh.n_vertices
    ns = ops.vel.scalar.n_dofs
    vel = np.column_stack([u[:nv], u[ns:ns + nv]])
    write_vtk(path, ops.mesh, {"velocity": vel, "speed": np.linalg.norm(vel, axis=1)})
