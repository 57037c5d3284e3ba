"""Error norms, rate tables and the experiment suites behind the CLI."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import FeSpace, assemble_diffusion, assemble_mass, collapsed_gauss
from .mesh import barycentric_refine, structured_rect_mesh
from .problems import (
    PERTURBATION_PROFILES,
    manufactured_problem,
    mms_forcing,
    mms_pressure,
    mms_velocity,
    mms_velocity_grad,
    rldc_problem,
    step_channel_problem,
    tgv_energy,
    tgv_problem,
)
from .schemes import Operators, SchemeConfig, darcy_projection, projected_broken_velocity, run
from .stochastic import RandomViscosityField, clenshaw_curtis_sparse_grid, uniform_viscosity_samples
from .uq import scm_run

log = logging.getLogger(__name__)

NORMS = ("l2h1", "l2l2", "linfl2")
ERROR_RULE = collapsed_gauss(5)


def fmt(x) -> str:
    """12 significant digits, the CSV number format."""
    return f"{x:.12g}"


# ------------------------------------------------------------------ norms

class FieldNorms:
    """Spatial L2 and H1 norms of coefficient vectors in one space."""

    def __init__(self, space: FeSpace):
        self.space = space
        self.M = assemble_mass(space)
        self.K = assemble_diffusion(space) if space.kind != "P1disc" else None

    def l2_sq(self, v) -> float:
        return float(v @ (self.M @ v))

    def h1_sq(self, v) -> float:
        if self.K is None:
            raise ValueError("H1 norm is not defined on a discontinuous space")
        return self.l2_sq(v) + float(v @ (self.K @ v))


def bochner(spatial_sq, dt: float, norm: str) -> float:
    """Discrete-in-time norm from per-step squared spatial norms (steps 1..M)."""
    s = np.asarray(spatial_sq, dtype=float)
    if norm in ("l2h1", "l2l2"):
        return float(np.sqrt(dt * s.sum()))
    if norm == "linfl2":
        return float(np.sqrt(s.max())) if s.size else 0.0
    raise ValueError(f"norm must be one of {NORMS}")


def error_norms(numeric, reference, norm: str, norms: FieldNorms, dt: float) -> float:
    """``norm`` of ``numeric - reference``; both are sequences of coefficient vectors."""
    if len(numeric) != len(reference):
        raise ValueError(f"time grids differ: {len(numeric)} vs {len(reference)} steps")
    spatial = norms.h1_sq if norm == "l2h1" else norms.l2_sq
    return bochner([spatial(a - b) for a, b in zip(numeric, reference)], dt, norm)


def exact_error_sq(space: FeSpace, dofs, value, grad=None, rule=ERROR_RULE):
    """Squared L2 (and H1 if ``grad`` is given) distance to a closed-form field.

    ``value(x)`` and ``grad(x)`` take quadrature points of shape (nt, nq, 2).
    """
    tab = space.tabulate(rule)
    x, w = tab["x"], tab["wdet"]
    diff = space.values_at_quad(dofs, rule) - value(x)
    axes = tuple(range(2, diff.ndim))
    l2 = float(np.sum(w * np.sum(diff**2, axis=axes) if axes else w * diff**2))
    if grad is None:
        return l2, None
    gd = space.grads_at_quad(dofs, rule) - grad(x)
    gaxes = tuple(range(2, gd.ndim))
    return l2, l2 + float(np.sum(w * np.sum(gd**2, axis=gaxes)))


def divergence_norms(space: FeSpace, u, rule=ERROR_RULE):
    """``(||div u||_L2, max |div u|)`` over quadrature points."""
    d = space.div_at_quad(u, rule)
    w = space.tabulate(rule)["wdet"]
    return float(np.sqrt(np.sum(w * d * d))), float(np.abs(d).max())


# ------------------------------------------------------------------ rate tables

@dataclass
class RateTable:
    param: str
    values: list
    errors: dict = field(default_factory=dict)  # name -> list aligned with values
    extra: dict = field(default_factory=dict)

    def rates(self, name: str) -> list:
        """``log(e_i / e_{i+1}) / |log(p_i / p_{i+1})|`` for consecutive rows.

        Positive rates mean the error decays along the sweep, whichever
        direction the parameter moves.
        """
        e = self.errors[name]
        out = []
        for i in range(len(self.values) - 1):
            p0, p1 = self.values[i], self.values[i + 1]
            if p0 <= 0 or p1 <= 0 or e[i] <= 0 or e[i + 1] <= 0:
                out.append(float("nan"))
            else:
                out.append(float(np.log(e[i] / e[i + 1]) / abs(np.log(p0 / p1))))
        return out

    def rows(self):
        names = list(self.errors)
        header = [self.param]
        for n in names:
            header += [n, f"rate_{n}"]
        body = []
        rates = {n: [float("nan")] + self.rates(n) for n in names}
        for i, v in enumerate(self.values):
            row = [fmt(v)]
            for n in names:
                row += [fmt(self.errors[n][i]), "" if i == 0 else fmt(rates[n][i])]
            body.append(row)
        return header, body

    def write_csv(self, path) -> None:
        header, body = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(body)

    def to_dict(self) -> dict:
        return {
            "param": self.param,
            "values": list(self.values),
            "errors": {k: list(v) for k, v in self.errors.items()},
            "rates": {k: self.rates(k) for k in self.errors},
        }


# ------------------------------------------------------------------ manufactured suite

MANUFACTURED_DEFAULTS = {
    "gamma_sweep": dict(n=16, T=1.0, dt=0.1, J=20, eps=0.01, mu=1.0, nu_mean=0.01,
                        spread=0.1, seed=0, gammas=[0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0]),
    "div_sweep": dict(n=16, T=1.0, dt=0.1, J=20, eps=0.01, mu=1.0, nu_mean=0.001,
                      spread=0.1, seed=0, gammas=[0.0, 10.0, 100.0, 1000.0, 10000.0]),
    "spatial": dict(ns=[2, 4, 8, 16], T=0.001, steps=8, J=20, eps=0.01, mu=1.0, nu_mean=0.1,
                    spread=0.1, seed=0, gamma=1e6),
    "temporal": dict(n=32, T=1.0, steps=[4, 8, 16, 32, 64], J=20, eps=0.01, mu=0.5, nu_mean=0.01,
                     spread=0.1, seed=0, gamma=1e6),
}


def unit_square(n: int, refine: bool = True):
    mesh = structured_rect_mesh((0, 1), (0, 1), n, n)
    return barycentric_refine(mesh) if refine else mesh


def _mms(mesh, p):
    nu = uniform_viscosity_samples(p["nu_mean"], p["spread"], p["J"], p["seed"])
    return manufactured_problem(mesh, nu, p["eps"])


def _mean_scale(p) -> float:
    return float(np.mean(1.0 + PERTURBATION_PROFILES["alternating"](p["J"]) * p["eps"]))


def _map(fn, items, parallel: bool):
    if parallel and len(items) > 1:
        with ProcessPoolExecutor() as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _spp_sweep_point(args):
    p, gamma = args
    mesh = unit_square(p["n"])
    problem = _mms(mesh, p)
    cfg = SchemeConfig(dt=p["dt"], T=p["T"], gamma=gamma, mu=p["mu"], element="TH")
    ops = Operators(mesh, "TH")
    target = FeSpace(mesh, "P1disc")
    res = run("spp", cfg, problem, ops=ops, pressure_target=target)
    resid = max(r["div_residual"] for r in res.log_rows) if res.log_rows else float("nan")
    return gamma, res.mean_velocity, res.mean_pressure, resid, res.blew_up


def coupled_reference(p):
    mesh = unit_square(p["n"])
    problem = _mms(mesh, p)
    cfg = SchemeConfig(dt=p["dt"], T=p["T"], gamma=0.0, mu=p["mu"], element="SV")
    return run("coupled", cfg, problem)


def gamma_sweep(overrides=None, parallel=False):
    """SPP on Taylor-Hood against the coupled Scott-Vogelius reference.

    Both live on the same barycentric-refined mesh, so velocity differences
    are coefficient differences; pressures are compared in the
    discontinuous P1 space.
    """
    p = {**MANUFACTURED_DEFAULTS["gamma_sweep"], **(overrides or {})}
    ref = coupled_reference(p)
    ops = ref.extra["ops"]
    vnorm = FieldNorms(ops.vel)
    pnorm = FieldNorms(ops.pres)
    pts = _map(_spp_sweep_point, [(p, g) for g in p["gammas"]], parallel)
    table = RateTable("gamma", [g for g, *_ in pts])
    eu, ep, ediv, resid = [], [], [], []
    for g, mv, mp, r, blew in pts:
        if blew or len(mv) != len(ref.mean_velocity):
            eu.append(float("inf"))
            ep.append(float("inf"))
            ediv.append(float("inf"))
        else:
            eu.append(error_norms(mv, ref.mean_velocity, "l2h1", vnorm, p["dt"]))
            ep.append(error_norms(mp, ref.mean_pressure, "l2l2", pnorm, p["dt"]))
            ediv.append(bochner([divergence_norms(ops.vel, u)[0] ** 2 for u in mv], p["dt"], "linfl2"))
        resid.append(r)
    table.errors = {"velocity_l2h1": eu, "pressure_l2l2": ep, "divergence_linfl2": ediv}
    table.extra = {"max_projection_residual": resid}
    return table


def divergence_sweep(overrides=None, parallel=False) -> RateTable:
    """``max_n ||div <u_hat>^n||_L2`` (and the pointwise maximum) against gamma."""
    p = {**MANUFACTURED_DEFAULTS["div_sweep"], **(overrides or {})}
    pts = _map(_spp_sweep_point, [(p, g) for g in p["gammas"]], parallel)
    mesh = unit_square(p["n"])
    vel = FeSpace(mesh, "vecP2")
    table = RateTable("gamma", [g for g, *_ in pts])
    l2, sup = [], []
    for g, mv, *_ in pts:
        norms = [divergence_norms(vel, u) for u in mv]
        l2.append(max(n[0] for n in norms))
        sup.append(max(n[1] for n in norms))
    table.errors = {"div_linf_l2": l2, "div_pointwise_max": sup}
    return table


def _exact_mean_errors(res, ops, p, dt):
    """Per-step squared H1 velocity and L2 pressure errors of the ensemble mean."""
    s = _mean_scale(p)
    vel_sq, pres_sq = [], []
    for t, u, pr in zip(res.times, res.mean_velocity, res.mean_pressure):
        _, h1 = exact_error_sq(ops.vel, u, lambda x: s * mms_velocity(x, t),
                               lambda x: s * mms_velocity_grad(x, t))
        vel_sq.append(h1)
        pe, _ = exact_error_sq(ops.pres, pr, lambda x: s * _mean_free_pressure(x, t))
        pres_sq.append(pe)
    return bochner(vel_sq, dt, "l2h1"), bochner(pres_sq, dt, "l2l2")


def _mean_free_pressure(x, t):
    # the mean of sin(x1 + x2) over the unit square
    m = 2 * np.sin(1.0) - np.sin(2.0)
    return mms_pressure(x, t) - m * (1.0 + np.exp(t))


def _exact_point(args):
    p, n, steps = args
    mesh = unit_square(n)
    problem = _mms(mesh, p)
    dt = p["T"] / steps
    cfg = SchemeConfig(dt=dt, T=p["T"], gamma=p["gamma"], mu=p["mu"], element="TH")
    ops = Operators(mesh, "TH")
    res = run("spp", cfg, problem, ops=ops)
    if res.blew_up:
        return float("inf"), float("inf")
    return _exact_mean_errors(res, ops, p, dt)


def spatial_convergence(overrides=None, parallel=False) -> RateTable:
    p = {**MANUFACTURED_DEFAULTS["spatial"], **(overrides or {})}
    errs = _map(_exact_point, [(p, n, p["steps"]) for n in p["ns"]], parallel)
    table = RateTable("h", [1.0 / n for n in p["ns"]])
    table.errors = {"velocity_l2h1": [e[0] for e in errs], "pressure_l2l2": [e[1] for e in errs]}
    return table


def temporal_convergence(overrides=None, parallel=False) -> RateTable:
    p = {**MANUFACTURED_DEFAULTS["temporal"], **(overrides or {})}
    errs = _map(_exact_point, [(p, p["n"], m) for m in p["steps"]], parallel)
    table = RateTable("dt", [p["T"] / m for m in p["steps"]])
    table.errors = {"velocity_l2h1": [e[0] for e in errs], "pressure_l2l2": [e[1] for e in errs]}
    return table


# ------------------------------------------------------------------ forcing oracle

def forcing_fd_check(n_points=100, seed=0, nu=0.01, eps=0.01, J=20, step=1e-6, lap_step=1e-4):
    """Largest relative gap between the analytic forcing and a finite-difference one.

    First derivatives use central differences with ``step``; the Laplacian
    uses second differences with ``lap_step`` (at ``step`` they are
    roundoff-dominated).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    k = PERTURBATION_PROFILES["alternating"](J)
    worst = 0.0
    for _ in range(n_points):
        x = rng.uniform(0, 1, 2)
        t = rng.uniform(0, 1)
        s = 1.0 + k[rng.integers(J)] * eps

        def u(y, tt):
            return s * mms_velocity(np.asarray(y), tt)

        def pr(y, tt):
            return s * mms_pressure(np.asarray(y), tt)

        e = np.eye(2)
        dudt = (u(x, t + step) - u(x, t - step)) / (2 * step)
        grad = np.column_stack([(u(x + step * e[d], t) - u(x - step * e[d], t)) / (2 * step) for d in (0, 1)])
        lap = sum((u(x + lap_step * e[d], t) - 2 * u(x, t) + u(x - lap_step * e[d], t)) / lap_step**2
                  for d in (0, 1))
        gp = np.array([(pr(x + step * e[d], t) - pr(x - step * e[d], t)) / (2 * step) for d in (0, 1)])
        f_fd = dudt + grad @ u(x, t) - nu * lap + gp
        f = mms_forcing(x, t, nu, s)
        worst = max(worst, float(np.linalg.norm(f_fd - f) / max(np.linalg.norm(f), 1.0)))
    return worst


# ------------------------------------------------------------------ step-2 cross-check

def darcy_poisson_check(n=8, J=4, gamma=100.0, dt=0.1, seed=0):
    """Relative gaps between the mixed and Poisson forms of the projection step."""
    mesh = unit_square(n, refine=False)
    problem = _mms(mesh, dict(nu_mean=0.01, spread=0.1, J=J, seed=seed, eps=0.01))
    cfg = SchemeConfig(dt=dt, T=dt, gamma=gamma)
    res = run("spp", cfg, problem)
    ops, st = res.extra["ops"], res.final_state
    gap_u = gap_p = 0.0
    for j in range(st.J):
        w, pd = darcy_projection(ops, st.u_hat[j], dt)
        wt = projected_broken_velocity(ops, st.u_hat[j], st.p_hat[j], dt)
        gap_u = max(gap_u, float(np.linalg.norm(w - wt) / np.linalg.norm(wt)))
        gap_p = max(gap_p, float(np.linalg.norm(pd - st.p_hat[j]) / np.linalg.norm(pd)))
    return gap_u, gap_p


# ------------------------------------------------------------------ benchmarks

BENCHMARK_DEFAULTS = {
    "tgv": dict(n=32, dt=0.1, T=5.0, gamma=1e4, mu=1.0, scale=1e-3, corr_length=0.01, q=2, level=1,
                refine=False),
    "step": dict(nx=80, ny=20, dt=0.5, T=40.0, gamma=1e4, mu=1.0, scale=1.0 / 600, corr_length=0.01,
                 q=2, level=1, eps=0.01),
    "rldc": dict(n=48, dt=5.0, T=600.0, gamma=1e4, mu=1.0, mus=[0.0, 1.0], scale=2.0 / 15000,
                 corr_length=0.01, q=2, level=1, eps=0.01),
}


def _field(p, L):
    return RandomViscosityField(scale=p["scale"], corr_length=p["corr_length"], char_length=L, q=p["q"])


def benchmark(name: str, scheme: str, overrides=None, vtk_stride=0, vtk_prefix=None):
    """Run one benchmark through the collocation driver; returns a QoiSeries."""
    p = {**BENCHMARK_DEFAULTS[name], **(overrides or {})}
    if name == "tgv":
        fld = _field(p, np.pi)
        rule = clenshaw_curtis_sparse_grid(fld.dimension, p["level"])
        problem = tgv_problem(p["n"], fld, rule, refine=p["refine"])
    elif name == "step":
        fld = _field(p, 40.0)
        rule = clenshaw_curtis_sparse_grid(fld.dimension, p["level"])
        problem = step_channel_problem(p["nx"], p["ny"], fld, rule, eps=p["eps"])
    elif name == "rldc":
        fld = _field(p, 2.0)
        rule = clenshaw_curtis_sparse_grid(fld.dimension, p["level"])
        problem = rldc_problem(p["n"], fld, rule, eps=p["eps"])
    else:
        raise ValueError(f"unknown benchmark {name!r}")
    element = "TH" if scheme == "spp" else p.get("element", "TH")
    cfg = SchemeConfig(dt=p["dt"], T=p["T"], gamma=p["gamma"] if scheme == "spp" else p.get("coupled_gamma", 0.0),
                       mu=p["mu"], element=element)
    return scm_run(scheme, cfg, problem, rule, vtk_stride=vtk_stride, vtk_prefix=vtk_prefix)


def rldc_mu_sweep(scheme="spp", overrides=None):
    p = {**BENCHMARK_DEFAULTS["rldc"], **(overrides or {})}
    out = {}
    for mu in p["mus"]:
        out[mu] = benchmark("rldc", scheme, {**p, "mu": mu})
    return out


def recirculation_indicator(result, box=((6.0, 12.0), (0.0, 1.5))) -> float:
    """Smallest streamwise mean velocity at velocity nodes in ``box`` (downstream of the step)."""
    ops = result.extra["ops"]
    u = result.final_state.u_hat.mean(axis=0)
    xy = ops.vel.scalar.dof_coords
    (x0, x1), (y0, y1) = box
    sel = (xy[:, 0] > x0) & (xy[:, 0] < x1) & (xy[:, 1] > y0) & (xy[:, 1] < y1)
    return float(u[:ops.vel.scalar.n_dofs][sel].min())


def tgv_exact_energy(times, nu):
    return np.array([tgv_energy(t, nu) for t in times])


# ------------------------------------------------------------------ output

LOG_COLUMNS = ("t", "energy_mean", "energy_of_mean", "alpha_min", "max_div_fluct", "div_residual")


def write_log_csv(path, rows) -> None:
    """Per-step diagnostics in a fixed column order; absent values stay empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([fmt(r[c]) if c in r else "" for c in LOG_COLUMNS])


def write_summary(path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))
