from math import factorial

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from ensemble_ns.fem import (
    DEFAULT_RULE,
    FeSpace,
    LocationError,
    assemble_convection,
    assemble_diffusion,
    assemble_divergence,
    assemble_gradient,
    assemble_graddiv,
    assemble_load,
    assemble_mass,
    collapsed_gauss,
    convection_action,
    diffusion_action,
    evaluate_field,
    pressure_mean_row,
)
from ensemble_ns.fem.quadrature import monomial_integral
from ensemble_ns.mesh import TriMesh, barycentric_refine, structured_rect_mesh


def reference_triangle():
    return TriMesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        triangles=np.array([[0, 1, 2]]),
        boundary_edges=np.array([[0, 1], [1, 2], [2, 0]]),
        boundary_tags=("bottom", "wall", "left"),
    )


def sym_err(A):
    return abs(A - A.T).max() / abs(A).max()


# ------------------------------------------------------------------ quadrature

@pytest.mark.parametrize("rule", [DEFAULT_RULE, collapsed_gauss(3), collapsed_gauss(6)])
def test_quadrature_exactness(rule):
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    xy = rule.xy
    for p in range(rule.degree + 1):
        for q in range(rule.degree + 1 - p):
            got = rule.weights @ (xy[:, 0] ** p * xy[:, 1] ** q)
            assert got == pytest.approx(monomial_integral(p, q), abs=1e-14)


def test_monomial_integral_formula():
    assert monomial_integral(0, 0) == 0.5
    assert monomial_integral(2, 1) == factorial(2) * factorial(1) / factorial(5)


def test_default_rule_not_degree_6():
    xy = DEFAULT_RULE.xy
    errs = [abs(DEFAULT_RULE.weights @ (xy[:, 0] ** p * xy[:, 1] ** (6 - p)) - monomial_integral(p, 6 - p))
            for p in range(7)]
    assert max(errs) > 1e-6


# ------------------------------------------------------------------ spaces

def test_dof_counts(unit4):
    edges, _ = unit4.edges()
    assert FeSpace(unit4, "P2").n_dofs == unit4.n_vertices + len(edges)
    assert FeSpace(unit4, "P1disc").n_dofs == 3 * unit4.n_triangles
    assert FeSpace(unit4, "vecP2").n_dofs == 2 * FeSpace(unit4, "P2").n_dofs
    assert FeSpace(unit4, "vecP1").n_dofs == 2 * unit4.n_vertices
    for kind in ("P1", "P2", "P1disc", "vecP2"):
        s = FeSpace(unit4, kind)
        assert s.dof_map.min() >= 0 and s.dof_map.max() < s.n_dofs


def test_unknown_kind(unit4):
    with pytest.raises(ValueError):
        FeSpace(unit4, "P3")


def test_boundary_dofs_on_boundary(unit4):
    mesh = structured_rect_mesh((0, 1), (0, 1), 3, 3, tags={"top": "lid"})
    s = FeSpace(mesh, "P2")
    xy = s.dof_coords[s.boundary_dofs()]
    on = (np.isclose(xy, 0) | np.isclose(xy, 1)).any(axis=1)
    assert on.all()
    assert len(s.boundary_dofs()) == 4 * 6  # 12 edges, 2 dofs each
    lid = s.dof_coords[s.boundary_dofs("lid")]
    assert np.allclose(lid[:, 1], 1.0) and len(lid) == 7
    v = FeSpace(mesh, "vecP2")
    assert len(v.boundary_dofs("lid")) == 14
    with pytest.raises(ValueError):
        FeSpace(mesh, "P1disc").boundary_dofs()


def test_evaluate_linear_p1(unit4, rng):
    s = FeSpace(unit4, "P1")
    f = lambda x: 2 * x[:, 0] - 3 * x[:, 1] + 0.5
    pts = rng.uniform(0, 1, (30, 2))
    assert np.allclose(evaluate_field(s, s.interpolate(f), pts), f(pts), atol=1e-13)


def test_evaluate_quadratic_p2(unit4, rng):
    s = FeSpace(unit4, "vecP2")
    f = lambda x: np.column_stack([x[:, 0] ** 2 - x[:, 0] * x[:, 1], 1 + x[:, 1] ** 2])
    pts = rng.uniform(0, 1, (30, 2))
    assert np.abs(evaluate_field(s, s.interpolate(f), pts) - f(pts)).max() <= 1e-12


def test_evaluate_at_vertices(unit4, rng):
    s = FeSpace(unit4, "P2")
    u = rng.standard_normal(s.n_dofs)
    got = evaluate_field(s, u, unit4.vertices)
    assert np.allclose(got, u[:unit4.n_vertices], atol=1e-14)


def test_evaluate_outside(unit4):
    s = FeSpace(unit4, "P1")
    with pytest.raises(LocationError):
        evaluate_field(s, np.zeros(s.n_dofs), np.array([[1.5, 0.2]]))


# ------------------------------------------------------------------ mass / diffusion

def test_mass_spd(unit4, rng):
    M = assemble_mass(FeSpace(unit4, "vecP2"))
    assert sym_err(M) <= 1e-14
    for _ in range(5):
        x = rng.standard_normal(M.shape[0])
        assert x @ (M @ x) > 0


def test_p1_mass_reference_triangle():
    mesh = reference_triangle()
    M = assemble_mass(FeSpace(mesh, "P1")).toarray()
    area = 0.5
    expected = np.full((3, 3), area / 12) + np.eye(3) * area / 12
    assert np.allclose(M, expected, atol=1e-16)


def test_mass_of_one_is_area():
    mesh = structured_rect_mesh((0, 2), (0, 3), 3, 4)
    for kind in ("P1", "P2", "P1disc"):
        s = FeSpace(mesh, kind)
        one = np.ones(s.n_dofs)
        assert one @ (assemble_mass(s) @ one) == pytest.approx(6.0, rel=1e-12)


def test_diffusion_properties(unit4):
    s = FeSpace(unit4, "vecP2")
    assert assemble_diffusion(s, 0.0).nnz == 0 or abs(assemble_diffusion(s, 0.0)).max() == 0
    K = assemble_diffusion(s, 1.0)
    assert sym_err(K) <= 1e-13
    const = s.interpolate(lambda x: np.tile([1.5, -2.0], (len(x), 1)))
    assert np.abs(K @ const).max() <= 1e-12


def test_diffusion_energy_oracle():
    mesh = structured_rect_mesh((0, 2), (0, 1), 3, 2)
    s = FeSpace(mesh, "vecP2")
    u = s.interpolate(lambda x: np.column_stack([x[:, 1], 0 * x[:, 1]]))
    nu = 0.37
    assert u @ (assemble_diffusion(s, nu) @ u) == pytest.approx(nu * 2.0, rel=1e-13)


def test_diffusion_rejects_negative(unit4):
    s = FeSpace(unit4, "P2")
    shape = s.tabulate()["wdet"].shape
    c = np.ones(shape)
    c[0, 0] = -1e-3
    with pytest.raises(ValueError):
        assemble_diffusion(s, c)
    with pytest.raises(ValueError):
        assemble_diffusion(s, np.nan)


def test_diffusion_action_matches_matrix(unit4, rng):
    s = FeSpace(unit4, "vecP2")
    shape = s.tabulate()["wdet"].shape
    c = rng.uniform(0.1, 1.0, shape)
    u = rng.standard_normal(s.n_dofs)
    assert np.allclose(diffusion_action(s, c, u), assemble_diffusion(s, c) @ u, atol=1e-12)
    # negative coefficients are allowed in the action
    assert np.allclose(diffusion_action(s, -c, u), -(assemble_diffusion(s, c) @ u), atol=1e-12)


# ------------------------------------------------------------------ grad-div / divergence

def test_graddiv(unit4):
    s = FeSpace(unit4, "vecP2")
    G = assemble_graddiv(s)
    assert sym_err(G) <= 1e-13
    const = s.interpolate(lambda x: np.tile([1.0, 2.0], (len(x), 1)))
    assert np.abs(G @ const).max() <= 1e-12
    v = s.interpolate(lambda x: np.column_stack([x[:, 0], -x[:, 1]]))
    assert abs(v @ (G @ v)) <= 1e-12 * (v @ v)
    v = s.interpolate(lambda x: np.column_stack([x[:, 0], x[:, 1]]))
    assert v @ (G @ v) == pytest.approx(4.0, rel=1e-13)


def test_graddiv_requires_vector(unit4):
    with pytest.raises(ValueError):
        assemble_graddiv(FeSpace(unit4, "P2"))


@pytest.mark.parametrize("pkind", ["P1", "P1disc"])
def test_divergence(unit4, pkind):
    v = FeSpace(unit4, "vecP2")
    q = FeSpace(unit4, pkind)
    B = assemble_divergence(v, q)
    assert B.shape == (q.n_dofs, v.n_dofs)
    const = v.interpolate(lambda x: np.tile([1.0, -3.0], (len(x), 1)))
    assert np.abs(B @ const).max() <= 1e-13
    u = v.interpolate(lambda x: np.column_stack([x[:, 0], 0 * x[:, 0]]))
    assert np.ones(q.n_dofs) @ (B @ u) == pytest.approx(1.0, rel=1e-13)


def test_gradient_is_divergence_plus_boundary(unit4, rng):
    v = FeSpace(unit4, "vecP2")
    q = FeSpace(unit4, "P1")
    B = assemble_divergence(v, q)
    C = assemble_gradient(v, q)
    # (u, grad q) + (div u, q) vanishes when u has zero trace
    u = rng.standard_normal(v.n_dofs)
    u[v.boundary_dofs()] = 0
    assert np.abs(C.T @ u + B @ u).max() <= 1e-12


def test_pressure_mean_row():
    mesh = structured_rect_mesh((0, 2), (0, 1), 2, 2)
    for kind in ("P1", "P1disc"):
        assert pressure_mean_row(FeSpace(mesh, kind)).sum() == pytest.approx(2.0, rel=1e-14)


# ------------------------------------------------------------------ convection

def test_convection_zero_wind(unit4):
    s = FeSpace(unit4, "vecP2")
    assert abs(assemble_convection(s, np.zeros(s.n_dofs))).max() == 0


def test_convection_skew(unit4, rng):
    s = FeSpace(unit4, "vecP2")
    N = assemble_convection(s, rng.standard_normal(s.n_dofs))
    assert abs(N + N.T).max() == 0
    v = rng.standard_normal(s.n_dofs)
    assert abs(v @ (N @ v)) <= 1e-12 * abs(N).max() * (v @ v)


def test_convection_exact_value():
    # wind (1 + xy, x^2 - y), trial (y^2, x + xy), test (x - y^2, 1 + x^2) on the unit square;
    # the skew form integrates to 17/48 (symbolic oracle)
    mesh = structured_rect_mesh((0, 1), (0, 1), 3, 3)
    s = FeSpace(mesh, "vecP2")
    w = s.interpolate(lambda x: np.column_stack([1 + x[:, 0] * x[:, 1], x[:, 0] ** 2 - x[:, 1]]))
    u = s.interpolate(lambda x: np.column_stack([x[:, 1] ** 2, x[:, 0] + x[:, 0] * x[:, 1]]))
    v = s.interpolate(lambda x: np.column_stack([x[:, 0] - x[:, 1] ** 2, 1 + x[:, 0] ** 2]))
    assert v @ (assemble_convection(s, w) @ u) == pytest.approx(17 / 48, rel=1e-13)


def test_convection_identity_form():
    # b*(w,u,v) = (w.grad u, v) + 1/2 (div w u, v) when w.n = 0 on the boundary
    mesh = structured_rect_mesh((0, 1), (0, 1), 4, 4)
    s = FeSpace(mesh, "vecP2")
    rule = collapsed_gauss(5)

    def wind(x):
        a, b = x[:, 0], x[:, 1]
        return np.column_stack([a * (1 - a) * (1 + b), b * (1 - b) * a])

    w = s.interpolate(wind)
    u = s.interpolate(lambda x: np.column_stack([x[:, 1] ** 2, x[:, 0] * x[:, 1]]))
    v = s.interpolate(lambda x: np.column_stack([1 + x[:, 0], x[:, 0] ** 2]))
    tab = s.tabulate(rule)
    W, U, V = (s.values_at_quad(f, rule) for f in (w, u, v))
    GU = s.grads_at_quad(u, rule)
    divw = s.div_at_quad(w, rule)
    integrand = np.einsum("tqd,tqcd,tqc->tq", W, GU, V) + 0.5 * divw * np.einsum("tqc,tqc->tq", U, V)
    ref = np.sum(tab["wdet"] * integrand)
    assert v @ (assemble_convection(s, w) @ u) == pytest.approx(ref, rel=1e-12)


def test_convection_action_matches_matrix(unit4, rng):
    s = FeSpace(unit4, "vecP2")
    w, u = rng.standard_normal((2, s.n_dofs))
    assert np.allclose(convection_action(s, w, u), assemble_convection(s, w) @ u, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_skew_property(seed):
    mesh = barycentric_refine(structured_rect_mesh((0, 1), (0, 2), 2, 3))
    s = FeSpace(mesh, "vecP2")
    r = np.random.default_rng(seed)
    N = assemble_convection(s, r.standard_normal(s.n_dofs))
    v = r.standard_normal(s.n_dofs)
    assert abs(v @ (N @ v)) <= 1e-12 * spla.norm(N) * (v @ v)


# ------------------------------------------------------------------ load

def test_load(unit4):
    s = FeSpace(unit4, "vecP2")
    assert np.all(assemble_load(s, lambda x: np.zeros((len(x), 2))) == 0)
    b = assemble_load(s, lambda x: np.tile([1.0, 0.0], (len(x), 1)))
    ns = s.scalar.n_dofs
    assert b[:ns].sum() == pytest.approx(1.0, rel=1e-13)
    assert np.all(b[ns:] == 0)
    bt = assemble_load(s, lambda x, t: np.tile([t, 0.0], (len(x), 1)), 2.0)
    assert bt[:ns].sum() == pytest.approx(2.0, rel=1e-13)


def test_poisson_residual_of_interpolant():
    # -lap u = f with u quadratic: the P2 interpolant is the Galerkin solution
    mesh = structured_rect_mesh((0, 1), (0, 1), 4, 4)
    s = FeSpace(mesh, "P2")
    u = s.interpolate(lambda x: x[:, 0] ** 2 + x[:, 0] * x[:, 1] - 2 * x[:, 1] ** 2)
    f = assemble_load(s, lambda x: 2.0 + 0 * x[:, 0])
    r = assemble_diffusion(s) @ u - f
    interior = np.setdiff1d(np.arange(s.n_dofs), s.boundary_dofs())
    assert np.abs(r[interior]).max() <= 1e-13
