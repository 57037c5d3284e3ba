import numpy as np
import pytest

from ensemble_ns.ensemble import (
    EnsembleState,
    StaleCacheError,
    ViscosityDecomposition,
    constant_viscosities,
    eev_field,
    mixing_length_sq,
    stability_diagnostics,
    update_mean_fluct,
)
from ensemble_ns.fem import FeSpace, assemble_mass


@pytest.fixture(scope="module")
def space():
    from ensemble_ns.mesh import structured_rect_mesh

    return FeSpace(structured_rect_mesh((0, 1), (0, 1), 3, 3), "vecP2")


def state_of(u):
    u = np.asarray(u, dtype=float)
    return EnsembleState(u_hat=u, p_hat=np.zeros((len(u), 1)))


def test_identical_members(space, rng):
    u = rng.standard_normal(space.n_dofs)
    st = update_mean_fluct(state_of([u] * 4))
    assert np.all(st.fluct == 0)
    assert np.all(eev_field(st, space, 1.0, 0.1) == 0)


def test_opposite_pair(rng):
    u = rng.standard_normal(10)
    st = update_mean_fluct(state_of([u, -u]))
    assert np.all(st.mean == 0)
    assert np.array_equal(st.fluct[0], u) and np.array_equal(st.fluct[1], -u)


def test_fluctuation_closure(rng):
    u = rng.standard_normal((20, 500)) * 3
    st = update_mean_fluct(state_of(u))
    assert np.abs(st.fluct.sum(axis=0)).max() <= 1e-13 * np.abs(u).max(axis=1).max()
    assert np.abs(st.mean + st.fluct - u).max() <= 1e-13 * np.abs(u).max()


def test_shape_checked():
    with pytest.raises(ValueError):
        update_mean_fluct(EnsembleState(u_hat=np.zeros(5), p_hat=np.zeros(5)))


def test_eev_hand_value(space):
    a = 0.7
    c = space.interpolate(lambda x: np.tile([a, 0.0], (len(x), 1)))
    st = update_mean_fluct(state_of([c, -c]))
    nu_t = eev_field(st, space, mu=0.5, dt=0.2)
    assert np.allclose(nu_t, 0.5 * 0.2 * 2 * a * a, rtol=1e-13)
    assert np.all(eev_field(st, space, mu=0.0, dt=0.2) == 0)


def test_eev_nonneg_and_scaling(space, rng):
    u = rng.standard_normal((5, space.n_dofs))
    l2 = mixing_length_sq(update_mean_fluct(state_of(u)), space)
    l2s = mixing_length_sq(update_mean_fluct(state_of(3 * u)), space)
    assert np.all(l2 >= 0)
    assert np.allclose(l2s, 9 * l2, rtol=1e-13)


def test_eev_argument_checks(space, rng):
    st = update_mean_fluct(state_of(rng.standard_normal((2, space.n_dofs))))
    with pytest.raises(ValueError):
        eev_field(st, space, -1.0, 0.1)
    with pytest.raises(ValueError):
        eev_field(st, space, 1.0, 0.0)


def test_stale_cache(space, rng):
    st = update_mean_fluct(state_of(rng.standard_normal((3, space.n_dofs))))
    st.u_hat = st.u_hat + 1.0
    with pytest.raises(StaleCacheError):
        eev_field(st, space, 1.0, 0.1)
    fresh = state_of(rng.standard_normal((3, space.n_dofs)))
    with pytest.raises(StaleCacheError):
        mixing_length_sq(fresh, space)


def test_viscosity_decomposition(rng):
    nu = rng.uniform(0.9, 1.1, (6, 4, 7))
    d = ViscosityDecomposition.from_samples(nu)
    assert np.abs(d.nu_prime.sum(axis=0)).max() <= 1e-14
    assert np.allclose(d.nu_bar + d.nu_prime, nu, rtol=1e-14, atol=0)
    expected = d.nu_bar.min() - np.abs(d.nu_prime).max(axis=(1, 2))
    assert np.array_equal(d.alpha, expected)
    assert d.alpha_ok
    bad = ViscosityDecomposition.from_samples(np.stack([np.full((2, 2), v) for v in (0.1, 0.1, 10.0)]))
    assert not bad.alpha_ok


def test_constant_viscosities(space):
    nu = constant_viscosities([0.1, 0.2], space)
    assert nu.shape == (2,) + space.tabulate()["wdet"].shape
    assert np.all(nu[1] == 0.2)


def test_diagnostics(space, rng):
    M = assemble_mass(space)
    u = space.interpolate(lambda x: np.column_stack([np.sin(x[:, 1]), np.cos(x[:, 0])]))
    st = update_mean_fluct(state_of([u, u, u]))
    visc = ViscosityDecomposition.from_samples(constant_viscosities([0.01] * 3, space))
    rep = stability_diagnostics(st, visc, space, M, 1.0, 0.1, 0.0)
    assert np.all(rep.max_div_fluct == 0)
    assert rep.energy_mean == pytest.approx(0.5 * u @ (M @ u))
    assert rep.alpha_min == pytest.approx(0.01)
    # a divergence-free interpolant has tiny divergence fluctuations
    w = space.interpolate(lambda x: np.column_stack([x[:, 0], -x[:, 1]]))
    st = update_mean_fluct(state_of([u + w, u - w, u]))
    rep = stability_diagnostics(st, visc, space, M, 1.0, 0.1, 0.0)
    assert rep.max_div_fluct.max() <= 1e-12
    # outliers are flagged, never raised
    visc_bad = ViscosityDecomposition.from_samples(constant_viscosities([0.01, 0.01, 1.0], space))
    rep = stability_diagnostics(st, visc_bad, space, M, 1.0, 0.1, 0.0)
    assert rep.warnings
