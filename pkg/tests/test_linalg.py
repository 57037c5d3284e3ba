import time

import numpy as np
import pytest
import scipy.sparse as sp

from ensemble_ns.fem import FeSpace, assemble_diffusion, assemble_mass
from ensemble_ns.linalg import (
    SingularMatrixError,
    apply_dirichlet_rows,
    as_csr,
    compose_saddle,
    export_matrix_market,
    factorize,
    relative_residual,
    solve_multi,
)
from ensemble_ns.mesh import structured_rect_mesh


def test_csr_invariants():
    A = as_csr(sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2)))
    assert np.all(np.diff(A.indptr) >= 0)
    assert A.has_sorted_indices and A.nnz == 2 and A[0, 1] == 3.0


def test_compose_small():
    K = compose_saddle(sp.eye(2), np.array([[1.0, 1.0]])).toarray()
    assert np.array_equal(K, [[1, 0, 1], [0, 1, 1], [1, 1, 0]])


def test_compose_with_mean_row():
    K = compose_saddle(sp.eye(2), np.array([[1.0, 0.0], [0.0, 1.0]]), mean_row=[2.0, 3.0])
    assert K.shape == (5, 5)
    assert K[4, 2] == 2.0 and K[3, 4] == 3.0 and K[4, 4] == 0.0


def test_compose_symmetry_follows_a(rng):
    B = rng.standard_normal((2, 4))
    S = rng.standard_normal((4, 4))
    sym = compose_saddle(S + S.T + 8 * np.eye(4), B)
    assert abs(sym - sym.T).max() == 0
    non = compose_saddle(S + 8 * np.eye(4), B)
    assert abs(non - non.T).max() > 0


def test_compose_shape_errors():
    with pytest.raises(ValueError):
        compose_saddle(sp.eye(3), np.ones((1, 2)))
    with pytest.raises(ValueError):
        compose_saddle(sp.eye(2), np.ones((1, 2)), mean_row=[1.0, 2.0])


def test_saddle_against_dense(rng):
    n, m = 30, 10
    R = rng.standard_normal((n, n))
    A = R @ R.T + n * np.eye(n)
    B = rng.standard_normal((m, n))
    f, g = rng.standard_normal(n), rng.standard_normal(m)
    K = compose_saddle(A, B)
    x = factorize(K).solve(np.concatenate([f, g]))
    # constrained minimizer of 1/2 u'Au - f'u subject to Bu = g, via the range-space formula
    Ai = np.linalg.inv(A)
    lam = np.linalg.solve(B @ Ai @ B.T, B @ Ai @ f - g)
    u = Ai @ (f - B.T @ lam)
    assert np.allclose(x[:n], u, atol=1e-10) and np.allclose(x[n:], lam, atol=1e-10)


def test_dirichlet_rows(rng):
    A = sp.csr_matrix(rng.standard_normal((5, 5)))
    K = apply_dirichlet_rows(A, [1, 3]).toarray()
    assert np.array_equal(K[1], [0, 1, 0, 0, 0]) and np.array_equal(K[3], [0, 0, 0, 1, 0])
    assert np.array_equal(K[0], A.toarray()[0])


def test_identity_solve(rng):
    b = rng.standard_normal(7)
    assert np.array_equal(factorize(sp.eye(7)).solve(b), b)


def test_spd_residual(rng):
    R = rng.standard_normal((100, 100))
    A = sp.csr_matrix(R @ R.T + 100 * np.eye(100))
    b = rng.standard_normal(100)
    F = factorize(A)
    assert F.symmetric and F.n == 100
    assert relative_residual(A, F.solve(b), b) <= 1e-10


def test_pure_neumann_is_singular():
    mesh = structured_rect_mesh((0, 1), (0, 1), 4, 4)
    S = assemble_diffusion(FeSpace(mesh, "P1"))
    with pytest.raises(SingularMatrixError):
        factorize(S)


def test_structurally_singular():
    with pytest.raises(SingularMatrixError):
        factorize(sp.csr_matrix((3, 3)))


def test_solve_length_mismatch():
    F = factorize(sp.eye(3))
    with pytest.raises(ValueError):
        F.solve(np.ones(4))
    with pytest.raises(ValueError):
        solve_multi(F, np.ones((4, 2)))
    with pytest.raises(ValueError):
        factorize(sp.csr_matrix(np.ones((2, 3))))


def test_multi_identical_columns(rng):
    R = rng.standard_normal((20, 20))
    F = factorize(R + 20 * np.eye(20))
    b = rng.standard_normal(20)
    X = solve_multi(F, np.column_stack([b] * 5))
    assert all(np.array_equal(X[:, 0], X[:, j]) for j in range(5))


def test_multi_equals_sequential(rng):
    mesh = structured_rect_mesh((0, 1), (0, 1), 6, 6)
    s = FeSpace(mesh, "vecP2")
    A = assemble_mass(s) + assemble_diffusion(s, 0.1)
    F = factorize(A)
    rhs = rng.standard_normal((s.n_dofs, 6))
    X = solve_multi(F, rhs)
    for j in range(6):
        assert X[:, j].tobytes() == F.solve(rhs[:, j]).tobytes()


def test_factor_once_is_cheaper():
    mesh = structured_rect_mesh((0, 1), (0, 1), 100, 100)
    s = FeSpace(mesh, "P1")
    A = assemble_mass(s) + assemble_diffusion(s)
    assert A.shape[0] >= 10_000
    J = 8
    rhs = np.ones((A.shape[0], J))
    t0 = time.perf_counter()
    solve_multi(factorize(A), rhs)
    shared = time.perf_counter() - t0
    t0 = time.perf_counter()
    for j in range(J):
        factorize(A).solve(rhs[:, j])
    separate = time.perf_counter() - t0
    assert shared / separate < 1


def test_matrix_market_roundtrip(tmp_path, rng):
    import scipy.io

    A = sp.random(6, 6, density=0.4, random_state=1, format="csr")
    path = tmp_path / "a.mtx"
    export_matrix_market(path, A)
    B = scipy.io.mmread(str(path))
    assert np.allclose(B.toarray(), A.toarray())
