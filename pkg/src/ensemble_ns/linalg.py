"""Sparse saddle-point composition and factor-once / solve-many direct solves.

Matrices are ``scipy.sparse.csr_matrix`` throughout; factorizations wrap
SuperLU with a column approximate-minimum-degree ordering.
"""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# pivots below this fraction of the largest are treated as zero
PIVOT_RTOL = 1e-13


class SingularMatrixError(RuntimeError):
    """Matrix is structurally or numerically singular."""


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def compose_saddle(A, B, mean_row=None) -> sp.csr_matrix:
    """Block matrix ``[[A, B^T], [B, 0]]``.

    With ``mean_row`` (length m) an extra row and column are appended that
    couple only to the second block: the row enforces ``mean_row . p = 0``
    and the column absorbs any inconsistency of the constraint rows.
    """
    A, B = as_csr(A), as_csr(B)
    n, n2 = A.shape
    m, nb = B.shape
    if n != n2 or nb != n:
        raise ValueError(f"incompatible blocks A{A.shape}, B{B.shape}")
    blocks = [[A, B.T], [B, None]]
    if mean_row is not None:
        r = np.asarray(mean_row, dtype=float).reshape(1, -1)
        if r.shape[1] != m:
            raise ValueError("mean_row length must equal B rows")
        r = sp.csr_matrix(r)
        blocks = [[A, B.T, None], [B, None, r.T], [None, r, None]]
    K = sp.bmat(blocks, format="csr")
    if K.shape[0] != K.shape[1]:
        raise ValueError("composed matrix is not square")
    return as_csr(K)


def apply_dirichlet_rows(K, rows) -> sp.csr_matrix:
    """Replace ``rows`` of ``K`` by identity rows."""
    K = as_csr(K)
    keep = np.ones(K.shape[0])
    keep[rows] = 0.0
    unit = np.zeros(K.shape[0])
    unit[rows] = 1.0
    out = sp.diags(keep) @ K + sp.diags(unit, shape=K.shape)
    out = as_csr(out)
    out.eliminate_zeros()
    return out


class Factorization:
    """Reusable LU factorization of a square sparse matrix."""

    def __init__(self, A):
        A = as_csr(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("factorize needs a square matrix")
        self.n = A.shape[0]
        self.symmetric = _is_symmetric(A)
        try:
            self._lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        piv = np.abs(self._lu.U.diagonal())
        if piv.size and (not np.all(np.isfinite(piv)) or piv.min() <= PIVOT_RTOL * piv.max()):
            raise SingularMatrixError(
                f"numerically singular matrix (pivot ratio {piv.min() / piv.max():.2e})"
            )

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.n,):
            raise ValueError(f"rhs length {b.shape} does not match dimension {self.n}")
        return self._lu.solve(b)


def factorize(A) -> Factorization:
    return Factorization(A)


def solve_multi(F: Factorization, rhs_block) -> np.ndarray:
    """Solve for every column of ``rhs_block`` (shape (n, J)) with one factorization.

    Columns are solved one at a time through :meth:`Factorization.solve` so
    the result matches sequential solves bit for bit.
    """
    rhs = np.asarray(rhs_block, dtype=float)
    if rhs.ndim != 2 or rhs.shape[0] != F.n:
        raise ValueError(f"rhs block must have shape ({F.n}, J)")
    out = np.empty_like(rhs)
    for j in range(rhs.shape[1]):
        out[:, j] = F.solve(np.ascontiguousarray(rhs[:, j]))
    return out


def relative_residual(A, x, b) -> float:
    """``||Ax - b|| / (||A|| ||x|| + ||b||)`` with the Frobenius norm for A."""
    r = A @ x - b
    return float(np.linalg.norm(r) / (spla.norm(A) * np.linalg.norm(x) + np.linalg.norm(b)))


def export_matrix_market(path, A) -> None:
    scipy.io.mmwrite(str(path), as_csr(A))


def _is_symmetric(A: sp.csr_matrix, rtol: float = 1e-13) -> bool:
    d = A - A.T
    if d.nnz == 0:
        return True
    scale = np.abs(A.data).max() if A.nnz else 1.0
    return bool(np.abs(d.data).max() <= rtol * scale)
