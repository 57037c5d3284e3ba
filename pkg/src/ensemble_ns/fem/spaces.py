"""Lagrange finite element spaces on a :class:`~ensemble_ns.mesh.TriMesh`."""

from __future__ import annotations

import numpy as np

from ..mesh import TriMesh
from .quadrature import DEFAULT_RULE, QuadratureRule

SCALAR_KINDS = ("P1", "P2", "P1disc")
KINDS = SCALAR_KINDS + ("vecP1", "vecP2")


class LocationError(ValueError):
    """A point lies outside every triangle of the mesh."""


# ---------------------------------------------------------------- reference basis

def _basis(order: int, lam: np.ndarray):
    """Values (nq, nloc) and barycentric derivatives (nq, nloc, 3)."""
    nq = len(lam)
    if order == 1:
        vals = lam.copy()
        dvals = np.broadcast_to(np.eye(3), (nq, 3, 3)).copy()
        return vals, dvals
    l0, l1, l2 = lam.T
    vals = np.column_stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ])
    d = np.zeros((nq, 6, 3))
    for i, li in enumerate((l0, l1, l2)):
        d[:, i, i] = 4 * li - 1
    # edge nodes: 3 -> (1,2), 4 -> (2,0), 5 -> (0,1)
    for k, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        d[:, 3 + k, a] = 4 * lam[:, b]
        d[:, 3 + k, b] = 4 * lam[:, a]
    return vals, d


class FeSpace:
    """Scalar or vector Lagrange space.

    Vector spaces store component-major dofs: all x-component dofs first,
    then all y-component dofs.  ``dof_map`` follows the same convention
    locally (first the scalar local dofs for x, then for y).
    """

    def __init__(self, mesh: TriMesh, kind: str):
        if kind not in KINDS:
            raise ValueError(f"unknown space kind {kind!r}")
        self.mesh = mesh
        self.kind = kind
        self.is_vector = kind.startswith("vec")
        self._tab = {}
        if self.is_vector:
            self.scalar = FeSpace(mesh, kind[3:])
            ns = self.scalar.n_dofs
            self.n_dofs = 2 * ns
            self.dof_map = np.hstack([self.scalar.dof_map, self.scalar.dof_map + ns])
            self.order = self.scalar.order
            return
        self.scalar = self
        t = mesh.triangles
        if kind == "P1":
            self.order = 1
            self.dof_map = t.copy()
            self.n_dofs = mesh.n_vertices
            self.dof_coords = mesh.vertices.copy()
        elif kind == "P1disc":
            self.order = 1
            self.dof_map = np.arange(3 * len(t)).reshape(-1, 3)
            self.n_dofs = 3 * len(t)
            self.dof_coords = mesh.vertices[t].reshape(-1, 2)
        else:
            self.order = 2
            edges, tri_edges = mesh.edges()
            nv = mesh.n_vertices
            self.dof_map = np.hstack([t, nv + tri_edges])
            self.n_dofs = nv + len(edges)
            self.dof_coords = np.vstack([
                mesh.vertices,
                0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]),
            ])
        self.dof_map.setflags(write=False)

    def __repr__(self):
        return f"FeSpace({self.kind}, n_dofs={self.n_dofs})"

    @property
    def n_local(self) -> int:
        return self.dof_map.shape[1]

    # ----------------------------------------------------------- boundary

    def boundary_dofs(self, tags=None) -> np.ndarray:
        """Scalar dofs located on boundary edges carrying one of ``tags``.

        ``tags=None`` selects the whole boundary.  For vector spaces the dofs of
        both components are returned.
        """
        if self.is_vector:
            s = self.scalar.boundary_dofs(tags)
            return np.concatenate([s, s + self.scalar.n_dofs])
        if self.kind == "P1disc":
            raise ValueError("discontinuous spaces carry no boundary dofs")
        if isinstance(tags, str):
            tags = (tags,)
        mesh = self.mesh
        sel = np.array(
            [tags is None or tg in tags for tg in mesh.boundary_tags], dtype=bool
        )
        if not sel.any():
            return np.zeros(0, dtype=int)
        dofs = [mesh.boundary_edges[sel].ravel()]
        if self.kind == "P2":
            dofs.append(mesh.n_vertices + mesh.boundary_edge_ids()[sel])
        return np.unique(np.concatenate(dofs))

    # ----------------------------------------------------------- tabulation

    def tabulate(self, rule: QuadratureRule = DEFAULT_RULE) -> dict:
        """Scalar basis data on every triangle for ``rule``.

        Keys: ``phi`` (nq, nloc), ``grad`` (nt, nq, nloc, 2), ``wdet``
        (nt, nq) quadrature weight times Jacobian determinant, ``x``
        (nt, nq, 2) physical quadrature points.
        """
        if self.is_vector:
            return self.scalar.tabulate(rule)
        key = (rule.degree, rule.n_points)
        if key in self._tab:
            return self._tab[key]
        mesh = self.mesh
        p = mesh.vertices[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.linalg.inv(jac)
        # gradients of barycentric coordinates, (nt, 3, 2)
        glam = np.empty((len(det), 3, 2))
        glam[:, 1:, :] = inv
        glam[:, 0, :] = -inv.sum(axis=1)
        phi, dphi = _basis(self.order, rule.points)
        grad = np.einsum("qlk,tkd->tqld", dphi, glam, optimize=True)
        x = np.einsum("qk,tkd->tqd", rule.points, p, optimize=True)
        tab = {
            "phi": phi,
            "grad": grad,
            "wdet": det[:, None] * rule.weights[None, :],
            "x": x,
            "glam": glam,
            "det": det,
            "rule": rule,
        }
        self._tab[key] = tab
        return tab

    # ----------------------------------------------------------- fields

    def interpolate(self, func, *args) -> np.ndarray:
        """Nodal interpolant of ``func(x, *args)``; ``x`` has shape (n, 2).

        Vector spaces expect ``func`` to return shape (n, 2).
        """
        if self.is_vector:
            vals = np.asarray(func(self.scalar.dof_coords, *args), dtype=float)
            return np.concatenate([vals[:, 0], vals[:, 1]])
        vals = np.asarray(func(self.dof_coords, *args), dtype=float)
        return np.broadcast_to(vals, (self.n_dofs,)).copy()

    def local(self, dofs: np.ndarray) -> np.ndarray:
        """Local coefficients, (nt, nloc) or (nt, 2, nloc) for vectors."""
        dofs = np.asarray(dofs)
        if self.is_vector:
            ns = self.scalar.n_dofs
            sm = self.scalar.dof_map
            return np.stack([dofs[:ns][sm], dofs[ns:][sm]], axis=1)
        return dofs[self.dof_map]

    def values_at_quad(self, dofs, rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
        """Field values at quadrature points: (nt, nq) or (nt, nq, 2)."""
        tab = self.tabulate(rule)
        loc = self.local(dofs)
        if self.is_vector:
            return np.einsum("ql,tcl->tqc", tab["phi"], loc, optimize=True)
        return np.einsum("ql,tl->tq", tab["phi"], loc, optimize=True)

    def grads_at_quad(self, dofs, rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
        """Gradients at quadrature points: (nt, nq, 2) or (nt, nq, 2, 2).

        For vectors, entry ``[..., c, d]`` is d u_c / d x_d.
        """
        tab = self.tabulate(rule)
        loc = self.local(dofs)
        if self.is_vector:
            return np.einsum("tqld,tcl->tqcd", tab["grad"], loc, optimize=True)
        return np.einsum("tqld,tl->tqd", tab["grad"], loc, optimize=True)

    def div_at_quad(self, dofs, rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
        g = self.grads_at_quad(dofs, rule)
        return g[..., 0, 0] + g[..., 1, 1]


def evaluate_field(space: FeSpace, dofs, points) -> np.ndarray:
    """Evaluate the finite element function at physical points.

    Raises ``LocationError`` if a point is outside the mesh.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tri, lam = space.mesh.locate(points)
    if np.any(tri < 0):
        raise LocationError(f"point {points[np.argmax(tri < 0)]} outside the mesh")
    phi, _ = _basis(space.order, lam)  # (npts, nloc)
    loc = space.local(dofs)
    if space.is_vector:
        return np.einsum("pl,pcl->pc", phi, loc[tri], optimize=True)
    return np.einsum("pl,pl->p", phi, loc[tri], optimize=True)
