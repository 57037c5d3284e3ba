"""Structured triangulations of rectangles with tagged boundaries.

Meshes are immutable once built.  Triangles are stored counter-clockwise and
every boundary edge carries one tag from ``BOUNDARY_TAGS``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOUNDARY_TAGS = ("wall", "lid", "inlet", "outlet", "top", "bottom", "left", "right")

# absolute tolerance for coordinate predicates
GEOM_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh input or geometry."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    boundary_edges : (nb, 2) int array of vertex pairs
    boundary_tags : tuple of str, one tag per boundary edge
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    refined: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if len(self.boundary_tags) != len(self.boundary_edges):
            raise MeshError("one tag per boundary edge required")
        bad = set(self.boundary_tags) - set(BOUNDARY_TAGS)
        if bad:
            raise MeshError(f"unknown boundary tags {sorted(bad)}")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas().sum())

    @property
    def h_max(self) -> float:
        p = self.vertices[self.triangles]
        lengths = np.stack(
            [np.linalg.norm(p[:, (i + 1) % 3] - p[:, i], axis=1) for i in range(3)],
            axis=1,
        )
        return float(lengths.max())

    def edges(self):
        """Unique edges and the triangle-to-edge map.

        Local edge ``i`` of a triangle is opposite local vertex ``i``.

        Returns
        -------
        edges : (ne, 2) int array, each row sorted ascending
        tri_edges : (nt, 3) int array
        """
        if "edges" not in self._cache:
            t = self.triangles
            local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
            flat = np.sort(local.reshape(-1, 2), axis=1)
            edges, inverse = np.unique(flat, axis=0, return_inverse=True)
            self._cache["edges"] = (edges, inverse.reshape(-1, 3))
        return self._cache["edges"]

    def edge_incidence(self) -> np.ndarray:
        _, tri_edges = self.edges()
        return np.bincount(tri_edges.ravel(), minlength=tri_edges.max() + 1)

    def boundary_edge_ids(self) -> np.ndarray:
        """Global edge index of every boundary edge, in ``boundary_edges`` order."""
        edges, _ = self.edges()
        key = {tuple(e): i for i, e in enumerate(edges)}
        return np.array(
            [key[tuple(sorted(e))] for e in self.boundary_edges.tolist()], dtype=int
        )

    def check(self) -> None:
        """Raise ``MeshError`` if an invariant is violated."""
        if np.any(self.signed_areas() <= 0):
            raise MeshError("triangle with non-positive signed area")
        inc = self.edge_incidence()
        if np.any((inc < 1) | (inc > 2)):
            raise MeshError("non-conforming edge incidence")
        bnd = self.boundary_edge_ids()
        if len(set(bnd.tolist())) != len(bnd) or np.any(inc[bnd] != 1):
            raise MeshError("boundary edges must belong to exactly one triangle")
        if np.count_nonzero(inc == 1) != len(bnd):
            raise MeshError("untagged boundary edge")

    def locate(self, points: np.ndarray, tol: float = 1e-10):
        """Containing triangle and barycentric coordinates for each point.

        Returns ``(tri_index, bary)``; ``tri_index`` is -1 where no triangle
        contains the point.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.vertices[self.triangles]
        x0 = p[:, 0]
        jac = np.stack([p[:, 1] - x0, p[:, 2] - x0], axis=2)  # (nt, 2, 2)
        inv = np.linalg.inv(jac)
        idx = np.full(len(points), -1, dtype=int)
        bary = np.zeros((len(points), 3))
        for k, x in enumerate(points):
            lam12 = np.einsum("tij,tj->ti", inv, x - x0)
            lam = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
            inside = np.flatnonzero(np.all(lam >= -tol, axis=1))
            if len(inside):
                idx[k] = inside[0]
                bary[k] = lam[inside[0]]
        return idx, bary

    def with_tags(self, retag: dict) -> "TriMesh":
        """Copy with boundary tags renamed through ``retag``."""
        tags = tuple(retag.get(t, t) for t in self.boundary_tags)
        return TriMesh(
            self.vertices.copy(),
            self.triangles.copy(),
            self.boundary_edges.copy(),
            tags,
            refined=self.refined,
        )


def _side_tag(tags: dict | None, side: str) -> str:
    if tags is None:
        return side
    return tags.get(side, side)


def structured_rect_mesh(x_range, y_range, nx: int, ny: int, tags: dict | None = None) -> TriMesh:
    """Uniform ``nx`` by ``ny`` grid, each cell cut along its lower-left to
    upper-right diagonal.

    ``tags`` maps the sides ``left/right/bottom/top`` to boundary tags; sides
    not listed keep their own name.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError("cell counts must be positive integers")
    x0, x1 = map(float, x_range)
    y0, y1 = map(float, y_range)
    if not (x1 > x0 and y1 > y0):
        raise MeshError("empty interval")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row index = y
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    v00, v10 = vid(I, J), vid(I + 1, J)
    v01, v11 = vid(I, J + 1), vid(I + 1, J + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=int)
    triangles[0::2] = lower
    triangles[1::2] = upper

    edges, etags = [], []
    i = np.arange(nx)
    j = np.arange(ny)
    for a, b, side in (
        (vid(i, 0), vid(i + 1, 0), "bottom"),
        (vid(nx, j), vid(nx, j + 1), "right"),
        (vid(i + 1, ny), vid(i, ny), "top"),
        (vid(0, j + 1), vid(0, j), "left"),
    ):
        edges.append(np.column_stack([a, b]))
        etags += [_side_tag(tags, side)] * len(a)
    return TriMesh(vertices, triangles, np.vstack(edges), tuple(etags))


def barycentric_refine(mesh: TriMesh) -> TriMesh:
    """Split every triangle into three at its barycenter."""
    nv = mesh.n_vertices
    t = mesh.triangles
    centers = mesh.vertices[t].mean(axis=1)
    c = nv + np.arange(len(t))
    new = np.empty((3 * len(t), 3), dtype=int)
    new[0::3] = np.column_stack([t[:, 0], t[:, 1], c])
    new[1::3] = np.column_stack([t[:, 1], t[:, 2], c])
    new[2::3] = np.column_stack([t[:, 2], t[:, 0], c])
    return TriMesh(
        np.vstack([mesh.vertices, centers]),
        new,
        mesh.boundary_edges.copy(),
        mesh.boundary_tags,
        refined=True,
    )


def remove_step(mesh: TriMesh, step_box) -> TriMesh:
    """Cut the rectangle ``step_box = ((xa, xb), (ya, yb))`` out of ``mesh``.

    The box sides must lie on grid lines.  Edges exposed by the cut are
    tagged ``wall``.
    """
    (xa, xb), (ya, yb) = step_box
    if xb - xa <= GEOM_TOL or yb - ya <= GEOM_TOL:
        return mesh
    vx = np.unique(np.round(mesh.vertices[:, 0], 12))
    vy = np.unique(np.round(mesh.vertices[:, 1], 12))
    for val, grid in ((xa, vx), (xb, vx), (ya, vy), (yb, vy)):
        if np.min(np.abs(grid - val)) > GEOM_TOL * max(1.0, abs(val)):
            raise MeshError("step box is not aligned with the grid")
    centers = mesh.vertices[mesh.triangles].mean(axis=1)
    inside = (
        (centers[:, 0] > xa) & (centers[:, 0] < xb)
        & (centers[:, 1] > ya) & (centers[:, 1] < yb)
    )
    if not inside.any():
        return mesh
    keep = ~inside
    if not keep.any():
        raise MeshError("step box removes the whole mesh")

    tri = mesh.triangles[keep]
    used = np.unique(tri)
    remap = np.full(mesh.n_vertices, -1, dtype=int)
    remap[used] = np.arange(len(used))

    # outer boundary edges survive when both ends survive and they still
    # belong to a kept triangle
    kept_edges = {tuple(sorted(e)) for tr in tri.tolist()
                  for e in ((tr[0], tr[1]), (tr[1], tr[2]), (tr[2], tr[0]))}
    b_edges, b_tags = [], []
    old = set()
    for e, tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags):
        key = tuple(sorted(e))
        old.add(key)
        if key in kept_edges:
            b_edges.append(e)
            b_tags.append(tag)
    # new boundary: edges of kept triangles adjacent to removed ones
    removed = mesh.triangles[inside]
    removed_edges = {tuple(sorted(e)) for tr in removed.tolist()
                     for e in ((tr[0], tr[1]), (tr[1], tr[2]), (tr[2], tr[0]))}
    for tr in tri.tolist():
        for e in ((tr[0], tr[1]), (tr[1], tr[2]), (tr[2], tr[0])):
            key = tuple(sorted(e))
            if key in removed_edges and key not in old:
                b_edges.append(list(e))  # orientation follows the kept triangle
                b_tags.append("wall")
    return TriMesh(
        mesh.vertices[used].copy(),
        remap[tri],
        remap[np.array(b_edges, dtype=int)],
        tuple(b_tags),
        refined=mesh.refined,
    )


def write_vtk(path, mesh: TriMesh, point_data: dict | None = None) -> None:
    """Legacy ASCII VTK unstructured grid with linear triangles (type 5)."""
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines = [
        "# vtk DataFile Version 3.0",
        "ensemble_ns mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    lines += [f"{x:.16g} {y:.16g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.12g}" for v in values]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{v[0]:.12g} {v[1]:.12g} 0" for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
