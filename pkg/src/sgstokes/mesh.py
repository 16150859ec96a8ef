"""Structured triangulations of the square [-0.5, 0.5]^2 with P1/P2 node maps.

The coarsest mesh (level 1, 2x2 cells) is a "union jack" criss-cross pattern
whose diagonals all meet at the centre. Finer levels are the red refinements
of it, so every level is nested in the next one. Each cell of a level-l mesh
inherits the diagonal direction of the level-1 quadrant it sits in.

Scalar P2 nodes coincide with the points of a (2n+1) x (2n+1) lattice of
spacing h/2: cell vertices, edge midpoints and cell centres (midpoints of the
diagonals).
"""
from dataclasses import dataclass, field

import numpy as np

MAX_LEVEL = 9


@dataclass(frozen=True)
class Mesh:
    level: int
    vertices: np.ndarray          # (Np, 2) P1 node coordinates
    triangles: np.ndarray         # (nt, 3) vertex ids, counter-clockwise
    p2_nodes: np.ndarray          # (Ns, 2) scalar P2 node coordinates
    p2_cells: np.ndarray          # (nt, 6) P2 node ids: v0, v1, v2, m12, m20, m01
    boundary: np.ndarray          # (Ns,) bool, P2 node on the boundary
    interior: np.ndarray = field(repr=False)  # scalar P2 ids of interior nodes

    @property
    def n(self):
        return 2 ** self.level

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def n_p(self):
        return len(self.vertices)

    @property
    def n_scalar(self):
        """Number of interior scalar P2 nodes (one velocity component)."""
        return len(self.interior)

    @property
    def n_u(self):
        return 2 * len(self.interior)

    def lattice_index(self, i, j):
        """P2 node id of lattice point (i, j), 0 <= i, j <= 2n."""
        return np.asarray(i) + (2 * self.n + 1) * np.asarray(j)

    def areas(self):
        x = self.vertices[self.triangles]
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _diagonal_is_slash(i, j, n):
    # union jack: "/" in the bottom-left and top-right quadrants
    left = i < n // 2
    bottom = j < n // 2
    return left == bottom


def build_structured_mesh(level):
    """Uniform triangulation with n = 2**level cells per side and 2n^2 triangles."""
    level = int(level)
    if level < 1:
        raise ValueError(f"mesh level must be >= 1, got {level}")
    if level > MAX_LEVEL:
        raise ValueError(f"mesh level {level} exceeds the configured maximum {MAX_LEVEL}")
    n = 2 ** level
    s = np.linspace(-0.5, 0.5, n + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i + (n + 1) * j

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if _diagonal_is_slash(i, j, n):
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
            else:
                tris.append((v00, v10, v01))
                tris.append((v10, v11, v01))
    triangles = np.array(tris, dtype=np.int64)

    m = 2 * n + 1
    t = np.linspace(-0.5, 0.5, m)
    PX, PY = np.meshgrid(t, t, indexing="xy")
    p2_nodes = np.column_stack([PX.ravel(), PY.ravel()])

    # lattice coordinates of the triangle vertices (spacing h/2)
    vi = 2 * (triangles % (n + 1))
    vj = 2 * (triangles // (n + 1))
    corner = vi + m * vj
    mid = lambda a, b: (vi[:, a] + vi[:, b]) // 2 + m * ((vj[:, a] + vj[:, b]) // 2)
    p2_cells = np.column_stack([corner, mid(1, 2), mid(2, 0), mid(0, 1)])

    li = np.arange(m * m) % m
    lj = np.arange(m * m) // m
    boundary = (li == 0) | (li == m - 1) | (lj == 0) | (lj == m - 1)
    interior = np.flatnonzero(~boundary)
    return Mesh(level, vertices, triangles, p2_nodes, p2_cells, boundary, interior)


def interior_edges_shared_twice(mesh):
    """True if every interior edge belongs to exactly two triangles."""
    t = mesh.triangles
    edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    x = mesh.vertices[uniq]
    on_bdry = np.all(np.isclose(np.abs(x[:, :, 0]), 0.5), axis=1) & np.isclose(x[:, 0, 0], x[:, 1, 0])
    on_bdry |= np.all(np.isclose(np.abs(x[:, :, 1]), 0.5), axis=1) & np.isclose(x[:, 0, 1], x[:, 1, 1])
    return bool(np.all(counts[~on_bdry] == 2) and np.all(counts[on_bdry] == 1))
