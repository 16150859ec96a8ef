"""Geometric multigrid V(2,2) cycle for the scalar P2 Laplacian on nested meshes."""
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from sgstokes.fem import assemble_scalar_stiffness, p2_values
from sgstokes.mesh import build_structured_mesh


def p2_prolongation(coarse, fine):
    """Interpolation of coarse P2 functions at the fine P2 nodes (full node sets)."""
    if fine.level != coarse.level + 1:
        raise ValueError("prolongation needs consecutive levels")
    mc = 2 * coarse.n + 1
    mf = 2 * fine.n + 1
    bary = np.array([(i, j, 4 - i - j) for i in range(5) for j in range(5 - i)], dtype=float) / 4.0
    phi = p2_values(bary)
    phi[np.abs(phi) < 1e-14] = 0.0
    rows, cols, vals = [], [], []
    for tri, cell in zip(coarse.triangles, coarse.p2_cells):
        # vertex positions in fine-lattice units (fine lattice spacing = coarse h / 4)
        vi = 4 * (tri % (coarse.n + 1))
        vj = 4 * (tri // (coarse.n + 1))
        fi = np.rint(bary @ vi).astype(int)
        fj = np.rint(bary @ vj).astype(int)
        fine_ids = fi + mf * fj
        for r, fid in enumerate(fine_ids):
            nz = np.flatnonzero(phi[r])
            rows.extend([fid] * len(nz))
            cols.extend(cell[nz])
            vals.extend(phi[r, nz])
    P = sp.coo_matrix((vals, (rows, cols)), shape=(mf * mf, mc * mc)).tocsr()
    # shared nodes were written once per adjacent coarse cell with identical values
    P.sum_duplicates()
    counts = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=P.shape).tocsr()
    counts.sum_duplicates()
    P.data /= counts.data
    return P


class MultigridHierarchy:
    """Unit-coefficient scalar Laplacians and prolongations from level 1 (coarse) upwards."""

    def __init__(self, level, coarse_level=1, pre_sweeps=2, post_sweeps=2):
        if level < coarse_level:
            raise ValueError("fine level below the coarse level")
        self.level = level
        self.coarse_level = coarse_level
        self.pre = pre_sweeps
        self.post = post_sweeps
        meshes = [build_structured_mesh(l) for l in range(coarse_level, level + 1)]
        self.K, self.P, self.lower, self.upper = [], [], [], []
        for mesh in meshes:
            idx = mesh.interior
            K = assemble_scalar_stiffness(mesh, 1.0)[idx][:, idx].tocsc()
            self.K.append(K)
            self.lower.append(spla.splu(sp.tril(K, format="csc"), permc_spec="NATURAL",
                                        diag_pivot_thresh=0.0))
            self.upper.append(spla.splu(sp.triu(K, format="csc"), permc_spec="NATURAL",
                                        diag_pivot_thresh=0.0))
        for coarse, fine in zip(meshes[:-1], meshes[1:]):
            P = p2_prolongation(coarse, fine)
            self.P.append(P[fine.interior][:, coarse.interior].tocsr())
        self.coarse_lu = spla.splu(self.K[0])

    @property
    def size(self):
        return self.K[-1].shape[0]

    def vcycle(self, R, depth=None):
        """One V(pre, post) cycle with zero initial guess on a (n, ncols) block."""
        if depth is None:
            depth = len(self.K) - 1
        if depth == 0:
            return self.coarse_lu.solve(R)
        K = self.K[depth]
        X = self.lower[depth].solve(R)
        for _ in range(self.pre - 1):
            X += self.lower[depth].solve(R - K @ X)
        P = self.P[depth - 1]
        X += P @ self.vcycle(P.T @ (R - K @ X), depth - 1)
        for _ in range(self.post):
            X += self.upper[depth].solve(R - K @ X)
        return X
