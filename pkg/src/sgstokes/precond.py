"""Mean-based block preconditioners for the SGFE Stokes system.

Both preconditioners use the identity as stochastic factor:
P1 = blockdiag(I (x) At, I (x) D_p) and P2 = [[a I (x) At, 0], [B, -I (x) D_p]],
with At a Laplacian preconditioner (exact solve or one multigrid V-cycle).
"""
import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from sgstokes.multigrid import MultigridHierarchy


class LaplacianMode(str, enum.Enum):
    EXACT_UNWEIGHTED = "exact-unweighted"
    EXACT_MEAN = "exact-mean"
    MULTIGRID = "multigrid"


class ScalingUnavailable(RuntimeError):
    """Analytical BPCG scaling requested while the viscosity bound is not positive."""


class LaplacianPrecond:
    """Componentwise preconditioner At for the vector Laplacian, applied to stochastic panels."""

    DENSE_LIMIT = 3000

    def __init__(self, mode, fem, mesh_level=None, counter=None, coarse_level=1):
        self.mode = LaplacianMode(mode)
        self.counter = counter
        if self.mode is LaplacianMode.MULTIGRID:
            if mesh_level is None:
                raise ValueError("multigrid mode needs the mesh level")
            self.hierarchy = MultigridHierarchy(mesh_level, coarse_level=min(coarse_level, mesh_level))
            if self.hierarchy.size != fem.K_unweighted.shape[0]:
                raise ValueError("multigrid hierarchy does not match the mesh in use")
            self.K = fem.K_unweighted
        else:
            self.K = fem.K_unweighted if self.mode is LaplacianMode.EXACT_UNWEIGHTED else fem.K0
            self.lu = spla.splu(self.K.tocsc())
        self.n_scalar = self.K.shape[0]
        self._dense_forward = None
        self.measured = {}

    def _scalar_solve(self, R):
        if self.mode is LaplacianMode.MULTIGRID:
            return self.hierarchy.vcycle(R)
        return self.lu.solve(R)

    def solve_panels(self, X):
        """At^{-1} on each row of a (Q, N_u) panel array."""
        Q = X.shape[0]
        R = np.ascontiguousarray(X.reshape(2 * Q, self.n_scalar).T)
        Y = self._scalar_solve(R)
        if self.counter is not None:
            self.counter["Atilde_inv"] += 1
        return np.ascontiguousarray(Y.T).reshape(Q, 2 * self.n_scalar)

    def solve(self, u):
        """At^{-1} applied blockwise to a stacked velocity vector."""
        n_u = 2 * self.n_scalar
        return self.solve_panels(np.asarray(u, dtype=float).reshape(-1, n_u)).ravel()

    def scalar_forward_dense(self):
        """Dense scalar At (the inverse of the V-cycle matrix in multigrid mode)."""
        if self._dense_forward is None:
            if self.mode is not LaplacianMode.MULTIGRID:
                self._dense_forward = self.K.toarray()
            else:
                if self.n_scalar > self.DENSE_LIMIT:
                    raise ValueError("dense V-cycle probing is limited to small meshes")
                Minv = self.hierarchy.vcycle(np.eye(self.n_scalar))
                F = np.linalg.inv(0.5 * (Minv + Minv.T))
                self._dense_forward = 0.5 * (F + F.T)
        return self._dense_forward

    def forward_panels(self, X):
        """At applied to each panel (exact modes use the sparse matrix)."""
        Q = X.shape[0]
        R = X.reshape(2 * Q, self.n_scalar).T
        if self.mode is LaplacianMode.MULTIGRID:
            Y = self.scalar_forward_dense() @ R
        else:
            Y = self.K @ R
        return np.ascontiguousarray(Y.T).reshape(Q, 2 * self.n_scalar)

    def scalar_inverse_dense(self):
        if self.mode is LaplacianMode.MULTIGRID:
            return self.hierarchy.vcycle(np.eye(self.n_scalar))
        return np.linalg.inv(self.K.toarray())


class BlockPrecond:
    """Block diagonal (P1) or scaled block triangular (P2) preconditioner."""

    def __init__(self, kind, laplacian, D_p, op, scaling_a=None):
        if kind not in ("P1", "P2"):
            raise ValueError("kind must be 'P1' or 'P2'")
        if kind == "P2" and (scaling_a is None or not scaling_a > 0):
            raise ValueError(f"P2 needs a positive scaling, got {scaling_a}")
        self.kind = kind
        self.laplacian = laplacian
        self.D_p = np.asarray(D_p, dtype=float)
        self.op = op
        self.scaling_a = scaling_a

    def _velocity(self, r_u):
        return self.laplacian.solve_panels(r_u.reshape(self.op.Q, self.op.n_u)).ravel()

    def _schur_inv(self, r_p):
        return (r_p.reshape(self.op.Q, self.op.n_p) / self.D_p).ravel()

    def apply_inv(self, r):
        if self.kind == "P1":
            return self.apply_P1_inv(r)
        return self.apply_P2_inv(r)

    def apply_P1_inv(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.op.shape[0],):
            raise ValueError("residual has the wrong length")
        r_u, r_p = self.op.split(r)
        return np.concatenate([self._velocity(r_u), self._schur_inv(r_p)])

    def apply_P2_inv(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.op.shape[0],):
            raise ValueError("residual has the wrong length")
        r_u, r_p = self.op.split(r)
        u = self._velocity(r_u) / self.scaling_a
        p = -self._schur_inv(r_p - self.op.apply_B(u))
        return np.concatenate([u, p])


class HOperator:
    """Bramble-Pasciak inner-product matrix blockdiag(A - a At, I (x) D_p)."""

    def __init__(self, op, laplacian, D_p, a_param):
        self.op = op
        self.laplacian = laplacian
        self.D_p = np.asarray(D_p, dtype=float)
        self.a_param = float(a_param)

    def apply(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.op.shape[0],):
            raise ValueError("vector has the wrong length")
        v, q = self.op.split(w)
        Av = self.op.A_op.apply(v)
        if self.a_param != 0.0:
            Av = Av - self.a_param * self.laplacian.forward_panels(v.reshape(self.op.Q, self.op.n_u)).ravel()
        Sq = (q.reshape(self.op.Q, self.op.n_p) * self.D_p).ravel()
        return np.concatenate([Av, Sq])

    def inner(self, w, z):
        return float(w @ self.apply(z))


def measure_laplacian_constants(laplacian, tol=1e-6, seed=0):
    """(delta, Delta): extreme eigenvalues of At^{-1} A for the unit scalar Laplacian."""
    from sgstokes.solvers import lanczos_extreme

    if laplacian.mode is not LaplacianMode.MULTIGRID:
        return 1.0, 1.0
    key = (tol, seed)
    if key not in laplacian.measured:
        K = laplacian.K
        n = K.shape[0]
        lo = lanczos_extreme(lambda x: K @ x, laplacian._scalar_solve, "min", tol=tol, n=n, seed=seed)
        hi = lanczos_extreme(lambda x: K @ x, laplacian._scalar_solve, "max", tol=tol, n=n, seed=seed)
        laplacian.measured[key] = (lo, hi)
    return laplacian.measured[key]


def laplacian_constants(laplacian, nu0=1.0):
    """(delta, Delta) of At against the unit Laplacian A.

    Exact modes are known in closed form (At = A, or At = A0 = nu0 A for a
    constant mean); the multigrid lower constant is measured and rounded down
    to two digits, the upper one rounded up.
    """
    if laplacian.mode is LaplacianMode.EXACT_UNWEIGHTED:
        return 1.0, 1.0
    if laplacian.mode is LaplacianMode.EXACT_MEAN:
        return 1.0 / nu0, 1.0 / nu0
    lo, hi = measure_laplacian_constants(laplacian)
    return math.floor(lo * 100) / 100, math.ceil(hi * 100 - 1e-6) / 100


def certified_delta(laplacian, nu0=1.0):
    """Lower equivalence constant delta used by the analytical scaling."""
    return laplacian_constants(laplacian, nu0)[0]


def analytical_scaling(kle, delta):
    """a = (nu0 - sqrt(3) sigma chi) * delta; raises when the bound is not positive."""
    margin = kle.nu0 - math.sqrt(3.0) * kle.sigma * kle.chi_total
    if margin <= 0:
        raise ScalingUnavailable(
            f"analytical scaling unavailable: viscosity lower bound nu0 - sqrt(3)*sigma*chi = "
            f"{margin:.4g} <= 0 (sigma={kle.sigma}, chi={kle.chi_total:.4g})"
        )
    return margin * delta


def numerical_a_star(op, laplacian, tol=1e-6, seed=0):
    """Lanczos estimate of lambda_min(At^{-1} A) for the SGFE Laplacian."""
    from sgstokes.solvers import lanczos_extreme

    n = op.sizes[0]
    return lanczos_extreme(op.A_op.apply, laplacian.solve, "min", tol=tol, n=n, seed=seed)


@dataclass
class ScalingResult:
    strategy: str
    a: float
    a_star: float = float("nan")
    safety: float = float("nan")
    level: int = -1
