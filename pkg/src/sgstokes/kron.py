"""Matrix-free Kronecker-structured SGFE operators.

A vector on the product space is stored with the chaos index outermost:
u = [u_0, u_1, ..., u_{Q-1}], each u_a an FE coefficient vector. Reshaped to a
(Q, N) panel array X, the term G (x) A acts as X -> G X A^T.
"""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DENSE_LIMIT = 6000


class KronOperator:
    """Lazy sum of Kronecker products sum_j G_j (x) A_j.

    ``terms`` is a list of (G, A) pairs; G=None stands for the Q x Q identity.
    """

    def __init__(self, terms, Q, counter=None, name="A"):
        if not terms:
            raise ValueError("KronOperator needs at least one term")
        self.terms = list(terms)
        self.Q = int(Q)
        rows, cols = self.terms[0][1].shape
        for G, A in self.terms:
            if A.shape != (rows, cols):
                raise ValueError("inconsistent FE factor shapes")
            if G is not None and G.shape != (self.Q, self.Q):
                raise ValueError("inconsistent SG factor shapes")
        self.fe_shape = (rows, cols)
        self.shape = (self.Q * rows, self.Q * cols)
        self.counter = counter if counter is not None else Counter()
        self.name = name

    def _panels(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.shape[1],):
            raise ValueError(f"{self.name}: expected vector of length {self.shape[1]}, got {x.shape}")
        return x.reshape(self.Q, self.fe_shape[1])

    def apply_panels(self, X):
        """Apply to a (Q, n_cols) panel array, returning (Q, n_rows)."""
        out = np.zeros((self.Q, self.fe_shape[0]))
        for G, A in self.terms:
            Y = (A @ X.T).T                        # FE factor first
            self.counter["fe_matvec"] += self.Q
            if G is None:
                out += Y
            else:
                out += G @ Y
                self.counter["sg_product"] += 1
        self.counter[self.name] += 1
        return out

    def apply(self, x):
        return self.apply_panels(self._panels(x)).ravel()

    __matmul__ = apply

    def transpose(self):
        return KronOperator([(None if G is None else G.T.tocsr(), A.T.tocsr()) for G, A in self.terms],
                            self.Q, self.counter, name=self.name + "t")

    def to_sparse(self):
        eye = sp.identity(self.Q, format="csr")
        return sum(sp.kron(eye if G is None else G, A, format="csr") for G, A in self.terms).tocsr()


@dataclass
class SaddleOperator:
    """Matrix-free SGFE Stokes operator C = [[A, B^T], [B, 0]]."""
    A_op: KronOperator
    B_op: KronOperator
    Bt_op: KronOperator
    counter: Counter = field(default_factory=Counter)

    @property
    def Q(self):
        return self.A_op.Q

    @property
    def n_u(self):
        return self.A_op.fe_shape[0]

    @property
    def n_p(self):
        return self.B_op.fe_shape[0]

    @property
    def sizes(self):
        return self.Q * self.n_u, self.Q * self.n_p

    @property
    def shape(self):
        n = sum(self.sizes)
        return n, n

    def split(self, z):
        nu, _ = self.sizes
        return z[:nu], z[nu:]

    def apply_A(self, u):
        return self.A_op.apply(u)

    def apply_B(self, u):
        return self.B_op.apply(u)

    def apply_Bt(self, p):
        return self.Bt_op.apply(p)

    def apply(self, z):
        u, p = self.split(np.asarray(z, dtype=float))
        return np.concatenate([self.apply_A(u) + self.apply_Bt(p), self.apply_B(u)])

    __matmul__ = apply

    def reset_counters(self):
        self.counter.clear()

    def pressure_constants(self):
        """Orthonormal basis (columns) of the constant-pressure nullspace, one per panel."""
        nu, npp = self.sizes
        N = np.zeros((nu + npp, self.Q))
        for a in range(self.Q):
            N[nu + a * self.n_p: nu + (a + 1) * self.n_p, a] = 1.0 / np.sqrt(self.n_p)
        return N

    def project_pressure(self, z):
        """Remove the mean of each pressure panel (in place) and return z."""
        nu, _ = self.sizes
        P = z[nu:].reshape(self.Q, self.n_p)
        P -= P.mean(axis=1, keepdims=True)
        return z


def build_sgfe_system(fem, G):
    """Saddle operator and right-hand side b = [f; t] for the SGFE cavity problem."""
    M = len(G)
    if M != fem.M:
        raise ValueError(f"{M} SG matrices but {fem.M} fluctuation FE matrices")
    Q = G[0].shape[0] if G else 1
    counter = Counter()
    A_op = KronOperator([(None, fem.A0)] + list(zip(G, fem.A_fluct)), Q, counter, "A")
    B_op = KronOperator([(None, fem.B)], Q, counter, "B")
    Bt_op = KronOperator([(None, fem.B.T.tocsr())], Q, counter, "Bt")
    op = SaddleOperator(A_op, B_op, Bt_op, counter)

    F = np.zeros((Q, fem.n_u))
    F[0] = fem.rhs_f
    for Gm, load in zip(G, fem.rhs_f_fluct):
        F += np.outer(Gm[:, [0]].toarray().ravel(), load)
    T = np.zeros((Q, fem.n_p))
    T[0] = fem.rhs_t
    return op, np.concatenate([F.ravel(), T.ravel()])


def sparse_saddle(op):
    """Assembled sparse C (for direct-solve oracles on small instances)."""
    A = op.A_op.to_sparse()
    B = op.B_op.to_sparse()
    return sp.bmat([[A, B.T], [B, None]], format="csr")


def direct_solve(op, b):
    """Sparse direct solve of C z = b with zero-mean pressure panels."""
    from scipy.sparse.linalg import spsolve

    C = sparse_saddle(op)
    N = sp.csr_matrix(op.pressure_constants())
    K = sp.bmat([[C, N], [N.T, None]], format="csc")
    rhs = np.concatenate([b, np.zeros(op.Q)])
    return spsolve(K, rhs)[: C.shape[0]]


@dataclass
class DenseSystem:
    """Explicit matrices of one small SGFE instance (oracle use only)."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Atilde: np.ndarray
    S: np.ndarray
    P1: np.ndarray
    P2: np.ndarray | None = None
    H: np.ndarray | None = None
    a: float | None = None


def assemble_dense(op, laplacian, D_p, a=None, limit=DENSE_LIMIT):
    """Dense A, B, C, I (x) At, I (x) D_p, P1 and, when ``a`` is given, P2 and H.

    ``laplacian`` supplies the scalar Laplacian preconditioner (its dense
    forward matrix); the velocity blocks follow the component-blocked layout.
    """
    n = op.shape[0]
    if n > limit:
        raise ValueError(f"dense assembly limited to {limit} unknowns, instance has {n}")
    Q = op.Q
    A = op.A_op.to_sparse().toarray()
    B = op.B_op.to_sparse().toarray()
    zero = np.zeros((B.shape[0], B.shape[0]))
    C = np.block([[A, B.T], [B, zero]])
    scalar = laplacian.scalar_forward_dense()
    At = np.kron(np.eye(2 * Q), scalar)
    S = np.diag(np.tile(np.asarray(D_p, dtype=float), Q))
    P1 = np.block([[At, np.zeros_like(B.T)], [np.zeros_like(B), S]])
    system = DenseSystem(A, B, C, At, S, P1)
    if a is not None:
        if not a > 0:
            raise ValueError("scaling a must be positive")
        system.a = float(a)
        system.P2 = np.block([[a * At, np.zeros_like(B.T)], [B, -S]])
        system.H = np.block([[A - a * At, np.zeros_like(B.T)], [np.zeros_like(B), S]])
    return system
