"""Multivariate Legendre chaos and the stochastic Galerkin matrices G_m.

The univariate polynomials are orthonormal for the uniform density on
[-sqrt(3), sqrt(3)] (zero mean, unit variance), so that
y psi_n = beta_{n+1} psi_{n+1} + beta_n psi_{n-1} with
beta_n = sqrt(3) n / sqrt((2n-1)(2n+1)).
"""
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

SQRT3 = math.sqrt(3.0)
DENSE_EIG_LIMIT = 2000


@dataclass(frozen=True)
class ChaosBasis:
    M: int
    k: int
    indices: tuple          # multi-indices, graded-lexicographic order

    @property
    def Q(self):
        return len(self.indices)

    def position(self):
        return {alpha: i for i, alpha in enumerate(self.indices)}

    def to_json(self):
        return json.dumps({"M": self.M, "k": self.k, "indices": [list(a) for a in self.indices]})


def _compositions(M, d):
    """Multi-indices of length M and total degree d in descending-lex order."""
    if M == 0:
        return [()] if d == 0 else []
    out = []
    for first in range(d, -1, -1):
        for rest in _compositions(M - 1, d - first):
            out.append((first,) + rest)
    return out


def build_basis(M, k):
    """Complete total-degree-k index set in M variables."""
    if M < 0 or k < 0:
        raise ValueError("M and k must be nonnegative")
    indices = []
    for d in range(k + 1):
        indices.extend(_compositions(M, d))
    basis = ChaosBasis(int(M), int(k), tuple(indices))
    assert basis.Q == math.comb(M + k, k)
    return basis


def recurrence_beta(n):
    """Off-diagonal Jacobi coefficient <y psi_{n-1} psi_n> for n >= 1."""
    n = np.asarray(n, dtype=float)
    return SQRT3 * n / np.sqrt((2 * n - 1) * (2 * n + 1))


def legendre_orthonormal(n, y):
    """Orthonormal Legendre polynomial of degree n on [-sqrt(3), sqrt(3)]."""
    t = np.asarray(y, dtype=float) / SQRT3
    return math.sqrt(2 * n + 1) * np.polynomial.legendre.legval(t, [0] * n + [1])


def build_G(basis):
    """List of M sparse symmetric Q x Q matrices G_m[a, b] = E[y_m psi_a psi_b]."""
    pos = basis.position()
    Q = basis.Q
    G = []
    for m in range(basis.M):
        rows, cols, vals = [], [], []
        for i, alpha in enumerate(basis.indices):
            up = list(alpha)
            up[m] += 1
            j = pos.get(tuple(up))
            if j is None:
                continue
            v = float(recurrence_beta(alpha[m] + 1))
            rows += [i, j]
            cols += [j, i]
            vals += [v, v]
        G.append(sp.csr_matrix((vals, (rows, cols)), shape=(Q, Q)))
    return G


def extreme_eigs_G(G_m):
    """(min, max) eigenvalue of a symmetric G_m; dense up to Q=2000, Lanczos beyond."""
    Q = G_m.shape[0]
    if Q == 1:
        v = float(G_m.toarray()[0, 0]) if sp.issparse(G_m) else float(np.asarray(G_m)[0, 0])
        return v, v
    if Q <= DENSE_EIG_LIMIT:
        dense = G_m.toarray() if sp.issparse(G_m) else np.asarray(G_m)
        w = sla.eigvalsh(dense)
        return float(w[0]), float(w[-1])
    lo = spla.eigsh(G_m, k=1, which="SA", return_eigenvectors=False)[0]
    hi = spla.eigsh(G_m, k=1, which="LA", return_eigenvectors=False)[0]
    return float(lo), float(hi)


def triple_product_oracle(basis, m, n_gauss=64):
    """Dense G_m by Gauss-Legendre quadrature of y_m psi_a psi_b (test oracle)."""
    t, w = np.polynomial.legendre.leggauss(n_gauss)
    y = SQRT3 * t
    w = w / 2.0                                  # uniform probability density
    deg = basis.k + 1
    P = np.array([legendre_orthonormal(n, y) for n in range(deg + 1)])
    # one-dimensional moments E[psi_i psi_j] and E[y psi_i psi_j]
    E0 = (P * w) @ P.T
    E1 = (P * (w * y)) @ P.T
    Q = basis.Q
    out = np.zeros((Q, Q))
    for a, alpha in enumerate(basis.indices):
        for b, beta in enumerate(basis.indices):
            val = 1.0
            for d in range(basis.M):
                val *= (E1 if d == m else E0)[alpha[d], beta[d]]
            out[a, b] = val
    return out

