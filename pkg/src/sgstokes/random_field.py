"""Truncated Karhunen-Loeve expansion of the viscosity.

The covariance is the separable exponential kernel
exp(-|x1 - z1|/b1 - |x2 - z2|/b2) (unit variance; sigma scales it), whose
1D eigenpairs are known in closed form up to the roots of two
transcendental equations.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

SQRT3 = math.sqrt(3.0)
SUP_GRID = 201


@dataclass(frozen=True)
class Mode1D:
    """Normalised eigenfunction cos(w x) / sin(w x) of the 1D exponential kernel."""
    eigenvalue: float
    omega: float
    even: bool
    half_width: float
    norm: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        f = np.cos if self.even else np.sin
        return f(self.omega * x) / self.norm

    def sup_norm(self):
        # grid estimate plus the analytic extremal candidates
        L = self.half_width
        pts = [np.linspace(-L, L, SUP_GRID), np.array([-L, L])]
        k_max = int(self.omega * L / math.pi) + 1
        phase = 0.0 if self.even else 0.5 * math.pi
        crit = (phase + math.pi * np.arange(-k_max - 1, k_max + 2)) / self.omega
        pts.append(crit[np.abs(crit) <= L])
        return float(np.max(np.abs(self(np.concatenate(pts)))))


def _root(f, lo, hi, what):
    try:
        return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    except ValueError as exc:
        raise RuntimeError(f"root bracketing failed for {what} on [{lo}, {hi}]") from exc


def solve_1d_eigenpairs(corr_length, half_width, count):
    """Leading ``count`` eigenpairs of exp(-|x-z|/b) on [-L, L], eigenvalues descending."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if corr_length <= 0 or half_width <= 0:
        raise ValueError("correlation length and half width must be positive")
    b, L = float(corr_length), float(half_width)
    eps = 1e-12
    modes = []
    n_family = count // 2 + 1
    for i in range(n_family):
        # even: cos(wL) - b w sin(wL) = 0 with wL in (i pi, (i + 1/2) pi)
        lo, hi = (i * math.pi + eps) / L, ((i + 0.5) * math.pi - eps) / L
        w = _root(lambda w: math.cos(w * L) - b * w * math.sin(w * L), lo, hi, f"even mode {i}")
        norm = math.sqrt(L + math.sin(2 * w * L) / (2 * w))
        modes.append(Mode1D(2 * b / (1 + (b * w) ** 2), w, True, L, norm))
        # odd: b w cos(wL) + sin(wL) = 0 with wL in ((i + 1/2) pi, (i + 1) pi)
        lo, hi = ((i + 0.5) * math.pi + eps) / L, ((i + 1) * math.pi - eps) / L
        w = _root(lambda w: b * w * math.cos(w * L) + math.sin(w * L), lo, hi, f"odd mode {i}")
        norm = math.sqrt(L - math.sin(2 * w * L) / (2 * w))
        modes.append(Mode1D(2 * b / (1 + (b * w) ** 2), w, False, L, norm))
    modes.sort(key=lambda m: -m.eigenvalue)
    return modes[:count]


@dataclass(frozen=True)
class KlePair:
    eigenvalue: float
    index: tuple           # (i, j) into the 1D mode lists
    mode_x: Mode1D
    mode_y: Mode1D

    def __call__(self, x, y):
        return self.mode_x(x) * self.mode_y(y)


@dataclass
class KleExpansion:
    nu0: float
    sigma: float
    pairs: list
    chi: list
    corr_lengths: tuple
    half_widths: tuple = (0.5, 0.5)
    chi_pool: float = field(default=float("nan"))

    @property
    def M(self):
        return len(self.pairs)

    @property
    def chi_total(self):
        return float(sum(self.chi))

    @property
    def eigenvalues(self):
        return np.array([p.eigenvalue for p in self.pairs])

    @property
    def mean_field(self):
        return self.nu0

    def fluctuation_fields(self):
        """Callables sigma * sqrt(lambda_m) * nu_m(x, y)."""
        def make(p):
            scale = self.sigma * math.sqrt(p.eigenvalue)
            return lambda x, y: scale * p(x, y)
        return [make(p) for p in self.pairs]

    def captured_variance(self):
        trace = 4.0 * self.half_widths[0] * self.half_widths[1]
        return float(self.eigenvalues.sum() / trace)

    def evaluate(self, x, y, params):
        """nu_M(x, y; params) for a parameter vector of length M."""
        val = np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, self.nu0, dtype=float)
        for p, ym in zip(self.pairs, params):
            val = val + self.sigma * math.sqrt(p.eigenvalue) * p(x, y) * ym
        return val

    def to_dict(self):
        ok, lo, hi = check_positivity(self)
        return {
            "nu0": self.nu0,
            "sigma": self.sigma,
            "corr_lengths": list(self.corr_lengths),
            "M": self.M,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "indices": [list(p.index) for p in self.pairs],
            "chi": [float(c) for c in self.chi],
            "chi_total": self.chi_total,
            "chi_pool": self.chi_pool,
            "captured_variance": self.captured_variance(),
            "positive": ok,
            "nu_lower": lo,
            "nu_upper": hi,
            "sigma_critical": None if math.isinf(critical_sigma(self)) else critical_sigma(self),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def build_kle_2d(b1, b2, M, nu0=1.0, sigma=0.1, n_1d=None, half_width=0.5):
    """Tensor-product KLE on [-L, L]^2 truncated to the M largest eigenvalues."""
    if M < 0:
        raise ValueError("M must be nonnegative")
    if nu0 <= 0:
        raise ValueError("mean viscosity must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if n_1d is None:
        n_1d = math.ceil(math.sqrt(2 * max(M, 1))) + 2
    if M > n_1d * n_1d:
        raise ValueError(f"M={M} exceeds the product pool of {n_1d}x{n_1d} 1D modes")
    mx = solve_1d_eigenpairs(b1, half_width, n_1d)
    my = solve_1d_eigenpairs(b2, half_width, n_1d)
    lx = np.array([m.eigenvalue for m in mx])
    ly = np.array([m.eigenvalue for m in my])
    I, J = np.meshgrid(np.arange(n_1d), np.arange(n_1d), indexing="ij")
    I, J = I.ravel(), J.ravel()
    lam = lx[I] * ly[J]
    order = np.lexsort((J, I, I + J, -lam))
    sup_x = np.array([m.sup_norm() for m in mx])
    sup_y = np.array([m.sup_norm() for m in my])
    chi_all = np.sqrt(lam) * sup_x[I] * sup_y[J]

    pairs, chi = [], []
    for k in order[:M]:
        pairs.append(KlePair(float(lam[k]), (int(I[k]), int(J[k])), mx[I[k]], my[J[k]]))
        chi.append(float(chi_all[k]))
    return KleExpansion(
        nu0=float(nu0), sigma=float(sigma), pairs=pairs, chi=chi,
        corr_lengths=(float(b1), float(b2)), half_widths=(half_width, half_width),
        chi_pool=float(chi_all.sum()),
    )


def check_positivity(kle):
    """Uniform viscosity bounds nu0 -/+ sqrt(3) sigma chi over the retained terms."""
    spread = SQRT3 * kle.sigma * kle.chi_total
    lower = kle.nu0 - spread
    upper = kle.nu0 + spread
    return bool(lower > 0), float(lower), float(upper)


def critical_sigma(kle):
    """Largest sigma for which the retained expansion stays provably positive."""
    if kle.chi_total == 0:
        return math.inf
    return kle.nu0 / (SQRT3 * kle.chi_total)
