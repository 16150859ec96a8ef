"""Eigenvalue bounds for the preconditioned SGFE operators and dense containment checks.

The formulas are pure functions of a handful of constants; ``verify_instance``
builds a small problem, computes every spectrum by dense eigensolves and
reports how each one sits inside its bound.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from sgstokes.kron import assemble_dense
from sgstokes.precond import laplacian_constants
from sgstokes.random_field import check_positivity

THETA_SQ = 0.5
BIG_THETA_SQ = 2.0


class InfeasibleInstance(ValueError):
    """The instance violates a precondition of the bounds (e.g. lost positivity)."""


class ContainmentError(AssertionError):
    """A measured eigenvalue falls outside its analytical bound."""


# --- bound formulas -------------------------------------------------------

def bound_laplacian(kle, delta=1.0, Delta=1.0):
    """(delta_hat, Delta_hat) = ((nu_lo - sqrt3 sigma chi) delta, (nu_hi + sqrt3 sigma chi) Delta)."""
    _, lo, hi = check_positivity(kle)
    return lo * delta, hi * Delta


def bound_schur(kle, gamma):
    """Bounds for the Schur complement B A^{-1} B^T against I (x) D_p."""
    _, lo, hi = check_positivity(kle)
    if lo <= 0:
        return THETA_SQ * gamma**2 / hi, math.inf
    return THETA_SQ * gamma**2 / hi, BIG_THETA_SQ / lo


def bound_approx_schur(delta, Delta, gamma):
    """Bounds for B At^{-1} B^T against I (x) D_p: (delta theta^2 gamma^2, Delta Theta^2)."""
    return delta * THETA_SQ * gamma**2, Delta * BIG_THETA_SQ


def blockdiag_interval(delta_hat, Delta_hat, theta_hat, Theta_hat):
    """(a, b, c, d) with the spectrum of P1^{-1} C inside [-a, -b] U [c, d]."""
    for name, v in (("delta_hat", delta_hat), ("Delta_hat", Delta_hat),
                    ("theta_hat", theta_hat), ("Theta_hat", Theta_hat)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    a = (math.sqrt(delta_hat**2 + 4 * Theta_hat) - delta_hat) / 2
    b = (math.sqrt(Delta_hat**2 + 4 * theta_hat) - Delta_hat) / 2
    c = delta_hat
    d = (Delta_hat + math.sqrt(Delta_hat**2 + 4 * Theta_hat)) / 2
    return a, b, c, d


@dataclass
class BlockTriInterval:
    lower: float
    upper: float
    zeta1: float
    zeta2: float
    applicable: bool = True
    message: str = ""


def blocktri_interval(a_delta, delta_hat, Delta_hat, gamma_hat, Gamma_hat):
    """Interval [1 - zeta2, 1 - zeta1] for the spectrum of P2^{-1} C.

    With r = Delta_hat / (a_delta delta_hat):
    zeta_{1,2} = (2 - (1 + g) r)/2 -/+ sqrt(((2 - (1 + g) r)/2)^2 + r - 1),
    g = Gamma_hat for zeta1 and gamma_hat for zeta2. A negative square-root
    argument is reported through ``applicable`` rather than raised.
    """
    if not 0 < a_delta < 1:
        raise ValueError("a_delta must lie in (0, 1)")
    r = Delta_hat / (a_delta * delta_hat)
    m1 = (2 - (1 + Gamma_hat) * r) / 2
    m2 = (2 - (1 + gamma_hat) * r) / 2
    disc1 = m1 * m1 + r - 1
    disc2 = m2 * m2 + r - 1
    if disc1 < 0 or disc2 < 0:
        return BlockTriInterval(math.nan, math.nan, math.nan, math.nan, False,
                                "interval formula inapplicable for these constants "
                                f"(discriminants {disc1:.3g}, {disc2:.3g})")
    zeta1 = m1 - math.sqrt(disc1)
    zeta2 = m2 + math.sqrt(disc2)
    return BlockTriInterval(1 - zeta2, 1 - zeta1, zeta1, zeta2)


# --- dense spectra --------------------------------------------------------

def deflated_pencil_eigs(A, M, N):
    """Eigenvalues of the pencil (A, M) on the M-orthogonal complement of span(N).

    ``N`` spans a nullspace of A; that complement is invariant under M^{-1} A.
    """
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if N.shape[0] != A.shape[0]:
        N = N.T
    V = sla.null_space(N.T @ M)
    return sla.eigh(V.T @ A @ V, V.T @ M @ V, eigvals_only=True)


def measure_infsup(fem, return_spectrum=False):
    """Inf-sup constant gamma from the pencil (B A^{-1} B^T, M_p), constants deflated."""
    A = fem.A_unweighted.toarray()
    B = fem.B.toarray()
    Mp = fem.M_p.toarray()
    S = B @ np.linalg.solve(A, B.T)
    S = 0.5 * (S + S.T)
    ones = np.ones((S.shape[0], 1))
    ev = deflated_pencil_eigs(S, Mp, ones)
    if ev[0] <= 0:
        raise ArithmeticError(f"smallest deflated Schur eigenvalue {ev[0]:.3e} is not positive")
    gamma = math.sqrt(ev[0])
    return (gamma, ev) if return_spectrum else gamma


def mass_ratio_range(fem):
    """Extreme generalized eigenvalues of (M_p, D_p)."""
    ev = sla.eigh(fem.M_p.toarray(), np.diag(fem.D_p), eigvals_only=True)
    return float(ev[0]), float(ev[-1])


def _pressure_block_constants(op, Q, n_p):
    N = np.zeros((Q * n_p, Q))
    for a in range(Q):
        N[a * n_p:(a + 1) * n_p, a] = 1.0
    return N


def schur_spectra(dense, op):
    """Deflated spectra of the exact and approximate Schur pencils against I (x) D_p."""
    A, B, S = dense.A, dense.B, dense.S
    N = _pressure_block_constants(op, op.Q, op.n_p)
    exact = B @ np.linalg.solve(A, B.T)
    approx = B @ np.linalg.solve(dense.Atilde, B.T)
    sym = lambda X: 0.5 * (X + X.T)
    return deflated_pencil_eigs(sym(exact), S, N), deflated_pencil_eigs(sym(approx), S, N)


def p1_spectrum(dense, op):
    """Eigenvalues of P1^{-1} C with the constant-pressure nullspace deflated."""
    return deflated_pencil_eigs(dense.C, dense.P1, op.pressure_constants())


def p2_spectrum(dense, op):
    """Complex eigenvalues of P2^{-1} C restricted to the H-orthogonal complement of the constants."""
    K = np.linalg.solve(dense.P2, dense.C)
    W = sla.null_space(op.pressure_constants().T @ dense.H)
    return np.linalg.eigvals(W.T @ K @ W)


def h_machinery(dense, op):
    """Positivity and H-symmetry diagnostics for the block triangular preconditioner."""
    H, K = dense.H, np.linalg.solve(dense.P2, dense.C)
    HK = H @ K
    W = sla.null_space(op.pressure_constants().T)
    sym = 0.5 * (HK + HK.T)
    return {
        "H_min_eig": float(sla.eigh(H, eigvals_only=True)[0]),
        "H_symmetry_defect": float(np.linalg.norm(HK - K.T @ H) / np.linalg.norm(HK)),
        "HK_sym_min_eig": float(sla.eigh(W.T @ sym @ W, eigvals_only=True)[0]),
    }


# --- reports --------------------------------------------------------------

@dataclass
class BoundSet:
    delta_hat: float
    Delta_hat: float
    schur_lo: float
    schur_hi: float
    approx_schur_lo: float
    approx_schur_hi: float
    gamma: float
    delta: float
    Delta: float
    theta_sq: float = THETA_SQ
    Theta_sq: float = BIG_THETA_SQ


@dataclass
class SpectralIntervals:
    blockdiag: tuple
    blocktri: BlockTriInterval


@dataclass
class CheckResult:
    name: str
    analytical: list
    measured_min: float
    measured_max: float
    margin: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class BoundReport:
    params: dict
    bounds: BoundSet
    intervals: SpectralIntervals
    checks: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), allow_nan=True, **kw)

    @classmethod
    def from_dict(cls, d):
        iv = d["intervals"]
        return cls(
            params=d["params"],
            bounds=BoundSet(**d["bounds"]),
            intervals=SpectralIntervals(tuple(iv["blockdiag"]), BlockTriInterval(**iv["blocktri"])),
            checks=[CheckResult(**c) for c in d["checks"]],
            diagnostics=d.get("diagnostics", {}),
        )

    def to_markdown(self):
        lines = [
            "| check | bound | measured min | measured max | margin | pass |",
            "|---|---|---|---|---|---|",
        ]
        for c in self.checks:
            bound = ", ".join(f"{v:.6g}" for v in c.analytical)
            lines.append(f"| {c.name} | [{bound}] | {c.measured_min:.6g} | {c.measured_max:.6g} "
                         f"| {c.margin:.3g} | {'yes' if c.passed else 'NO'} |")
        return "\n".join(lines) + "\n"

    def raise_on_failure(self):
        bad = [c for c in self.checks if not c.passed]
        if bad:
            msg = "; ".join(f"{c.name}: measured [{c.measured_min:.6g}, {c.measured_max:.6g}] "
                            f"vs bound {c.analytical} ({c.detail})" for c in bad)
            raise ContainmentError(msg)


def _interval_check(name, values, lo, hi, tol):
    values = np.asarray(values, dtype=float)
    vmin, vmax = float(values.min()), float(values.max())
    margin = min(vmin - lo, hi - vmax)
    passed = margin >= -tol
    detail = "" if passed else (
        f"eigenvalue {vmin if vmin - lo < hi - vmax else vmax:.12g} outside [{lo:.12g}, {hi:.12g}]")
    return CheckResult(name, [lo, hi], vmin, vmax, margin, tol, bool(passed), detail)


def _union_check(values, a, b, c, d, tol):
    values = np.asarray(values, dtype=float)
    neg, pos = values[values < 0], values[values >= 0]
    margins = []
    if neg.size:
        margins += [neg.min() + a, -b - neg.max()]
    if pos.size:
        margins += [pos.min() - c, d - pos.max()]
    margin = float(min(margins))
    passed = margin >= -tol
    detail = "" if passed else "eigenvalue outside the union [-a,-b] U [c,d]"
    return CheckResult("blockdiag", [-a, -b, c, d], float(values.min()), float(values.max()),
                       margin, tol, bool(passed), detail)


def verify_instance(level=2, M=2, k=2, nu0=1.0, sigma=0.1, b1=1.0, b2=1.0,
                    laplacian_mode="exact-unweighted", a_delta=0.95, problem=None):
    """Dense containment checks of all bounds on one small instance."""
    from sgstokes.problem import build_problem

    params = dict(level=level, M=M, k=k, nu0=nu0, sigma=sigma, b1=b1, b2=b2,
                  laplacian_mode=laplacian_mode, a_delta=a_delta)
    if problem is None:
        problem = build_problem(level, M, k, nu0=nu0, sigma=sigma, b1=b1, b2=b2,
                                laplacian_mode=laplacian_mode)
    kle, op = problem.kle, problem.op
    positive, _, _ = check_positivity(kle)
    if not positive:
        raise InfeasibleInstance(
            f"viscosity positivity fails (sigma={sigma}, chi={kle.chi_total:.4g}); bounds do not apply")

    delta, Delta = laplacian_constants(problem.laplacian, kle.nu0)
    gamma = measure_infsup(problem.fem)
    dh, Dh = bound_laplacian(kle, delta, Delta)
    s_lo, s_hi = bound_schur(kle, gamma)
    t_lo, t_hi = bound_approx_schur(delta, Delta, gamma)
    bounds = BoundSet(dh, Dh, s_lo, s_hi, t_lo, t_hi, gamma, delta, Delta)
    abcd = blockdiag_interval(dh, Dh, t_lo, t_hi)
    tri = blocktri_interval(a_delta, dh, Dh, s_lo, s_hi)
    intervals = SpectralIntervals(abcd, tri)

    a = a_delta * dh
    dense = assemble_dense(op, problem.laplacian, problem.fem.D_p, a=a)
    report = BoundReport(params, bounds, intervals)
    report.diagnostics["gamma_convention"] = "gamma_hat, Gamma_hat = Schur bounds of B A^-1 B^T vs I(x)D_p"
    report.diagnostics["scaling_a"] = a
    report.diagnostics["chi_truncated"] = kle.chi_total
    report.diagnostics["mass_ratio_range"] = list(mass_ratio_range(problem.fem))

    lap = sla.eigh(dense.A, dense.Atilde, eigvals_only=True)
    report.checks.append(_interval_check("laplacian", lap, dh, Dh, 1e-10))
    exact_s, approx_s = schur_spectra(dense, op)
    report.checks.append(_interval_check("schur", exact_s, s_lo, s_hi, 1e-10))
    report.checks.append(_interval_check("approx_schur", approx_s, t_lo, t_hi, 1e-10))
    report.checks.append(_union_check(p1_spectrum(dense, op), *abcd, 1e-8))

    ev2 = p2_spectrum(dense, op)
    radius = float(np.abs(ev2).max())
    imag = float(np.abs(ev2.imag).max()) / radius
    report.diagnostics["blocktri_max_rel_imag"] = imag
    if tri.applicable:
        chk = _interval_check("blocktri", ev2.real, tri.lower, tri.upper, 1e-6)
    else:
        chk = CheckResult("blocktri", [math.nan, math.nan], float(ev2.real.min()),
                          float(ev2.real.max()), math.nan, 1e-6, False, tri.message)
    if imag > 1e-8:
        chk.passed = False
        chk.detail = (chk.detail + "; " if chk.detail else "") + f"complex eigenvalues (rel. imag {imag:.2e})"
    report.checks.append(chk)
    report.diagnostics["h_machinery"] = h_machinery(dense, op)
    return report
