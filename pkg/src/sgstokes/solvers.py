"""Preconditioned MINRES, Bramble-Pasciak CG and a Lanczos extreme-eigenvalue estimator."""
import csv
import io
import json
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla


@dataclass
class SolveConfig:
    tolerance: float = 1e-6
    max_iters: int = 500
    scaling_strategy: str = "numerical"     # analytical | numerical | ratio:<r>
    record_history: bool = True
    pressure_projection: bool = True
    # None: fail on a nonpositive H-product unless the scaling is an explicit
    # ratio a/a* >= 1, where H is not expected to be positive definite.
    strict_h_positivity: bool | None = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SolveReport:
    solver: str
    iterations: int = 0
    converged: bool = False
    residual_history: list = field(default_factory=list)
    precond_residual_history: list = field(default_factory=list)
    matvec_counts: dict = field(default_factory=dict)
    per_iteration_counts: list = field(default_factory=list)
    scaling_used: float = float("nan")
    wall_time: float = 0.0
    final_residual: float = float("nan")
    indefinite_steps: int = 0
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def residual_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "relative_residual"])
        for i, r in enumerate(self.residual_history):
            w.writerow([i, repr(float(r))])
        return buf.getvalue()


STAGNATION_WINDOW = 5


class BreakdownError(RuntimeError):
    pass


def _snapshot(counter):
    return Counter({k: v for k, v in counter.items()})


def _diff(a, b):
    keys = set(a) | set(b)
    return {k: b.get(k, 0) - a.get(k, 0) for k in sorted(keys)}


def _true_residual(op, b, z, bnorm):
    return float(np.linalg.norm(b - op.apply(z)) / bnorm)


def minres_solve(op, precond, b, cfg=None, callback=None):
    """Preconditioned MINRES (Paige-Saunders recurrences) with true-residual stopping.

    ``precond`` must provide a symmetric positive definite ``apply_inv``;
    ``callback(x)`` is called with every iterate.
    """
    cfg = cfg or SolveConfig()
    if getattr(precond, "kind", "P1") != "P1":
        raise ValueError("MINRES needs the symmetric block diagonal preconditioner")
    t0 = time.perf_counter()
    counter = getattr(op, "counter", Counter())
    report = SolveReport("minres")
    b = np.asarray(b, dtype=float)
    n = b.size
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        report.converged = True
        report.residual_history = [0.0]
        return x, report
    report.residual_history.append(1.0)

    r1 = b.copy()
    y = precond.apply_inv(r1)
    beta1 = r1 @ y
    if beta1 < 0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = math.sqrt(beta1)
    report.precond_residual_history.append(beta1)
    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    eps = np.finfo(float).eps

    for itn in range(1, cfg.max_iters + 1):
        start = _snapshot(counter)
        s = 1.0 / beta
        v = s * y
        y = op.apply(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = v @ y
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = precond.apply_inv(r2)
        oldb = beta
        beta2 = r2 @ y
        if not np.isfinite(beta2) or not np.isfinite(alfa):
            raise FloatingPointError("NaN encountered in the MINRES recurrence")
        if beta2 < 0:
            raise ValueError("preconditioner is not positive definite")
        beta = math.sqrt(beta2)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        if cfg.pressure_projection and hasattr(op, "project_pressure"):
            op.project_pressure(x)

        if callback is not None:
            callback(x)
        res = _true_residual(op, b, x, bnorm)
        report.iterations = itn
        report.precond_residual_history.append(abs(phibar))
        if cfg.record_history:
            report.residual_history.append(res)
        report.per_iteration_counts.append(_diff(start, counter))
        if res <= cfg.tolerance:
            report.converged = True
            break
        if beta <= eps * beta1:
            # Krylov space exhausted without reaching the tolerance
            break

    report.final_residual = res
    report.matvec_counts = dict(counter)
    report.wall_time = time.perf_counter() - t0
    return x, report


def bpcg_solve(op, precond, b, cfg=None, h_op=None, callback=None):
    """Bramble-Pasciak CG for C z = b with the scaled block triangular preconditioner.

    CG runs on P2^{-1} C in the inner product H = blockdiag(A - a At, D_p).
    H is never applied: with r the unpreconditioned residual and
    rh = P2^{-1} r, one has a At rh_u = r_u, so
    <rh, rh>_H = rh_u.A rh_u - rh_u.r_u + rh_p.D_p rh_p, and A p_u follows the
    search-direction recurrence. Per iteration this costs one A, one B^T,
    two B and one At^{-1} application.

    With ``cfg.strict_h_positivity`` false, nonpositive H-products (expected
    once a exceeds lambda_min(At^{-1} A)) are counted instead of raising.
    """
    cfg = cfg or SolveConfig()
    if getattr(precond, "kind", None) != "P2":
        raise ValueError("BPCG needs the block triangular preconditioner")
    a = precond.scaling_a
    if h_op is not None and not math.isclose(h_op.a_param, a, rel_tol=1e-14):
        raise ValueError("H operator and preconditioner use different scalings")
    t0 = time.perf_counter()
    counter = op.counter
    report = SolveReport("bpcg", scaling_used=a)
    Q, n_u, n_p = op.Q, op.n_u, op.n_p
    D = np.tile(precond.D_p, Q)
    b = np.asarray(b, dtype=float)
    z = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        report.converged = True
        report.residual_history = [0.0]
        return z, report
    report.residual_history.append(1.0)

    def ahat_inv(x):
        return precond.laplacian.solve_panels(x.reshape(Q, n_u)).ravel() / a

    r_u, r_p = (v.copy() for v in op.split(b))
    rh_u = ahat_inv(r_u)
    rh_p = -(r_p - op.apply_B(rh_u)) / D
    A_rh = op.apply_A(rh_u)
    rho = rh_u @ A_rh - rh_u @ r_u + rh_p @ (D * rh_p)
    strict = True if cfg.strict_h_positivity is None else cfg.strict_h_positivity

    def check(value, where):
        if not np.isfinite(value):
            raise FloatingPointError("NaN encountered in the BPCG recurrence")
        if value > 0:
            return
        if strict or value == 0:
            raise BreakdownError(
                f"nonpositive H-inner product {value:.3e} {where}; "
                f"the scaling a={a:.4g} is likely too large"
            )
        report.indefinite_steps += 1

    check(rho, "at start")
    report.precond_residual_history.append(math.sqrt(abs(rho)))
    p_u, p_p = rh_u.copy(), rh_p.copy()
    Ap_u = A_rh.copy()
    res = 1.0

    for itn in range(1, cfg.max_iters + 1):
        start = _snapshot(counter)
        t_u = Ap_u + op.apply_Bt(p_p)
        t_p = op.apply_B(p_u)
        kw_u = ahat_inv(t_u)
        kw_p = -(t_p - op.apply_B(kw_u)) / D
        denom = t_u @ kw_u - t_u @ p_u - p_p @ t_p
        check(denom, f"at iteration {itn}")
        alpha = rho / denom
        nu = n_u * Q
        z[:nu] += alpha * p_u
        z[nu:] += alpha * p_p
        r_u -= alpha * t_u
        r_p -= alpha * t_p
        rh_u -= alpha * kw_u
        rh_p -= alpha * kw_p
        if cfg.pressure_projection:
            op.project_pressure(z)
        if callback is not None:
            callback(z)

        res = _true_residual(op, b, z, bnorm)
        report.iterations = itn
        if cfg.record_history:
            report.residual_history.append(res)
        if res <= cfg.tolerance:
            report.converged = True
            report.per_iteration_counts.append(_diff(start, counter))
            break

        A_rh = op.apply_A(rh_u)
        rho_new = rh_u @ A_rh - rh_u @ r_u + rh_p @ (D * rh_p)
        check(rho_new, f"at iteration {itn}")
        report.precond_residual_history.append(math.sqrt(abs(rho_new)))
        beta = rho_new / rho
        rho = rho_new
        p_u = rh_u + beta * p_u
        p_p = rh_p + beta * p_p
        Ap_u = A_rh + beta * Ap_u
        report.per_iteration_counts.append(_diff(start, counter))

    report.final_residual = res
    report.matvec_counts = dict(counter)
    report.wall_time = time.perf_counter() - t0
    return z, report


def lanczos_extreme(opA, precond, which="min", tol=1e-6, n=None, seed=0, max_iter=400, max_restarts=5):
    """Extreme eigenvalue of precond(opA(.)) for SPD opA and SPD precond.

    Lanczos in the opA-inner product with full reorthogonalisation; only
    opA and the preconditioner solve are needed.
    """
    if which not in ("min", "max"):
        raise ValueError("which must be 'min' or 'max'")
    if n is None:
        n = getattr(opA, "shape", (None,))[0]
        if n is None:
            raise ValueError("vector size n is required for plain callables")
    rng = np.random.default_rng(seed)
    restarts = 0
    while True:
        try:
            return _lanczos(opA, precond, which, tol, n, rng, max_iter)
        except BreakdownError:
            restarts += 1
            if restarts > max_restarts:
                raise
            rng = np.random.default_rng(seed + 1000 * restarts)


def _lanczos(opA, precond, which, tol, n, rng, max_iter):
    q = rng.standard_normal(n)
    Aq = opA(q)
    nrm2 = q @ Aq
    if not nrm2 > 0:
        raise BreakdownError("start vector has nonpositive energy")
    nrm = math.sqrt(nrm2)
    Qs, AQs = [q / nrm], [Aq / nrm]
    alphas, betas, history = [], [], []
    theta = None
    for j in range(min(max_iter, n)):
        w = precond(AQs[-1])
        alpha = w @ AQs[-1]
        alphas.append(alpha)
        Qm = np.array(Qs)
        AQm = np.array(AQs)
        for _ in range(2):
            w = w - Qm.T @ (AQm @ w)
        Aw = opA(w)
        b2 = w @ Aw
        if not np.isfinite(b2) or b2 < -1e-12 * abs(alpha) ** 2:
            raise BreakdownError("Lanczos lost positivity of the inner product")
        beta = math.sqrt(max(b2, 0.0))
        T_eval, T_evec = sla.eigh_tridiagonal(np.array(alphas), np.array(betas)) if betas else (
            np.array(alphas), np.ones((1, 1)))
        k = 0 if which == "min" else -1
        theta = T_eval[k]
        history.append(theta)
        resid = beta * abs(T_evec[-1, k])
        if resid <= tol * abs(theta) or beta <= 1e-14 * max(abs(a) for a in alphas):
            return float(theta)
        # clustered extremes: the Ritz value settles long before its vector
        if len(history) > STAGNATION_WINDOW and (
                abs(theta - history[-1 - STAGNATION_WINDOW]) <= 1e-2 * tol * abs(theta)):
            return float(theta)
        betas.append(beta)
        Qs.append(w / beta)
        AQs.append(Aw / beta)
    if len(alphas) >= n:
        return float(theta)
    raise BreakdownError(f"Lanczos did not converge in {max_iter} steps")
