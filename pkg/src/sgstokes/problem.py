"""End-to-end setup of the stochastic driven-cavity problem and solver drivers."""
import math
from dataclasses import dataclass, replace

import numpy as np

from sgstokes.chaos import build_basis, build_G
from sgstokes.fem import assemble_fe_matrices
from sgstokes.kron import build_sgfe_system
from sgstokes.mesh import build_structured_mesh
from sgstokes.precond import (
    BlockPrecond,
    HOperator,
    LaplacianPrecond,
    ScalingResult,
    analytical_scaling,
    certified_delta,
    measure_laplacian_constants,
    numerical_a_star,
)
from sgstokes.random_field import build_kle_2d
from sgstokes.solvers import SolveConfig, bpcg_solve, minres_solve

DEFAULT_SAFETY = 0.95


@dataclass
class Problem:
    level: int
    mesh: object
    kle: object
    fem: object
    basis: object
    G: list
    op: object
    b: np.ndarray
    laplacian: LaplacianPrecond

    @property
    def size(self):
        return self.op.shape[0]

    def p1(self):
        return BlockPrecond("P1", self.laplacian, self.fem.D_p, self.op)

    def p2(self, a):
        return BlockPrecond("P2", self.laplacian, self.fem.D_p, self.op, scaling_a=a)

    def h_operator(self, a):
        return HOperator(self.op, self.laplacian, self.fem.D_p, a)


def build_problem(level=2, M=2, k=2, nu0=1.0, sigma=0.1, b1=1.0, b2=1.0,
                  laplacian_mode="exact-unweighted"):
    mesh = build_structured_mesh(level)
    kle = build_kle_2d(b1, b2, M, nu0=nu0, sigma=sigma)
    fem = assemble_fe_matrices(mesh, kle)
    basis = build_basis(M, k)
    G = build_G(basis)
    op, b = build_sgfe_system(fem, G)
    lap = LaplacianPrecond(laplacian_mode, fem, mesh_level=level, counter=op.counter)
    return Problem(level, mesh, kle, fem, basis, G, op, b, lap)


def compute_scaling(strategy, problem, *, safety=DEFAULT_SAFETY, coarse_level=1, seed=0):
    """BPCG scaling a.

    ``analytical``: a = (nu0 - sqrt(3) sigma chi) * delta.
    ``numerical``: a = safety * lambda_min(At^{-1} A) estimated on the mesh of
    level ``coarse_level`` (same KLE, chaos and preconditioner mode). With a
    multigrid At the coarse V-cycle is (nearly) a direct solve, so the estimate
    is rescaled by delta_fine / delta_coarse, the ratio of the measured scalar
    V-cycle constants on the two meshes.
    ``ratio:<r>``: a = r * lambda_min(At^{-1} A) on the problem's own mesh.
    """
    if strategy == "analytical":
        delta = certified_delta(problem.laplacian, problem.kle.nu0)
        return ScalingResult("analytical", analytical_scaling(problem.kle, delta))
    if strategy == "numerical":
        if not 0 < safety < 1:
            raise ValueError("safety factor must lie in (0, 1)")
        level = min(coarse_level, problem.level)
        coarse = problem if level == problem.level else build_problem(
            level, problem.kle.M, problem.basis.k, problem.kle.nu0, problem.kle.sigma,
            *problem.kle.corr_lengths, laplacian_mode=problem.laplacian.mode.value)
        a_coarse = numerical_a_star(coarse.op, coarse.laplacian, seed=seed)
        correction = (measure_laplacian_constants(problem.laplacian, seed=seed)[0]
                      / measure_laplacian_constants(coarse.laplacian, seed=seed)[0])
        a_star = a_coarse * correction
        return ScalingResult("numerical", safety * a_star, a_star, safety, level)
    if strategy.startswith("ratio:"):
        r = parse_ratio(strategy)
        a_star = numerical_a_star(problem.op, problem.laplacian, seed=seed)
        return ScalingResult(strategy, r * a_star, a_star, r, problem.level)
    raise ValueError(f"unknown scaling strategy {strategy!r}")


def parse_ratio(strategy):
    try:
        r = float(strategy.split(":", 1)[1])
    except (IndexError, ValueError):
        raise ValueError(f"malformed ratio strategy {strategy!r}") from None
    if not (r > 0 and math.isfinite(r)):
        raise ValueError("scaling ratio must be positive")
    return r


def solve(problem, solver="minres", cfg=None, scaling=None, **scaling_kw):
    """Run MINRES (P1) or BPCG (P2) on the problem; returns (z, report, scaling)."""
    cfg = cfg or SolveConfig()
    problem.op.reset_counters()
    if solver == "minres":
        z, report = minres_solve(problem.op, problem.p1(), problem.b, cfg)
        return z, report, None
    if solver != "bpcg":
        raise ValueError(f"unknown solver {solver!r}")
    if scaling is None:
        scaling = compute_scaling(cfg.scaling_strategy, problem, **scaling_kw)
    if cfg.strict_h_positivity is None:
        lenient = scaling.strategy.startswith("ratio:") and scaling.safety >= 1
        cfg = replace(cfg, strict_h_positivity=not lenient)
    problem.op.reset_counters()
    z, report = bpcg_solve(problem.op, problem.p2(scaling.a), problem.b, cfg)
    report.scaling_used = scaling.a
    report.diagnostics.update(scaling_strategy=scaling.strategy, a_star=scaling.a_star,
                              scaling_factor=scaling.safety, scaling_level=scaling.level)
    return z, report, scaling


def center_statistics(problem, z):
    """Mean and variance of the velocity magnitude coefficients at the domain centre.

    The chaos coefficients of each velocity component at the centre node give
    mean = coefficient of the zero index and variance = sum of the squared
    remaining coefficients; the magnitude statistics use the mean vector norm
    and the summed component variances.
    """
    mesh = problem.mesh
    ns = mesh.n_scalar
    centre = mesh.lattice_index(mesh.n, mesh.n)
    pos = int(np.searchsorted(mesh.interior, centre))
    nu_tot = problem.op.sizes[0]
    U = z[:nu_tot].reshape(problem.op.Q, 2 * ns)
    ux, uy = U[:, pos], U[:, ns + pos]
    mean = (float(ux[0]), float(uy[0]))
    var = (float(np.sum(ux[1:] ** 2)), float(np.sum(uy[1:] ** 2)))
    return {
        "mean_u1": mean[0],
        "mean_u2": mean[1],
        "var_u1": var[0],
        "var_u2": var[1],
        "mean_speed": math.hypot(*mean),
        "var_total": var[0] + var[1],
    }
