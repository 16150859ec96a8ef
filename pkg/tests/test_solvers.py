import json
from collections import Counter

import numpy as np
import pytest
import scipy.linalg as sla

from sgstokes.kron import assemble_dense, direct_solve
from sgstokes.precond import ScalingResult
from sgstokes.problem import build_problem, compute_scaling, solve
from sgstokes.solvers import (
    BreakdownError,
    SolveConfig,
    SolveReport,
    bpcg_solve,
    lanczos_extreme,
    minres_solve,
)


class IdentityOp:
    shape = (6, 6)
    counter = Counter()

    def apply(self, z):
        return np.asarray(z, dtype=float).copy()


class IdentityPrecond:
    kind = "P1"

    def apply_inv(self, r):
        return r.copy()


def test_minres_identity_system():
    b = np.arange(1.0, 7.0)
    z, rep = minres_solve(IdentityOp(), IdentityPrecond(), b)
    assert rep.converged and rep.iterations == 1
    np.testing.assert_allclose(z, b)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(tolerance=0)
    with pytest.raises(ValueError):
        SolveConfig(max_iters=0)


@pytest.fixture(scope="module")
def reference(small_problem):
    return direct_solve(small_problem.op, small_problem.b)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_minres_matches_direct(small_problem, reference):
    z, rep, _ = solve(small_problem, "minres", SolveConfig(tolerance=1e-10))
    assert rep.converged and rep.residual_history[-1] <= 1e-10
    assert rel(z, reference) < 1e-8


@pytest.mark.parametrize("strategy", ["analytical", "numerical", "ratio:1.0"])
def test_bpcg_matches_direct(small_problem, reference, strategy):
    z, rep, sc = solve(small_problem, "bpcg", SolveConfig(tolerance=1e-10, scaling_strategy=strategy))
    assert rep.converged and rel(z, reference) < 1e-8
    assert rep.scaling_used == sc.a


def test_minres_preconditioned_residual_monotone(small_problem):
    _, rep, _ = solve(small_problem, "minres", SolveConfig(tolerance=1e-10))
    h = np.array(rep.precond_residual_history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_bpcg_h_norm_error_decreases(small_problem, reference):
    a = compute_scaling("numerical", small_problem).a
    dense = assemble_dense(small_problem.op, small_problem.laplacian, small_problem.fem.D_p, a=a)
    HK = dense.H @ np.linalg.solve(dense.P2, dense.C)
    errors = []
    cb = lambda z: errors.append(float((z - reference) @ HK @ (z - reference)))
    bpcg_solve(small_problem.op, small_problem.p2(a), small_problem.b, SolveConfig(tolerance=1e-9), callback=cb)
    errors = np.array(errors)
    assert np.all(errors > 0) or errors[-1] < 1e-20
    assert np.all(np.diff(errors) < 0)


def test_solver_equivalence(small_problem):
    tol = 1e-6
    z1, r1, _ = solve(small_problem, "minres", SolveConfig(tolerance=tol))
    z2, r2, _ = solve(small_problem, "bpcg", SolveConfig(tolerance=tol))
    assert r1.converged and r2.converged
    assert rel(z1, z2) <= 10 * tol


def test_reproducible(small_problem):
    runs = [solve(small_problem, "bpcg", SolveConfig()) for _ in range(2)]
    assert runs[0][1].iterations == runs[1][1].iterations
    np.testing.assert_array_equal(runs[0][0], runs[1][0])


def test_cost_contract(small_problem):
    _, rm, _ = solve(small_problem, "minres")
    _, rb, _ = solve(small_problem, "bpcg")
    m, b = rm.per_iteration_counts[3], rb.per_iteration_counts[3]
    assert b["B"] == m["B"] + 1
    assert b["A"] == m["A"] and b["Atilde_inv"] == m["Atilde_inv"] == 1


def test_max_iters_gives_unconverged_report(small_problem):
    _, rep, _ = solve(small_problem, "minres", SolveConfig(max_iters=3))
    assert not rep.converged and rep.iterations == 3
    _, rep, _ = solve(small_problem, "bpcg", SolveConfig(max_iters=3))
    assert not rep.converged and rep.iterations == 3


def test_bpcg_strict_breakdown_names_scaling(small_problem):
    a_star = compute_scaling("ratio:1", small_problem).a_star
    sc = ScalingResult("custom", 3.0 * a_star)
    with pytest.raises(BreakdownError, match="scaling"):
        solve(small_problem, "bpcg", SolveConfig(), scaling=sc)
    # an explicit ratio above one is run in lenient mode and still converges
    sc = ScalingResult("ratio:3", 3.0 * a_star, a_star, 3.0)
    _, rep, _ = solve(small_problem, "bpcg", SolveConfig(), scaling=sc)
    assert rep.converged and rep.indefinite_steps > 0


def test_solver_kind_checks(small_problem):
    with pytest.raises(ValueError):
        minres_solve(small_problem.op, small_problem.p2(0.5), small_problem.b)
    with pytest.raises(ValueError):
        bpcg_solve(small_problem.op, small_problem.p1(), small_problem.b)
    with pytest.raises(ValueError):
        solve(small_problem, "gmres")


def test_nan_is_hard_error(small_problem):
    b = small_problem.b.copy()
    b[0] = np.nan
    with pytest.raises((FloatingPointError, ValueError)):
        minres_solve(small_problem.op, small_problem.p1(), b)


def test_report_serialisation(small_problem):
    _, rep, _ = solve(small_problem, "minres", SolveConfig(max_iters=5))
    d = json.loads(rep.to_json())
    assert d["iterations"] == 5 and len(d["residual_history"]) == 6
    lines = rep.residual_csv().splitlines()
    assert lines[0] == "iteration,relative_residual" and len(lines) == 7
    assert isinstance(SolveReport("x").to_dict(), dict)


def test_lanczos_identity_pencil():
    K = np.diag(np.linspace(1, 3, 50))
    assert abs(lanczos_extreme(lambda x: K @ x, lambda r: np.linalg.solve(K, r), "min", n=50) - 1.0) < 1e-8
    assert abs(lanczos_extreme(lambda x: K @ x, lambda r: np.linalg.solve(K, r), "max", n=50) - 1.0) < 1e-8


def test_lanczos_matches_dense(small_problem):
    dense = assemble_dense(small_problem.op, small_problem.laplacian, small_problem.fem.D_p)
    ev = sla.eigh(dense.A, dense.Atilde, eigvals_only=True)
    op, lap = small_problem.op, small_problem.laplacian
    n = op.sizes[0]
    for which, ref in (("min", ev[0]), ("max", ev[-1])):
        est = [lanczos_extreme(op.A_op.apply, lap.solve, which, n=n, seed=s) for s in range(5)]
        assert abs(est[0] - ref) <= 1e-6 * abs(ref)
        assert max(est) - min(est) <= 1e-6 * abs(ref)


def test_lanczos_bad_which():
    with pytest.raises(ValueError):
        lanczos_extreme(lambda x: x, lambda x: x, "mid", n=3)
