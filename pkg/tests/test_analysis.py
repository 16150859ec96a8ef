import json
import math

import numpy as np
import pytest

from sgstokes.analysis import (
    BoundReport,
    ContainmentError,
    InfeasibleInstance,
    blockdiag_interval,
    blocktri_interval,
    bound_approx_schur,
    bound_laplacian,
    bound_schur,
    measure_infsup,
    verify_instance,
)
from sgstokes.fem import assemble_fe_matrices
from sgstokes.mesh import build_structured_mesh
from sgstokes.random_field import build_kle_2d


class FakeKle:
    def __init__(self, nu0, sigma, chi):
        self.nu0, self.sigma, self.chi_total = nu0, sigma, chi


def test_bound_laplacian_values():
    assert bound_laplacian(FakeKle(1.0, 0.0, 2.0)) == (1.0, 1.0)
    dh, Dh = bound_laplacian(FakeKle(1.0, 0.3 / math.sqrt(3), 1.0))
    assert abs(dh - 0.7) < 1e-15 and abs(Dh - 1.3) < 1e-15


def test_bound_schur_values():
    g = 0.4
    assert bound_schur(FakeKle(1.0, 0.0, 1.0), g) == pytest.approx((g * g / 2, 2.0), abs=1e-15)
    sigma = (1.0 - 0.005) / math.sqrt(3)
    assert bound_schur(FakeKle(1.0, sigma, 1.0), g)[1] > 100


def test_bound_approx_schur():
    assert bound_approx_schur(1.0, 1.0, 0.3) == pytest.approx((0.045, 2.0))
    assert bound_approx_schur(0.8, 1.1, 0.3) == bound_approx_schur(0.8, 1.1, 0.3)


def test_golden_ratio_case():
    a, b, c, d = blockdiag_interval(1, 1, 1, 1)
    phi = (math.sqrt(5) - 1) / 2
    assert (a, b, c, d) == pytest.approx((phi, phi, 1.0, 1 + phi))
    with pytest.raises(ValueError):
        blockdiag_interval(0, 1, 1, 1)


def test_interval_nesting_with_sigma():
    prev = None
    for sigma in (0.0, 0.05, 0.1, 0.15):
        kle = FakeKle(1.0, sigma, 2.0)
        dh, Dh = bound_laplacian(kle)
        abcd = blockdiag_interval(dh, Dh, 0.1, 2.0)
        if prev is not None:
            assert abcd[0] > prev[0] and abcd[1] < prev[1] and abcd[2] < prev[2] and abcd[3] > prev[3]
        prev = abcd


def test_blocktri_symmetric_collapse():
    # equal Schur constants make the two formulas share one discriminant
    iv = blocktri_interval(0.999999, 1.0, 1.0, 0.5, 0.5)
    assert iv.applicable
    r = 1.0 / 0.999999
    m = (2 - 1.5 * r) / 2
    assert iv.zeta1 == pytest.approx(m - math.sqrt(m * m + r - 1))
    assert iv.zeta2 == pytest.approx(m + math.sqrt(m * m + r - 1))
    assert 0 < iv.lower <= iv.upper


def test_blocktri_diagnostic_not_crash():
    iv = blocktri_interval(0.5, 1.0, 0.1, 0.1, 0.1)
    assert not iv.applicable and "inapplicable" in iv.message
    with pytest.raises(ValueError):
        blocktri_interval(1.0, 1.0, 1.0, 0.1, 1.0)


def test_infsup_spectrum_and_stability():
    gammas = {}
    for level in (1, 2, 3, 4):
        fem = assemble_fe_matrices(build_structured_mesh(level))
        gamma, ev = measure_infsup(fem, return_spectrum=True)
        assert ev.min() >= gamma**2 - 1e-12 and ev.max() <= 1 + 1e-10
        if level <= 3:
            A = fem.A_unweighted.toarray()
            B = fem.B.toarray()
            ones = np.ones(fem.n_p)
            assert np.linalg.norm(B @ np.linalg.solve(A, B.T @ ones)) < 1e-10
        gammas[level] = gamma
    plateau = [gammas[2], gammas[3], gammas[4]]
    assert (max(plateau) - min(plateau)) / min(plateau) <= 0.10
    # the 2x2-cell union-jack mesh is pre-asymptotic: its constant is smaller, never larger
    assert 0.25 < gammas[1] < min(plateau)


def test_verify_default_instance():
    report = verify_instance()
    assert report.passed, report.to_markdown()
    names = [c.name for c in report.checks]
    assert names == ["laplacian", "schur", "approx_schur", "blockdiag", "blocktri"]
    report.raise_on_failure()
    assert report.diagnostics["blocktri_max_rel_imag"] <= 1e-8


def test_verify_sigma_zero():
    report = verify_instance(sigma=0.0)
    lap = report.checks[0]
    assert report.passed
    assert lap.measured_max - lap.measured_min <= 1e-10


def test_sigma_sweep_moves_towards_bounds():
    lows, highs = [], []
    for sigma in (0.05, 0.1, 0.15):
        lap = verify_instance(sigma=sigma).checks[0]
        lows.append(lap.measured_min)
        highs.append(lap.measured_max)
    assert lows[0] > lows[1] > lows[2] and highs[0] < highs[1] < highs[2]


def test_delta_hat_below_measured_and_tight_for_small_sigma():
    rep = verify_instance(sigma=1e-4, laplacian_mode="exact-mean")
    lap = rep.checks[0]
    assert rep.bounds.delta_hat <= lap.measured_min
    assert lap.measured_min / rep.bounds.delta_hat - 1 <= 0.05


def test_infeasible_instance():
    with pytest.raises(InfeasibleInstance):
        verify_instance(level=1, M=10, k=1, sigma=0.5)


def test_report_round_trip_and_failure_listing():
    report = verify_instance(level=1, M=1, k=1)
    d = json.loads(report.to_json())
    again = BoundReport.from_dict(d)
    assert again.to_dict() == report.to_dict()
    again.checks[0].passed = False
    again.checks[0].detail = "eigenvalue 9 outside [0, 1]"
    with pytest.raises(ContainmentError, match="laplacian"):
        again.raise_on_failure()
    assert "| laplacian |" in report.to_markdown()


def test_bound_functions_deterministic():
    kle = build_kle_2d(1, 1, 4, sigma=0.1)
    assert bound_laplacian(kle, 0.9, 1.0) == bound_laplacian(kle, 0.9, 1.0)
    assert blockdiag_interval(0.7, 1.3, 0.05, 2.0) == blockdiag_interval(0.7, 1.3, 0.05, 2.0)
