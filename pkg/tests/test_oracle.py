from __future__ import annotations

import math

import numpy as np
import pytest

from weakbound.asymptotics import m2
from weakbound.direct_solver import ConvergenceError
from weakbound.geometry import WaveguideGeometry
from weakbound.oracle import (OracleError, SweepSpec, beta_identity_check, fit_expansion,
                              fit_series, gap_exponent, lambda4_scaling_check, sweep)
from weakbound.profile import dipole, poly_bump, radial_dipole, scale

PI = math.pi
STRIP = WaveguideGeometry(2, PI)
QUICK = SweepSpec((PI / 8, PI / 16, PI / 32), 1 + PI, min_margin=PI)


def test_fit_recovers_exact_series():
    lam = np.array([0.02, 0.03, 0.05, 0.08, 0.12])
    f = fit_series(lam, 0.9 * lam + 0.3 * lam**2)
    assert f.m1_fit == pytest.approx(0.9, abs=1e-10)
    assert f.m2_fit == pytest.approx(0.3, abs=1e-8)
    assert f.m3_fit == pytest.approx(0.0, abs=1e-6)
    assert f.residual_rms < 1e-14
    assert set(f.to_dict()) >= {"coefficients", "stderr", "condition_estimate"}


def test_fit_rejects_bad_designs():
    with pytest.raises(OracleError, match="condition"):
        fit_series([1e-4, 1.0001e-4, 1.0002e-4, 1.0003e-4], [0, 0, 0, 0])
    with pytest.raises(OracleError):
        fit_series([0.1, 0.2, 0.3], [1, 2, 3])
    with pytest.raises(OracleError):
        fit_series([0.1, 0.2, 0.3, 0.4], [1, 2, np.nan, 3])
    with pytest.raises(OracleError):
        fit_series([0.2, 0.1, 0.3, 0.4], [1, 2, 3, 4])


def test_gap_exponent_of_pure_power():
    lam = np.linspace(0.1, 0.2, 6)
    fit = gap_exponent(lam, 3.0 * lam**4)
    assert fit.exponent == pytest.approx(4.0, abs=1e-12)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-10)
    with pytest.raises(OracleError):
        gap_exponent([0.1, 0.2], [1.0, -1.0])


@pytest.mark.parametrize("case", [(dipole(), STRIP), (scale(dipole(p=5), 3.0), STRIP)])
def test_beta_identity(case):
    assert beta_identity_check(*case) < 1e-7


def test_beta_identity_edge_cases():
    assert beta_identity_check(dipole(amp=0.0), STRIP) == 0.0
    with pytest.raises(OracleError):
        beta_identity_check(poly_bump(), STRIP)


def test_bump_fit_matches_leading_coefficient():
    runs = sweep(STRIP, poly_bump(), [0.04, 0.057, 0.08, 0.11, 0.16], QUICK)
    fit = fit_expansion(runs, 2)
    assert fit.m1_fit == pytest.approx(32 / 35, rel=0.02)
    assert fit.m2_fit == pytest.approx(m2(poly_bump(), STRIP).m2, rel=0.1)


def test_dipole_fit_through_virtual_states():
    spec = SweepSpec(QUICK.h_list, QUICK.L, min_margin=QUICK.min_margin, allow_virtual=True)
    runs = sweep(STRIP, dipole(), [0.02, 0.028, 0.04, 0.057, 0.08], spec)
    assert all(r.result.kind == "virtual" for _, r in runs)
    fit = fit_expansion(runs, 2)
    assert abs(fit.m1_fit) < 0.05
    assert fit.m2_fit == pytest.approx(m2(dipole(), STRIP).m2, rel=0.05)


def test_failed_lambda_is_named():
    runs = sweep(STRIP, poly_bump().negated(), [0.05, 0.1], QUICK)
    assert all(isinstance(r, ConvergenceError) for _, r in runs)
    with pytest.raises(OracleError, match="0.05"):
        fit_expansion(runs + [(0.2, runs[0][1]), (0.3, runs[0][1])], 2)


def test_scaling_check_lists_unresolved_lambdas():
    with pytest.raises(OracleError, match="m2 <= 0"):
        lambda4_scaling_check(dipole(), STRIP, [0.1, 0.2])
    with pytest.raises(OracleError, match="unresolved"):
        lambda4_scaling_check(dipole(), STRIP, [0.1, 0.2], require_positive_m2=False)
    with pytest.raises(OracleError):
        lambda4_scaling_check(radial_dipole(), WaveguideGeometry(3, PI), [0.1, 0.2])
