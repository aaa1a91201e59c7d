from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from weakbound.asymptotics import m2
from weakbound.critical import (EXIST_CONSTANT, CriticalError, bound_zeros, classify,
                                legacy_criteria, m2_bounds, scan_csv_rows, shape_norms, sigma_scan)
from weakbound.geometry import WaveguideGeometry
from weakbound.profile import dipole, poly_bump, radial_dipole, scale

STRIP = WaveguideGeometry(2, math.pi)
LAYER = WaveguideGeometry(3, math.pi)


def test_constants():
    assert EXIST_CONSTANT == pytest.approx(0.256002, abs=1e-6)
    assert 4 / math.sqrt(3) == pytest.approx(2.3094, abs=1e-4)


@pytest.mark.parametrize("paper_literal", [False, True])
@pytest.mark.parametrize("p", [3, 4, 5])
def test_strip_bounds_bracket_m2(p, paper_literal):
    V = dipole(p=p)
    norms = shape_norms(V)
    for s in (0.5, 1.0, 2.0, 3.0, 8.0):
        val = m2(scale(V, s), STRIP, estimate_error=False).m2
        lo, up = m2_bounds(V, s, STRIP, paper_literal, norms=norms)
        assert lo <= val <= up


def test_layer_bounds_bracket_m2():
    V = radial_dipole()
    val = m2(V, LAYER, estimate_error=False).m2
    lo, up = m2_bounds(V, 1.0, LAYER)
    assert lo <= val <= up


def test_literal_constant_tightens_lower_bound():
    lo, _ = m2_bounds(dipole(), 1.0, STRIP)
    lo_lit, _ = m2_bounds(dipole(), 1.0, STRIP, paper_literal=True)
    assert lo < lo_lit


def test_bound_zeros_are_zeros():
    V = dipole()
    norms = shape_norms(V)
    su, sl = bound_zeros(norms, STRIP)
    assert m2_bounds(V, su, STRIP, norms=norms)[1] == pytest.approx(0.0, abs=1e-10)
    assert m2_bounds(V, sl, STRIP, norms=norms)[0] == pytest.approx(0.0, abs=1e-10)
    assert su < sl


def test_bounds_reject_bad_input():
    with pytest.raises(CriticalError):
        shape_norms(poly_bump())
    with pytest.raises(CriticalError):
        m2_bounds(dipole(), 0.0, STRIP)
    with pytest.raises(CriticalError):
        m2_bounds(radial_dipole(), 1.0, STRIP)


def test_legacy_criteria():
    # support [-1, 1]: d = pi > 4/sqrt(3) so nonexistence holds
    assert legacy_criteria(dipole(), STRIP) == (True, False)
    # a very wide dipole is smooth enough for the existence criterion
    assert legacy_criteria(scale(dipole(), 8.0), STRIP) == (False, True)
    with pytest.raises(CriticalError):
        legacy_criteria(radial_dipole(), LAYER)
    with pytest.raises(CriticalError):
        legacy_criteria(dipole(amp=0.0), STRIP)
    with pytest.raises(CriticalError):
        legacy_criteria(poly_bump(), STRIP)


def test_classify_nonzero_mean():
    assert classify(poly_bump(), STRIP).verdict == "bound_state"
    assert classify(poly_bump().negated(), STRIP).verdict == "no_bound_state"
    assert classify(poly_bump(amp=0.0), STRIP).verdict == "no_bound_state"


def test_classify_zero_mean():
    narrow = classify(dipole(), STRIP)
    assert narrow.verdict == "no_bound_state" and narrow.crit_nonexist_holds
    assert narrow.lower_bound <= narrow.m2 <= narrow.upper_bound
    wide = classify(scale(dipole(), 8.0), STRIP, sigma=8.0)
    assert wide.verdict == "bound_state" and wide.crit_exist_holds and not wide.notes
    assert wide.to_dict()["sigma"] == 8.0


def test_classify_is_amplitude_invariant():
    for amp in (0.01, 1.0, 30.0):
        assert classify(scale(replace(dipole(), amplitude=amp), 3.0), STRIP).verdict == "bound_state"


def test_sigma_scan_finds_the_crossing():
    scan = sigma_scan(dipole(), STRIP, [1.0, 2.0, 3.0, 4.0])
    assert len(scan.crossings) == 1 and scan.message == "single crossing"
    su, sl = scan.bracket
    assert su <= scan.sigma_star <= sl
    assert m2(scale(dipole(), scan.sigma_star), STRIP, estimate_error=False).m2 == pytest.approx(0, abs=1e-5)
    rows = scan_csv_rows(scan)
    assert [r["sigma"] for r in rows] == [1.0, 2.0, 3.0, 4.0]
    assert rows[0]["verdict"] == "no_bound_state" and rows[-1]["verdict"] == "bound_state"


def test_sigma_scan_without_crossing():
    scan = sigma_scan(dipole(), STRIP, [1.0])
    assert scan.sigma_star is None and scan.message == "no crossing in range"
    with pytest.raises(CriticalError):
        sigma_scan(dipole(), STRIP, [2.0, 1.0])
    with pytest.raises(CriticalError):
        sigma_scan(dipole(), STRIP, [])


def test_crossing_scales_with_channel_width():
    # sigma* kappa_1 is invariant under rescaling the whole guide
    s1 = sigma_scan(dipole(), STRIP, [2.0, 3.0]).sigma_star
    s2 = sigma_scan(dipole(), WaveguideGeometry(2, 2 * math.pi), [4.0, 6.0]).sigma_star
    assert s2 == pytest.approx(2 * s1, rel=1e-5)
    assert np.isfinite(s1)
