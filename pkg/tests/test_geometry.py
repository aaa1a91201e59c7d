from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weakbound.geometry import (GeometryError, WaveguideGeometry, alpha_map, beta_map,
                                deformation_map, metric, transverse_mode)
from weakbound.profile import dipole, poly_bump, radial_dipole, radial_poly_bump


def test_kappa():
    assert WaveguideGeometry(2, math.pi).kappa1 == 1.0
    assert transverse_mode(WaveguideGeometry(2, 1.0), 2).kappa == pytest.approx(2 * math.pi)
    with pytest.raises(GeometryError):
        transverse_mode(WaveguideGeometry(), 0)


def test_invalid_geometry():
    for kw in ({"n": 4}, {"d": 0.0}, {"lam": -0.1}):
        with pytest.raises(GeometryError):
            WaveguideGeometry(**kw)


def _gauss(d, n=64):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * d * (x + 1), 0.5 * d * w


@pytest.mark.parametrize("d", [math.pi, 1.0, 2.5])
def test_modes_orthonormal(d):
    g = WaveguideGeometry(2, d)
    u, w = _gauss(d)
    chi = np.array([transverse_mode(g, j).chi(u) for j in range(1, 11)])
    np.testing.assert_allclose((chi * w) @ chi.T, np.eye(10), atol=1e-12)


def test_mode_derivative_energy():
    g = WaveguideGeometry(2, 1.7)
    u, w = _gauss(g.d)
    m = transverse_mode(g, 1)
    assert np.sum(w * m.dchi(u) ** 2) == pytest.approx(g.kappa1**2, rel=1e-12)


def test_deformation_map():
    g = WaveguideGeometry(2, math.pi, 0.0)
    x, u = np.array([0.1, 0.5]), np.array([1.0, 2.0])
    np.testing.assert_allclose(deformation_map(g, poly_bump(), x, u), np.stack([x, u], -1))
    g = WaveguideGeometry(3, math.pi, 0.1)
    p = deformation_map(g, radial_poly_bump(), np.array([0.0, 0.0]), g.d)
    assert p[-1] == pytest.approx(1.1 * g.d)


def test_map_must_be_a_diffeomorphism():
    with pytest.raises(GeometryError, match="diffeomorphism"):
        deformation_map(WaveguideGeometry(2, math.pi, 2.0), poly_bump().negated(), 0.0, 1.0)


def test_map_jacobian_is_sqrt_det():
    g = WaveguideGeometry(2, math.pi, 0.4)
    v = dipole()
    rng = np.random.default_rng(1)
    x, u = rng.uniform(-0.9, 0.9, 20), rng.uniform(0, g.d, 20)
    h = 1e-6
    dx = (deformation_map(g, v, x + h, u) - deformation_map(g, v, x - h, u)) / (2 * h)
    du = (deformation_map(g, v, x, u + h) - deformation_map(g, v, x, u - h)) / (2 * h)
    jac = dx[:, 0] * du[:, 1] - dx[:, 1] * du[:, 0]
    np.testing.assert_allclose(jac, 1 + g.lam * v(x), rtol=1e-8)


def test_metric_identity_at_zero_coupling():
    md = metric(WaveguideGeometry(3, math.pi, 0.0), radial_poly_bump(), np.zeros((4, 2)),
                np.linspace(0.1, 3, 4))
    np.testing.assert_array_equal(md.G, np.broadcast_to(np.eye(3), (4, 3, 3)))


def test_strip_metric_matches_closed_form():
    g = WaveguideGeometry(2, math.pi, 0.3)
    v = poly_bump()
    x, u = 0.4, 1.3
    val, d1, _ = v.derivatives(np.array(x))
    lam = g.lam
    exact = np.array([[1 + lam**2 * d1**2 * u**2, lam * d1 * (1 + lam * val) * u],
                      [lam * d1 * (1 + lam * val) * u, (1 + lam * val) ** 2]])
    np.testing.assert_allclose(metric(g, v, x, u).G, exact, rtol=1e-14)


def _points(g, rng, k=100):
    x = rng.uniform(-0.95, 0.95, k) if g.n == 2 else rng.uniform(-0.65, 0.65, (k, 2))
    return x, rng.uniform(0, g.d, k)


@pytest.mark.parametrize("side", ["upper", "lower"])
@pytest.mark.parametrize("case", [(2, dipole()), (2, poly_bump()), (3, radial_poly_bump()),
                                  (3, radial_dipole(amp=0.1))])
def test_metric_identities(case, side):
    n, v = case
    g = WaveguideGeometry(n, math.pi, 0.25)
    x, u = _points(g, np.random.default_rng(3))
    md = metric(g, v, x, u, side)
    np.testing.assert_allclose(md.det, md.sqrt_det**2, atol=1e-10)
    np.testing.assert_allclose(md.G @ md.G_inv, np.broadcast_to(np.eye(n), md.G.shape), atol=1e-10)
    np.testing.assert_allclose(md.G, np.swapaxes(md.G, -1, -2), atol=0)
    assert np.all(np.linalg.eigvalsh(md.G) > 0)


def _fd_contraction(g, v, x, u, side, h=2e-4):
    n = g.n
    c = np.array([1, -8, 8, -1]) / (12 * h)
    out = 0.0
    for j in range(n):
        for ck, s in zip(c, (-2, -1, 1, 2)):
            if j == n - 1:
                gi = metric(g, v, x, u + s * h, side).G_inv
            elif n == 2:
                gi = metric(g, v, x + s * h, u, side).G_inv
            else:
                e = np.zeros(2)
                e[j] = s * h
                gi = metric(g, v, x + e, u, side).G_inv
            out = out + ck * gi[..., :, j]
    return out


@pytest.mark.parametrize("side", ["upper", "lower"])
@pytest.mark.parametrize("case", [(2, dipole()), (3, radial_poly_bump())])
def test_contraction_fields_match_finite_differences(case, side):
    n, v = case
    g = WaveguideGeometry(n, math.pi, 0.3)
    x, u = _points(g, np.random.default_rng(5), 30)
    md = metric(g, v, x, u, side)
    np.testing.assert_allclose(md.div, _fd_contraction(g, v, x, u, side), atol=1e-9)


def test_transverse_contraction_closed_form():
    g = WaveguideGeometry(3, math.pi, 0.2)
    v = radial_poly_bump()
    x, u = np.array([[0.2, 0.3]]), np.array([1.1])
    val, grad, lap = v.derivatives(x)
    w = 1 + g.lam * val
    exact = -g.lam * lap * u / w + 3 * g.lam**2 * np.sum(grad**2, -1) * u / w**2
    assert metric(g, v, x, u).div[0, -1] == pytest.approx(exact[0], rel=1e-13)


def test_singular_metric_rejected():
    with pytest.raises(GeometryError):
        metric(WaveguideGeometry(2, math.pi, 1.5), poly_bump().negated(), 0.0, 1.0)


def test_dimension_maps():
    assert alpha_map(2, 0.3) == 0.3
    assert alpha_map(3, 1e-8) < 0 and alpha_map(3, 1e-8) > -0.06
    assert beta_map(3, math.e) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(-0.99, 0.99), st.floats(0.01, 3.1))
def test_metric_det_property(lam, x, u):
    g = WaveguideGeometry(2, math.pi, lam)
    md = metric(g, dipole(), x, u)
    assert md.det == pytest.approx(float(md.sqrt_det) ** 2, abs=1e-10)
