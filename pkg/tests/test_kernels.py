from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import special

from weakbound.geometry import WaveguideGeometry
from weakbound.kernels import (EULER_GAMMA, LN2, KernelError, KernelGrid, free_resolvent_kernel,
                               inv_dist_cell_integral, kernel_report, log_cell_integral, macdonald,
                               n_alpha_grid, random_smooth_kernel, schur_holmgren)


def test_macdonald_matches_reference():
    z = np.logspace(-4, np.log10(500), 400)
    np.testing.assert_allclose(macdonald(0, z), special.k0(z), rtol=1e-12)
    np.testing.assert_allclose(macdonald(1, z), special.k1(z), rtol=1e-12)
    np.testing.assert_allclose(macdonald(0, z, scaled=True), special.k0e(z), rtol=1e-12)
    assert macdonald(0, 1.0) == pytest.approx(0.42102443824070834, rel=1e-14)


def test_macdonald_estimates():
    for z in (0.01, 0.1, 1.0, 10.0):
        assert z * macdonald(1, z) <= 1.0
    z = np.logspace(-4, np.log10(50), 200)
    assert np.max(np.abs((macdonald(0, z) + np.log(z)) * np.exp(-z))) < 1.0
    assert np.max(np.abs(macdonald(1, z) - 1 / z)) < 1.0
    assert macdonald(0, 1e-8) + math.log(1e-8) == pytest.approx(LN2 - EULER_GAMMA, abs=1e-12)


def test_macdonald_domain():
    with pytest.raises(KernelError):
        macdonald(0, 0.0)
    with pytest.raises(KernelError):
        macdonald(2, 1.0)


G3 = WaveguideGeometry(3, math.pi)


def test_resolvent_kernel_properties():
    p, q = (np.array([0.0, 0.0]), 1.0), (np.array([0.5, 0.2]), 2.0)
    a = free_resolvent_kernel(G3, p, q, 0.5, 20).value
    b = free_resolvent_kernel(G3, q, p, 0.5, 20).value
    assert a == pytest.approx(b, rel=1e-14)
    assert free_resolvent_kernel(G3, p, (q[0], 0.0), 0.5, 20).value == 0.0
    assert abs(free_resolvent_kernel(G3, p, (q[0], G3.d), 0.5, 20).value) < 1e-15
    with pytest.raises(KernelError):
        free_resolvent_kernel(G3, p, (p[0], 2.0), 0.5, 20)
    with pytest.raises(KernelError):
        free_resolvent_kernel(WaveguideGeometry(2), p, q, 0.5, 20)


def test_resolvent_truncation_bound():
    p, q = (np.array([0.0, 0.0]), 1.0), (np.array([G3.d, 0.0]), 1.3)
    r10 = free_resolvent_kernel(G3, p, q, 0.3, 10)
    r40 = free_resolvent_kernel(G3, p, q, 0.3, 40)
    assert abs(r10.value - r40.value) <= r10.tail_bound


def test_resolvent_positive_far_apart():
    rng = np.random.default_rng(2)
    for _ in range(20):
        u, up = rng.uniform(0.2, G3.d - 0.2, 2)
        val = free_resolvent_kernel(G3, (np.zeros(2), u), (np.array([3.0, 1.0]), up), 0.4, 30).value
        assert val > 0


def test_cell_integrals():
    from scipy.integrate import dblquad

    a = 0.3
    # quadrant integrals times 4 keep the singular corner on the boundary
    ref = 4 * dblquad(lambda y, x: math.log(math.hypot(x, y)), 0, a, 0, a)[0]
    assert log_cell_integral(a) == pytest.approx(ref, rel=1e-8)
    ref = 4 * dblquad(lambda y, x: 1 / math.hypot(x, y), 0, a, 0, a)[0]
    assert inv_dist_cell_integral(a) == pytest.approx(ref, rel=1e-8)


def test_schur_holmgren_bounds_norm():
    rng = np.random.default_rng(11)
    for i in range(50):
        kg = random_smooth_kernel(rng, symmetric=bool(i % 2))
        assert kg.operator_norm() <= schur_holmgren(kg) * (1 + 1e-12)


def test_schur_holmgren_near_identity():
    x = np.linspace(0, 1, 401)
    w = np.full(x.size, x[1] - x[0])
    eps = 0.01
    K = np.exp(-((x[:, None] - x[None, :]) ** 2) / (2 * eps**2)) / (math.sqrt(2 * math.pi) * eps)
    kg = KernelGrid(x[:, None], w, K)
    assert schur_holmgren(kg) == pytest.approx(1.0, abs=1e-3)


def test_kernel_grid_validation():
    with pytest.raises(KernelError):
        KernelGrid(np.zeros((3, 1)), np.ones(3), np.ones((3, 2)))
    bad = np.ones((3, 3))
    bad[0, 1] = np.inf
    with pytest.raises(KernelError):
        KernelGrid(np.zeros((3, 1)), np.ones(3), bad)


def test_n_alpha_grid_needs_fine_cells():
    h = lambda p: np.ones(p.shape[0])
    with pytest.raises(KernelError):
        n_alpha_grid(h, 4.0, 4, 0.5)
    kg = n_alpha_grid(h, 1.0, 20, 0.5)
    assert kg.operator_norm() <= schur_holmgren(kg) * (1 + 1e-12)


def test_kernel_report_all_ok():
    rows = kernel_report(count=10)
    assert all(r["ok"] for r in rows)
    grad_rows = [r for r in rows if r["kernel"].startswith("n_alpha_mu")]
    assert len(grad_rows) == 2 and all(r["sh_bound"] <= r["analytic_bound"] for r in grad_rows)
