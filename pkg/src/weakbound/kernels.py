"""Macdonald functions, the free transverse-mode resolvent kernel and Schur-Holmgren bounds.

These evaluators make the operator-norm estimates behind the layer analysis
executable: kernels are sampled on a weighted square grid and the
Schur-Holmgren bound is compared with the discrete operator norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061
LN2 = 0.69314718055994530942

_SERIES_MAX = 2.0
# trapezoid rule for exp(z) K_nu(z) = int_0^inf exp(-z (cosh t - 1)) cosh(nu t) dt;
# the step shrinks like z^{-1/2} to follow the Gaussian width of the integrand
_T_COUNT = 80


class KernelError(ValueError):
    pass


def _series_k0(z):
    q = 0.25 * z * z
    term = np.ones_like(z)
    i0 = np.ones_like(z)
    tail = np.zeros_like(z)
    harm = 0.0
    for k in range(1, 40):
        term = term * q / (k * k)
        harm += 1.0 / k
        i0 = i0 + term
        tail = tail + term * harm
    return -(np.log(0.5 * z) + EULER_GAMMA) * i0 + tail


def _series_k1(z):
    q = 0.25 * z * z
    term = np.ones_like(z)          # q^k / (k! (k+1)!)
    i1_sum = np.ones_like(z)
    psi_sum = term * (-2 * EULER_GAMMA + 1.0)
    h_k, h_k1 = 0.0, 1.0
    for k in range(1, 40):
        term = term * q / (k * (k + 1))
        h_k += 1.0 / k
        h_k1 += 1.0 / (k + 1)
        i1_sum = i1_sum + term
        psi_sum = psi_sum + term * (-2 * EULER_GAMMA + h_k + h_k1)
    i1 = 0.5 * z * i1_sum
    return 1.0 / z + np.log(0.5 * z) * i1 - 0.25 * z * psi_sum


def _integral_scaled(order, z):
    step = np.minimum(0.125, 0.5 / np.sqrt(z))
    t = np.multiply.outer(step, np.arange(_T_COUNT))
    e = np.exp(-z[:, None] * (np.cosh(t) - 1.0)) * np.cosh(order * t)
    e[:, 0] *= 0.5
    return step * e.sum(axis=1)


def macdonald(order: int, z, scaled: bool = False):
    """Modified Bessel function of the second kind K_0 or K_1 for real z > 0.

    Power series up to z = 2, trapezoid rule on the cosh integral beyond
    (exponentially convergent there). ``scaled=True`` returns exp(z) K(z).
    """
    if order not in (0, 1):
        raise KernelError("only orders 0 and 1 are provided")
    za = np.asarray(z, dtype=float)
    if np.any(~(za > 0)):
        raise KernelError("Macdonald functions need z > 0")
    flat = np.atleast_1d(za).ravel()
    out = np.empty_like(flat)
    small = flat <= _SERIES_MAX
    if np.any(small):
        zs = flat[small]
        val = _series_k0(zs) if order == 0 else _series_k1(zs)
        out[small] = val * np.exp(zs) if scaled else val
    if np.any(~small):
        zl = flat[~small]
        val = _integral_scaled(order, zl)
        out[~small] = val if scaled else val * np.exp(-zl)
    out = out.reshape(np.shape(za))
    return float(out) if np.ndim(za) == 0 else out


# -- free resolvent ----------------------------------------------------------

@dataclass(frozen=True)
class ResolventValue:
    value: float
    tail_bound: float
    J: int


def free_resolvent_kernel(g, p, q, alpha: float, J: int) -> ResolventValue:
    """Mode sum (1/2 pi) sum_{j<=J} chi_j(u) K_0(k_j |x - x'|) chi_j(u') for a layer.

    ``p = (x, u)`` and ``q = (x', u')`` with ``x`` a point of the plane.
    The tail bound uses |chi_j| <= sqrt(2/d), K_0(z) <= sqrt(pi/2z) e^{-z} and
    k_j >= (sqrt(3)/2) kappa_j for j >= 2.
    """
    if g.n != 3:
        raise KernelError("the Macdonald mode sum is the layer (n = 3) resolvent")
    if J < 1:
        raise KernelError("J must be >= 1")
    if not abs(alpha) < g.kappa1:
        raise KernelError("need |alpha| < kappa_1")
    x, u = np.asarray(p[0], float), float(p[1])
    xp, up = np.asarray(q[0], float), float(q[1])
    r = float(np.hypot(*(x - xp)))
    if r == 0.0:
        raise KernelError("kernel is singular at coinciding lateral points")
    j = np.arange(1, J + 1)
    kap = np.pi * j / g.d
    k = np.sqrt(kap**2 - alpha**2)
    chi = lambda s: math.sqrt(2 / g.d) * np.sin(kap * s)
    val = float(np.sum(chi(u) * macdonald(0, k * r) * chi(up)) / (2 * np.pi))
    c = 0.5 * math.sqrt(3) * np.pi / g.d
    cJ = c * (J + 1)
    lead = math.sqrt(np.pi / (2 * cJ * r)) * math.exp(-cJ * r)
    tail = (2 / g.d) / (2 * np.pi) * lead / (1 - math.exp(-c * r))
    return ResolventValue(val, tail, J)


# -- Schur-Holmgren ----------------------------------------------------------

@dataclass
class KernelGrid:
    """Kernel sampled on a node set with quadrature weights (same set in both slots).

    ``diagonal`` records how the i = i' entries were produced: "included"
    (plain sample), "excluded" (set to zero) or "cell" (cell integral of the
    singular kernel divided by the cell weight).
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    diagonal: str = "included"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.weights.size
        if self.values.shape != (n, n):
            raise KernelError("kernel samples must form a square matrix over the node set")
        off = ~np.eye(n, dtype=bool)
        if not np.all(np.isfinite(self.values[off])):
            raise KernelError("non-finite off-diagonal kernel sample")
        if self.diagonal not in ("included", "excluded", "cell"):
            raise KernelError("diagonal must be 'included', 'excluded' or 'cell'")

    def operator_norm(self) -> float:
        """Largest singular value of W^{1/2} K W^{1/2}, the discrete operator norm."""
        s = np.sqrt(self.weights)
        return float(np.linalg.norm(s[:, None] * self.values * s[None, :], 2))


def schur_holmgren(kg: KernelGrid) -> float:
    """Discrete Schur-Holmgren bound: sqrt(max row integral * max column integral)."""
    a = np.abs(kg.values)
    rows = a @ kg.weights
    cols = kg.weights @ a
    return float(math.sqrt(rows.max() * cols.max()))


def log_cell_integral(a: float) -> float:
    """Closed form of the integral of ln|y| over the square [-a, a]^2."""
    return 2 * a * a * (LN2 + 2 * math.log(a) - 3 + math.pi / 2)


def inv_dist_cell_integral(a: float) -> float:
    """Closed form of the integral of 1/|y| over the square [-a, a]^2."""
    return 8 * a * math.log(1 + math.sqrt(2))


def square_grid(half_width: float, n: int):
    """Cell-centred grid on [-s, s]^2: nodes (n^2, 2), weights, half cell size."""
    h = 2 * half_width / n
    c = -half_width + h * (np.arange(n) + 0.5)
    X, Y = np.meshgrid(c, c, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
    return nodes, np.full(n * n, h * h), h / 2


def _pair_distance(nodes):
    diff = nodes[:, None, :] - nodes[None, :, :]
    return diff, np.sqrt(np.sum(diff**2, axis=-1))


def n_alpha_grid(h, half_width: float, n: int, alpha: float, kappa1: float = 1.0) -> KernelGrid:
    """h(x) [K_0(k_1 r)/(2 pi) + ln k_1] h(x') with analytic log-cell diagonal."""
    nodes, w, a = square_grid(half_width, n)
    if a * math.sqrt(2) >= 1:
        raise KernelError("cells too coarse: the log kernel must keep one sign in a cell")
    k1 = math.sqrt(kappa1**2 - alpha**2)
    _, r = _pair_distance(nodes)
    off = ~np.eye(r.shape[0], dtype=bool)
    K = np.zeros_like(r)
    K[off] = macdonald(0, k1 * r[off]) / (2 * np.pi) + math.log(k1)
    # near r = 0: K_0(k r) ~ -ln(k r / 2) - gamma; the ln r part integrates in closed form
    cell = (-log_cell_integral(a) / w[0]) / (2 * np.pi) + (LN2 - EULER_GAMMA - math.log(k1)) / (2 * np.pi)
    np.fill_diagonal(K, cell + math.log(k1))
    hv = h(nodes)
    return KernelGrid(nodes, w, hv[:, None] * K * hv[None, :], "cell")


def n_alpha_mu_grid(h, half_width: float, n: int, alpha: float, mu: int = 0,
                    kappa1: float = 1.0) -> KernelGrid:
    """h(x) n_{alpha,mu}(x, x') h(x'), the gradient kernel -(x-x')_mu k_1 K_1(k_1 r) / (2 pi r).

    The diagonal cell carries the integral of the majorant 1/(2 pi r) over the cell.
    """
    nodes, w, a = square_grid(half_width, n)
    k1 = math.sqrt(kappa1**2 - alpha**2)
    diff, r = _pair_distance(nodes)
    off = ~np.eye(r.shape[0], dtype=bool)
    K = np.zeros_like(r)
    K[off] = -diff[..., mu][off] / r[off] * k1 * macdonald(1, k1 * r[off]) / (2 * np.pi)
    np.fill_diagonal(K, inv_dist_cell_integral(a) / w[0] / (2 * np.pi))
    hv = h(nodes)
    return KernelGrid(nodes, w, hv[:, None] * K * hv[None, :], "cell")


def support_diameter(nodes, hv) -> float:
    pts = nodes[np.abs(hv) > 0]
    if pts.shape[0] < 2:
        return 0.0
    _, r = _pair_distance(pts)
    return float(r.max())


def random_smooth_kernel(rng: np.random.Generator, n: int = 120, modes: int = 6,
                         symmetric: bool = False) -> KernelGrid:
    """Random smooth kernel on [0, 1] sampled at Gauss-Legendre nodes."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    c = rng.normal(size=(modes, modes)) / (1 + np.add.outer(np.arange(modes), np.arange(modes)))
    if symmetric:
        c = 0.5 * (c + c.T)
    P = np.cos(np.pi * np.outer(np.arange(modes), x))
    K = P.T @ c @ P
    return KernelGrid(x[:, None], w, K)


def kernel_report(seed: int = 0, count: int = 50, alpha: float = 0.5) -> list[dict]:
    """Rows comparing the discrete operator norm with the Schur-Holmgren bound."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(count):
        kg = random_smooth_kernel(rng, symmetric=bool(i % 2))
        norm, sh = kg.operator_norm(), schur_holmgren(kg)
        rows.append({"kernel": f"random_{i:02d}", "operator_norm": norm, "sh_bound": sh,
                     "ok": bool(norm <= sh * (1 + 1e-12))})
    h = lambda p: np.clip(1 - np.sum(p**2, axis=-1), 0, None) ** 3
    for mu in (0, 1):
        kg = n_alpha_mu_grid(h, 1.0, 36, alpha, mu)
        norm, sh = kg.operator_norm(), schur_holmgren(kg)
        hv = h(kg.nodes)
        bound = float(np.max(np.abs(hv)) ** 2 * support_diameter(kg.nodes, hv))
        rows.append({"kernel": f"n_alpha_mu[{mu}]", "operator_norm": norm, "sh_bound": sh,
                     "analytic_bound": bound, "ok": bool(norm <= sh * (1 + 1e-12) and sh <= bound)})
    return rows
