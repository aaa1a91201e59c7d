"""Weak-coupling coefficients m1, m2 and the expansions they generate.

Strip (n = 2): ``m_lambda = sqrt(kappa_1^2 - E) = m1 lam + m2 lam^2 + ...``.
Layer (n = 3): ``w = 1 / ln m_lambda = -(m1 lam + m2 lam^2 + ...)``.

``m2`` combines four pieces: a norm term, a double integral of v against the
kernel ``beta(|x - x'|)`` (``|x - x'|`` in the strip, ``ln|x - x'|`` in the
layer), a sum over the closed transverse channels ``k >= 2`` evaluated in
Fourier space, and in the layer a term carrying ``gamma - ln 2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import digamma, polygamma

from .geometry import WaveguideGeometry, alpha_map
from .kernels import macdonald
from .profile import (DeformationProfile, QuadratureSpec, fourier_integral, functionals_basic,
                      gauss_rule, inv_lap_grad, is_zero_mean)

EULER_GAMMA = 0.57721566490153286061
GAMMA_MINUS_LN2 = -0.115931515658412448810
DEFAULT_K = 200


class AsymptoticsError(ValueError):
    pass


@dataclass
class AsymptoticCoefficients:
    m1: float
    m2: float
    m2_terms: dict
    K_used: int
    tail_bound: float
    quad_error_estimate: float
    flagged: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExpansionPrediction:
    n: int
    lam: float
    m_lambda_pred: float | None
    w_pred: float | None
    E_pred: float | None
    exists: bool


def _pref(g: WaveguideGeometry) -> float:
    return g.kappa1**2 / math.pi ** (g.n - 2)


def m1(v: DeformationProfile, g: WaveguideGeometry, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """kappa_1^2 <v> / pi^(n-2)."""
    _check_dims(v, g)
    x, w = gauss_rule(v, quad)
    return _pref(g) * float(np.sum(w * v(x)))


def _check_dims(v, g):
    if v.base_dim != g.base_dim:
        raise AsymptoticsError(f"profile on R^{v.base_dim} used with n = {g.n}")


# -- beta double integral ------------------------------------------------------

def _strip_beta_direct(v: DeformationProfile, nodes: int) -> float:
    """2 int_x v(x) int_{x' < x} v(x') (x - x') dx' dx on the support, Gauss on each leg."""
    s = v.scale_length if v.kind != "sampled" else None
    if s is None:
        xs = v._grid() * v.sigma
        lo, hi = xs[0], xs[-1]
    else:
        lo, hi = -s, s
    t, wt = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (hi - lo) * (t + 1) + lo
    wx = 0.5 * (hi - lo) * wt
    # inner nodes on [lo, x] for every outer x
    half = 0.5 * (x - lo)
    xp = half[:, None] * (t[None, :] + 1) + lo
    wp = half[:, None] * wt[None, :]
    inner = np.sum(wp * v(xp) * (x[:, None] - xp), axis=1)
    return float(2 * np.sum(wx * v(x) * inner))


def _exit_distance(x, e, s):
    """Distance from x (|x| < s) along unit vectors e to the circle of radius s."""
    xe = x @ e if e.ndim == 1 else np.einsum("...k,...k->...", x, e)
    return -xe + np.sqrt(xe * xe - np.sum(x * x, axis=-1) + s * s)


def polar_convolution(v: DeformationProfile, points, kernel, n_rho: int = 48, n_theta: int = 96,
                      power: int = 3) -> np.ndarray:
    """``int v(x') k(|x - x'|) dx'`` over the disk support for planar points inside it.

    Local polar coordinates about each point: the Jacobian rho removes a log
    singularity of k; the substitution rho = R t^power smooths the rest.
    """
    s = v.scale_length
    pts = np.atleast_2d(np.asarray(points, float))
    if np.any(np.sum(pts**2, axis=-1) >= s * s):
        raise AsymptoticsError("polar convolution points must lie inside the support disk")
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    E = np.stack([np.cos(th), np.sin(th)], axis=-1)
    R = _exit_distance(pts[:, None, :], E[None, :, :], s)            # (P, T)
    t, wt = np.polynomial.legendre.leggauss(n_rho)
    t, wt = 0.5 * (t + 1), 0.5 * wt
    rho = R[..., None] * t**power                                      # (P, T, Q)
    drho = R[..., None] * power * t ** (power - 1) * wt
    Y = pts[:, None, None, :] + rho[..., None] * E[None, :, None, :]
    vals = v(Y) * kernel(rho) * rho * drho
    return np.sum(vals, axis=(1, 2)) * (2 * np.pi / n_theta)


def _layer_beta_direct(v: DeformationProfile, quad: QuadratureSpec, n_rho=48, n_theta=96) -> float:
    x, w = gauss_rule(v, quad)
    inside = np.sum(x**2, axis=-1) < v.scale_length**2
    phi = polar_convolution(v, x[inside], np.log, n_rho, n_theta)
    return float(np.sum(w[inside] * v(x[inside]) * phi))


def radial_log_integral(v: DeformationProfile, nodes: int = 64) -> float:
    """(2 pi)^2 int int V(r) V(r') r r' ln max(r, r') dr dr' for radial profiles."""
    if not v.is_radial:
        raise AsymptoticsError("radial formula needs a radial profile")
    s = v.scale_length
    t, wt = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * s * (t + 1)
    wr = 0.5 * s * wt
    prof = lambda rr: v(np.stack([rr, np.zeros_like(rr)], axis=-1))
    # ordered pairs r' < r, doubled: kernel ln r
    rp = 0.5 * r[:, None] * (t[None, :] + 1)
    wp = 0.5 * r[:, None] * wt[None, :]
    inner = np.sum(wp * prof(rp) * rp, axis=1)
    return float(2 * (2 * np.pi) ** 2 * np.sum(wr * prof(r) * r * np.log(r) * inner))


def beta_direct(v: DeformationProfile, g: WaveguideGeometry, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Singularity-aware product quadrature for I_beta (valid for any mean)."""
    _check_dims(v, g)
    if g.n == 2:
        return _strip_beta_direct(v, quad.gauss_nodes)
    if v.kind == "sampled":
        raise AsymptoticsError("sampled profiles are one-dimensional")
    return _layer_beta_direct(v, quad)


def beta_fourier(v: DeformationProfile, g: WaveguideGeometry, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """I_beta = -2 pi^(n-2) ||grad (Lap)^-1 v||^2, valid for zero-mean v."""
    _check_dims(v, g)
    return -2 * math.pi ** (g.n - 2) * inv_lap_grad(v, quad)


@dataclass(frozen=True)
class BetaIntegral:
    value: float
    path: str
    cross_check: float | None = None

    @property
    def discrepancy(self) -> float | None:
        if self.cross_check is None:
            return None
        if self.value == 0 and self.cross_check == 0:
            return 0.0
        return abs(self.value - self.cross_check) / max(abs(self.value), abs(self.cross_check))


def beta_double_integral(v: DeformationProfile, g: WaveguideGeometry,
                         quad: QuadratureSpec = QuadratureSpec(), cross_check: bool = True) -> BetaIntegral:
    """``int int v(x) beta(|x - x'|) v(x') dx dx'`` with the fast Fourier path for zero mean."""
    _check_dims(v, g)
    if v.amplitude == 0:
        return BetaIntegral(0.0, "zero", 0.0)
    if is_zero_mean(v, quad):
        val = beta_fourier(v, g, quad)
        other = beta_direct(v, g, quad) if cross_check else None
        return BetaIntegral(val, "fourier", other)
    return BetaIntegral(beta_direct(v, g, quad), "direct")


# -- closed-channel sum --------------------------------------------------------

def _channel_sum(a, K: int):
    """sum_{k=2}^K 1/(k^2 + a) for a >= -1 via digamma differences."""
    a = np.asarray(a, float)
    b = np.sqrt(-a + 0j)                    # k^2 + a = (k - b)(k + b)
    small = np.abs(b) < 1e-2
    out = np.empty(a.shape)
    bb = np.where(small, 1.0, b)
    val = (digamma(K + 1 - bb) - digamma(2 - bb) - digamma(K + 1 + bb) + digamma(2 + bb)) / (2 * bb)
    out[...] = val.real
    if np.any(small):
        b2 = (b[small] ** 2).real
        s2 = polygamma(1, 2) - polygamma(1, K + 1)
        s4 = (polygamma(3, 2) - polygamma(3, K + 1)) / 6
        s6 = (polygamma(5, 2) - polygamma(5, K + 1)) / 120
        out[small] = s2 + b2 * (s4 + b2 * s6)
    return out


def tail_sum(K: int) -> float:
    """sum_{k > K} 1/(k^2 - 1) = (1/K + 1/(K+1)) / 2 (telescoping)."""
    return 0.5 * (1.0 / K + 1.0 / (K + 1))


def resolvent_sum(v: DeformationProfile, g: WaveguideGeometry, K: int = DEFAULT_K,
                  quad: QuadratureSpec = QuadratureSpec()) -> tuple[float, float]:
    """Closed-channel term T and a rigorous bound on the channels k > K it omits.

    With a = |xi|^2 / kappa_1^2 - 1 each channel contributes a / (k^2 + a),
    and |a| / (k^2 + a) <= (a + 2) / (k^2 - 1) for k >= 2; the factor 2 in T
    carries into the bound.
    """
    if K < 2:
        raise AsymptoticsError("mode-sum truncation K must be >= 2")
    _check_dims(v, g)
    if v.amplitude == 0:
        return 0.0, 0.0
    k1sq = g.kappa1**2
    T = 2 * fourier_integral(v, lambda xi2: (xi2 / k1sq - 1) * _channel_sum(xi2 / k1sq - 1, K), quad)
    _, l2, grad_l2, _ = functionals_basic(v, quad)
    bound = 2 * (grad_l2 / k1sq + l2) * tail_sum(K)
    return T, bound


# -- m2 ------------------------------------------------------------------------

def _m2_bracket(v, g, K, quad):
    _, l2, _, _ = functionals_basic(v, quad)
    mean = float(np.sum(gauss_rule(v, quad)[1] * v(gauss_rule(v, quad)[0])))
    beta = beta_double_integral(v, g, quad)
    T, tail = resolvent_sum(v, g, K, quad)
    terms = {
        "t_norm": 3 * l2,
        "t_beta": _pref(g) * beta.value,
        "t_resolvent": T,
        "t_euler": (g.kappa1**2 / math.pi) * GAMMA_MINUS_LN2 * mean**2 if g.n == 3 else 0.0,
    }
    return terms, tail, beta, mean


def m2(v: DeformationProfile, g: WaveguideGeometry, K: int = DEFAULT_K,
       quad: QuadratureSpec = QuadratureSpec(), tail_tolerance: float = 0.05,
       estimate_error: bool = True) -> AsymptoticCoefficients:
    """Second-order coefficient with its term breakdown and error diagnostics.

    The quadrature error estimate compares against a run at half the Fourier
    resolution and, when both beta paths apply, includes their disagreement.
    ``tail_tolerance`` is relative: the result is flagged when the dropped-tail
    bound exceeds ``tail_tolerance * |m2|``.
    """
    _check_dims(v, g)
    terms, tail, beta, mean = _m2_bracket(v, g, K, quad)
    pref = _pref(g)
    total = terms["t_norm"] + terms["t_beta"] + terms["t_resolvent"] + terms["t_euler"]
    val = -pref * total
    qerr = 0.0
    notes = []
    if estimate_error and v.amplitude != 0:
        coarse = QuadratureSpec(quad.gauss_nodes, max(64, quad.nodes_per_diameter // 2),
                                quad.pad_factor, quad.mean_tol)
        t2, _, _, _ = _m2_bracket(v, g, K, coarse)
        qerr = pref * abs(sum(t2.values()) - total)
        if beta.cross_check is not None:
            qerr += pref * pref * abs(beta.value - beta.cross_check)
    flagged = pref * tail > tail_tolerance * abs(val)
    if flagged:
        notes.append(f"tail bound {pref * tail:.3e} exceeds {tail_tolerance:.1e} x |m2|")
    return AsymptoticCoefficients(pref * mean, val, terms, K, pref * tail, qerr, flagged, notes)


def predict(v: DeformationProfile, g: WaveguideGeometry, lam: float,
            coeffs: AsymptoticCoefficients | None = None) -> ExpansionPrediction:
    if lam < 0:
        raise AsymptoticsError("lambda must be non-negative")
    c = coeffs if coeffs is not None else m2(v, g, estimate_error=False)
    return predict_from(g, lam, c.m1, c.m2)


def predict_from(g: WaveguideGeometry, lam: float, c1: float, c2: float) -> ExpansionPrediction:
    s = c1 * lam + c2 * lam * lam
    if not s > 0:
        return ExpansionPrediction(g.n, lam, None, None, None, False)
    if g.n == 2:
        m = s
        return ExpansionPrediction(2, lam, m, None, g.threshold - m * m, True)
    m = math.exp(-1.0 / s)
    return ExpansionPrediction(3, lam, m, -s, g.threshold - m * m, True)


# -- psi0 ------------------------------------------------------------------------

def psi0_eval(f: DeformationProfile, g: WaveguideGeometry, m: float, x, u=None,
              quad: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """``-alpha(m) (-Lap' + m^2)^{-1} f`` at lateral points x, times chi_1(u) if u is given.

    The resolvent is applied through its explicit Green's function
    (exp(-m|x|)/(2m) on the line, K_0(m|x|)/(2 pi) in the plane), which is
    accurate for the small m where periodic FFT grids fail.
    """
    if not m > 0:
        raise AsymptoticsError("psi0 needs m > 0 (the resolvent is singular at threshold)")
    _check_dims(f, g)
    alpha = float(alpha_map(g.n, m))
    x = np.asarray(x, float)
    if f.amplitude == 0:
        field_ = np.zeros(x.shape if g.n == 2 else x.shape[:-1])
    elif g.n == 2:
        field_ = -alpha * _line_green(f, m, x, quad.gauss_nodes)
    else:
        field_ = -alpha * _plane_green(f, m, x, quad)
    if u is None:
        return field_
    chi = math.sqrt(2 / g.d) * np.sin(g.kappa1 * np.asarray(u, float))
    return np.multiply.outer(field_, chi)


def _line_green(f, m, x, nodes):
    s = f.scale_length
    t, wt = np.polynomial.legendre.leggauss(nodes)
    out = np.empty(x.shape)
    flat = x.ravel()
    res = np.empty(flat.size)
    for i, xi in enumerate(flat):
        tot = 0.0
        cut = min(max(xi, -s), s)
        for lo, hi in ((-s, cut), (cut, s)):
            if hi <= lo:
                continue
            y = 0.5 * (hi - lo) * (t + 1) + lo
            wy = 0.5 * (hi - lo) * wt
            tot += np.sum(wy * f(y) * np.exp(-m * np.abs(xi - y)))
        res[i] = tot / (2 * m)
    out[...] = res.reshape(x.shape)
    return out


def _plane_green(f, m, x, quad):
    s = f.scale_length
    kern = lambda r: macdonald(0, m * np.maximum(r, 1e-300)) / (2 * np.pi)
    pts = np.atleast_2d(x).reshape(-1, 2)
    inside = np.sum(pts**2, axis=-1) < s * s
    res = np.empty(pts.shape[0])
    if np.any(inside):
        res[inside] = polar_convolution(f, pts[inside], kern)
    if np.any(~inside):
        y, wy = gauss_rule(f, quad)
        r = np.linalg.norm(pts[~inside][:, None, :] - y[None, :, :], axis=-1)
        res[~inside] = (macdonald(0, m * r) / (2 * np.pi)) @ (wy * f(y))
    return res.reshape(np.shape(x)[:-1])


def psi0_expansion(f: DeformationProfile, g: WaveguideGeometry, x, ms=(1e-2, 1e-3, 1e-4),
                   quad: QuadratureSpec = QuadratureSpec()) -> tuple[float, float]:
    """Least-squares fit psi0(x; m) ~ c0 + c1 alpha(m) over the given m values."""
    ms = np.asarray(ms, float)
    vals = np.array([float(np.ravel(psi0_eval(f, g, m, x, quad=quad))[0]) for m in ms])
    A = np.stack([np.ones_like(ms), alpha_map(g.n, ms)], axis=-1)
    (c0, c1), *_ = np.linalg.lstsq(A, vals, rcond=None)
    return float(c0), float(c1)


def to_json(v: DeformationProfile, g: WaveguideGeometry, lambdas, K: int = DEFAULT_K,
            coeffs: AsymptoticCoefficients | None = None) -> dict:
    """Coefficients and per-lambda predictions as a JSON-ready mapping."""
    c = coeffs if coeffs is not None else m2(v, g, K)
    preds = []
    for lam in sorted(lambdas):
        p = predict_from(g, lam, c.m1, c.m2)
        preds.append({"lambda": lam, "E": p.E_pred, "exists": p.exists,
                      "m_lambda": p.m_lambda_pred, "w": p.w_pred})
    return {"m1": c.m1, "m2": c.m2, "m2_terms": c.m2_terms, "K": c.K_used,
            "tail_bound": c.tail_bound, "quad_error_estimate": c.quad_error_estimate,
            "flagged": c.flagged, "notes": c.notes, "predictions": preds}
