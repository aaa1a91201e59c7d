"""Compactly supported deformation profiles and their scalar functionals.

A profile ``v`` lives on the transverse-free coordinates ``x`` in R^1 (strips)
or R^2 (layers). Analytic families are polynomial in the scaled coordinate
``y = x / (sigma * b)`` and vanish identically for ``|y| >= 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np
from numpy.polynomial import Polynomial

KINDS = ("poly_bump", "dipole", "radial_poly_bump", "radial_dipole", "sampled")
_RADIAL = ("radial_poly_bump", "radial_dipole")

MEAN_TOL = 1e-9


class ProfileError(ValueError):
    pass


class UndefinedFunctional(ProfileError):
    """Raised when ``inv_lap_grad`` is requested for a profile with nonzero mean."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Resolution knobs for profile integrals.

    ``gauss_nodes`` Gauss-Legendre nodes per polynomial piece (exact for the
    analytic families), ``nodes_per_diameter`` uniform samples across the
    support for FFT functionals, ``pad_factor`` the FFT box length in units of
    the support diameter.
    """

    gauss_nodes: int = 64
    nodes_per_diameter: int = 256
    pad_factor: float = 8.0
    mean_tol: float = MEAN_TOL

    def __post_init__(self):
        if self.nodes_per_diameter < 64:
            raise ProfileError("nodes_per_diameter must be >= 64")
        if self.pad_factor < 2:
            raise ProfileError("pad_factor must be >= 2")


@dataclass(frozen=True)
class ProfileFunctionals:
    mean: float
    l2: float
    grad_l2: float
    lap_l2: float
    inv_lap_grad: float | None
    neg_sup: float

    @property
    def zero_mean(self) -> bool:
        return self.inv_lap_grad is not None


@dataclass(frozen=True, eq=False)
class DeformationProfile:
    """Deformation function ``v`` (or a dilated family member ``V(x / sigma)``).

    ``b`` is the support radius of the undilated shape; the actual support
    radius is ``sigma * b``. Sampled profiles carry uniform samples with
    spacing ``h`` starting at ``x0`` (1D only).
    """

    kind: str
    base_dim: int = 1
    amplitude: float = 1.0
    b: float = 1.0
    exponent: int = 3
    sigma: float = 1.0
    samples: np.ndarray | None = field(default=None, repr=False)
    h: float | None = None
    x0: float | None = None
    zero_outside: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProfileError(f"unknown profile kind {self.kind!r}")
        if self.base_dim not in (1, 2):
            raise ProfileError("base_dim must be 1 or 2")
        if self.kind in _RADIAL and self.base_dim != 2:
            raise ProfileError(f"{self.kind} requires base_dim=2")
        if self.kind in ("poly_bump", "dipole") and self.base_dim != 1:
            raise ProfileError(f"{self.kind} requires base_dim=1")
        if self.sigma <= 0 or not math.isfinite(self.sigma):
            raise ProfileError("sigma must be positive")
        if self.kind == "sampled":
            if self.base_dim != 1:
                raise ProfileError("sampled profiles are one-dimensional")
            if self.samples is None or self.h is None or self.h <= 0:
                raise ProfileError("sampled profile needs samples and h > 0")
            vals = np.asarray(self.samples, dtype=float)
            if vals.ndim != 1 or vals.size < 3:
                raise ProfileError("sampled profile needs a 1D array of >= 3 values")
            object.__setattr__(self, "samples", vals)
            if self.x0 is None:
                object.__setattr__(self, "x0", -0.5 * (vals.size - 1) * self.h)
        else:
            if self.b <= 0:
                raise ProfileError("support radius b must be positive")
            pmin = 4 if self.kind == "radial_dipole" else 3
            if int(self.exponent) != self.exponent or self.exponent < pmin:
                raise ProfileError(f"{self.kind} needs integer exponent >= {pmin}")

    # -- shape ---------------------------------------------------------------

    @property
    def scale_length(self) -> float:
        return self.sigma * self.b

    @property
    def support_radius(self) -> float:
        if self.kind == "sampled":
            x = self._grid()
            nz = np.nonzero(self.samples)[0]
            if nz.size == 0:
                return 0.0
            return float(max(abs(x[nz[0]]), abs(x[nz[-1]]))) * self.sigma
        return self.scale_length

    @property
    def is_radial(self) -> bool:
        return self.kind in _RADIAL

    def shape_poly(self) -> Polynomial:
        """Polynomial ``P`` with v(x) = amplitude * P(|x| / (sigma b)) inside the support."""
        p = int(self.exponent)
        bump = Polynomial([1.0, 0.0, -1.0]) ** p
        if self.kind in ("poly_bump", "radial_poly_bump"):
            return bump
        if self.kind == "dipole":
            return bump.deriv()
        if self.kind == "radial_dipole":
            d1 = bump.deriv()
            return d1.deriv() + d1 // Polynomial([0.0, 1.0])
        raise ProfileError("sampled profiles have no shape polynomial")

    def _grid(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.samples.size)

    # -- evaluation ----------------------------------------------------------

    def __call__(self, x) -> np.ndarray:
        return self.derivatives(x)[0]

    def derivatives(self, x):
        """Return ``(v, grad v, lap v)`` at points ``x``.

        For ``base_dim == 1`` ``x`` is an array of scalars and ``grad v`` has
        the same shape. For ``base_dim == 2`` ``x`` has trailing axis of
        length 2 and ``grad v`` keeps it.
        """
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ProfileError("profile evaluated at non-finite point")
        if self.kind == "sampled":
            return self._sampled_derivatives(x)
        s = self.scale_length
        amp = self.amplitude
        P = self.shape_poly()
        dP = P.deriv()
        d2P = dP.deriv()
        if self.base_dim == 1:
            y = x / s
            inside = np.abs(y) < 1.0
            yc = np.where(inside, y, 0.0)
            v = np.where(inside, amp * P(yc), 0.0)
            g = np.where(inside, amp * dP(yc) / s, 0.0)
            lap = np.where(inside, amp * d2P(yc) / s**2, 0.0)
            return v, g, lap
        if x.shape[-1] != 2:
            raise ProfileError("2D profile needs points with a trailing axis of length 2")
        r = np.hypot(x[..., 0], x[..., 1]) / s
        inside = r < 1.0
        rc = np.where(inside, r, 0.0)
        dP_over_r = dP // Polynomial([0.0, 1.0])
        v = np.where(inside, amp * P(rc), 0.0)
        radial = np.where(inside, amp * dP_over_r(rc) / s**2, 0.0)
        g = radial[..., None] * x
        lap = np.where(inside, amp * (d2P(rc) + dP_over_r(rc)) / s**2, 0.0)
        return v, g, lap

    def _sampled_derivatives(self, x):
        xs = self._grid() * self.sigma
        lo, hi = xs[0], xs[-1]
        outside = (x < lo - 1e-12) | (x > hi + 1e-12)
        if np.any(outside) and not self.zero_outside:
            raise ProfileError(
                f"sampled profile evaluated outside its grid [{lo}, {hi}] "
                "without zero_outside support flag"
            )
        vals = self.samples
        hs = self.h * self.sigma
        d1 = np.gradient(vals, hs)
        d2 = np.zeros_like(vals)
        d2[1:-1] = (vals[2:] - 2 * vals[1:-1] + vals[:-2]) / hs**2
        d2[0], d2[-1] = d2[1], d2[-2]
        interp = lambda f: np.interp(x, xs, f, left=0.0, right=0.0)
        return interp(vals), interp(d1), interp(d2)

    # -- derived profiles ----------------------------------------------------

    def negated(self) -> "DeformationProfile":
        return self.scaled_amplitude(-1.0)

    def scaled_amplitude(self, c: float) -> "DeformationProfile":
        if self.kind == "sampled":
            return replace(self, samples=c * self.samples)
        return replace(self, amplitude=c * self.amplitude)

    def reflected(self) -> "DeformationProfile":
        """Profile ``x -> v(-x)``."""
        if self.kind == "sampled":
            n = self.samples.size
            return replace(self, samples=self.samples[::-1].copy(), x0=-(self.x0 + self.h * (n - 1)))
        if self.kind == "dipole":
            return replace(self, amplitude=-self.amplitude)
        return self

    def to_config(self) -> dict[str, Any]:
        if self.kind == "sampled":
            out = {"kind": "sampled", "h": self.h, "x0": self.x0, "values": self.samples.tolist()}
            if self.sigma != 1.0:
                out["sigma"] = self.sigma
            if self.zero_outside:
                out["zero_outside"] = True
            return out
        return {
            "kind": self.kind,
            "b": self.b,
            "p": self.exponent,
            "amp": self.amplitude,
            "sigma": self.sigma,
        }


# -- constructors ------------------------------------------------------------

def poly_bump(b=1.0, p=3, amp=1.0, sigma=1.0) -> DeformationProfile:
    return DeformationProfile("poly_bump", 1, amp, b, p, sigma)


def dipole(b=1.0, p=3, amp=1.0, sigma=1.0) -> DeformationProfile:
    """Zero-mean strip profile ``amp * W'(x / (sigma b))`` with ``W = (1 - y^2)^p``."""
    return DeformationProfile("dipole", 1, amp, b, p, sigma)


def radial_poly_bump(b=1.0, p=3, amp=1.0, sigma=1.0) -> DeformationProfile:
    return DeformationProfile("radial_poly_bump", 2, amp, b, p, sigma)


def radial_dipole(b=1.0, p=4, amp=1.0, sigma=1.0) -> DeformationProfile:
    """Zero-mean layer profile: the planar Laplacian of a radial bump (p >= 4)."""
    return DeformationProfile("radial_dipole", 2, amp, b, p, sigma)


def sampled(values, h, x0=None, zero_outside=False, sigma=1.0) -> DeformationProfile:
    return DeformationProfile(
        "sampled", 1, 1.0, 1.0, 3, sigma, np.asarray(values, float), h, x0, zero_outside
    )


def from_config(cfg: Mapping[str, Any], base_dim: int | None = None) -> DeformationProfile:
    """Build a profile from its run-config mapping."""
    if "kind" not in cfg:
        raise ProfileError("profile config needs a 'kind'")
    kind = cfg["kind"]
    known = {"kind", "b", "p", "amp", "sigma", "h", "values", "x0", "zero_outside"}
    extra = set(cfg) - known
    if extra:
        raise ProfileError(f"unknown profile keys: {sorted(extra)}")
    if kind == "sampled":
        if "values" not in cfg or "h" not in cfg:
            raise ProfileError("sampled profile needs 'h' and 'values'")
        prof = sampled(cfg["values"], float(cfg["h"]), cfg.get("x0"),
                       bool(cfg.get("zero_outside", False)), float(cfg.get("sigma", 1.0)))
    else:
        dim = 2 if kind in _RADIAL else 1
        default_p = 4 if kind == "radial_dipole" else 3
        prof = DeformationProfile(
            kind, dim, float(cfg.get("amp", 1.0)), float(cfg.get("b", 1.0)),
            int(cfg.get("p", default_p)), float(cfg.get("sigma", 1.0)),
        )
    if base_dim is not None and prof.base_dim != base_dim:
        raise ProfileError(
            f"profile {kind!r} has base dimension {prof.base_dim}, geometry needs {base_dim}"
        )
    return prof


def scale(p: DeformationProfile, sigma: float) -> DeformationProfile:
    """Dilation ``x -> p(x / sigma)``."""
    if not sigma > 0:
        raise ProfileError("dilation sigma must be positive")
    return replace(p, sigma=p.sigma * sigma)


def eval_profile(p: DeformationProfile, x) -> np.ndarray:
    return p(x)


# -- quadrature --------------------------------------------------------------

def gauss_rule(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()):
    """Nodes and weights integrating polynomial pieces of ``p`` exactly.

    Returns ``(x, w)`` with ``x`` of shape (N,) in 1D or (N, 2) in 2D. The 2D
    rule is polar (Gauss in r, trapezoid in angle) and exact for radial
    polynomials.
    """
    if p.kind == "sampled":
        x = p._grid() * p.sigma
        w = np.full(x.size, p.h * p.sigma)
        w[0] = w[-1] = 0.5 * p.h * p.sigma
        return x, w
    t, wt = np.polynomial.legendre.leggauss(quad.gauss_nodes)
    s = p.scale_length
    if p.base_dim == 1:
        return s * t, s * wt
    r = 0.5 * s * (t + 1.0)
    wr = 0.5 * s * wt * r
    nphi = 8
    phi = 2 * np.pi * np.arange(nphi) / nphi
    X = np.stack([np.outer(r, np.cos(phi)), np.outer(r, np.sin(phi))], axis=-1).reshape(-1, 2)
    W = np.outer(wr, np.full(nphi, 2 * np.pi / nphi)).ravel()
    return X, W


def fft_grid(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()):
    """Uniform padded sampling grid used by the Fourier functionals.

    Returns ``(h, n)``: spacing and number of points per axis. The grid is
    centred on the origin and spans ``pad_factor`` support diameters.
    """
    if p.kind == "sampled":
        h = p.h * p.sigma
        xs = p._grid() * p.sigma
        extent = 2 * max(abs(xs[0]), abs(xs[-1]))
        n = int(2 ** math.ceil(math.log2(max(quad.pad_factor * extent / h, 64))))
        return h, n
    diam = 2 * p.scale_length
    h = diam / quad.nodes_per_diameter
    n = int(2 ** math.ceil(math.log2(quad.pad_factor * quad.nodes_per_diameter)))
    return h, n


def fourier_samples(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()):
    """Return ``(xi_sq, vhat_sq, cell)`` on the FFT lattice.

    ``vhat_sq`` is ``|v^(xi)|^2`` with the convention v^(xi) = int v e^{-i xi x} dx,
    ``cell`` the lattice cell volume so that
    ``sum(cell * f) / (2 pi)^(n-1)`` approximates ``(2 pi)^-(n-1) int f dxi``.
    """
    h, n = fft_grid(p, quad)
    x = (np.arange(n) - n // 2) * h
    if p.base_dim == 1:
        vals = p(x) if p.kind != "sampled" else np.interp(x, p._grid() * p.sigma, p.samples, 0.0, 0.0)
        vhat = h * np.fft.fft(np.fft.ifftshift(vals))
        xi = 2 * np.pi * np.fft.fftfreq(n, d=h)
        return xi**2, np.abs(vhat) ** 2, 2 * np.pi / (n * h)
    X, Y = np.meshgrid(x, x, indexing="ij")
    vals = p(np.stack([X, Y], axis=-1))
    vhat = h * h * np.fft.fft2(np.fft.ifftshift(vals))
    xi = 2 * np.pi * np.fft.fftfreq(n, d=h)
    XI, ETA = np.meshgrid(xi, xi, indexing="ij")
    return XI**2 + ETA**2, np.abs(vhat) ** 2, (2 * np.pi / (n * h)) ** 2


def first_moment(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    x, w = gauss_rule(p, quad)
    v = p(x)
    if p.base_dim == 1:
        return np.array([np.sum(w * x * v)])
    return np.sum((w * v)[:, None] * x, axis=0)


def fourier_integral(p: DeformationProfile, weight, quad: QuadratureSpec = QuadratureSpec(),
                     zero_limit: float | None = None) -> float:
    """``(2 pi)^-(n-1) int |v^|^2 weight(|xi|^2) dxi`` on the FFT lattice.

    ``weight`` receives squared lattice frequencies. When ``zero_limit`` is
    given, the xi = 0 node takes that value (the limit of the full integrand)
    instead of calling ``weight`` there.
    """
    xi_sq, vh2, cell = fourier_samples(p, quad)
    flat_xi = xi_sq.ravel()
    flat_vh = vh2.ravel()
    if zero_limit is None:
        total = np.sum(flat_vh * weight(flat_xi))
    else:
        nz = flat_xi > 0
        total = np.sum(flat_vh[nz] * weight(flat_xi[nz])) + zero_limit
    return float(total * cell / (2 * np.pi) ** p.base_dim)


def inv_lap_grad(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """``||grad (Lap)^-1 v||^2`` for a zero-mean profile, computed in Fourier space."""
    if not is_zero_mean(p, quad):
        raise UndefinedFunctional(
            f"||grad (Lap)^-1 v||^2 undefined for nonzero mean <v> = {mean_value(p, quad):.3e}"
        )
    # |v^(xi)|^2 / |xi|^2 -> |M . xi_hat|^2 at the origin; angular average in 2D
    M = first_moment(p, quad)
    limit = float(M @ M) / p.base_dim
    return fourier_integral(p, lambda k2: 1.0 / k2, quad, zero_limit=limit)


def mean_value(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()) -> float:
    x, w = gauss_rule(p, quad)
    return float(np.sum(w * p(x)))


def is_zero_mean(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()) -> bool:
    """``|<v>| <= mean_tol * <|v|>``."""
    x, w = gauss_rule(p, quad)
    v = p(x)
    return abs(np.sum(w * v)) <= quad.mean_tol * np.sum(w * np.abs(v))


def functionals_basic(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()):
    x, w = gauss_rule(p, quad)
    v, g, lap = p.derivatives(x)
    g2 = g**2 if p.base_dim == 1 else np.sum(g**2, axis=-1)
    return (float(np.sum(w * v)), float(np.sum(w * v * v)), float(np.sum(w * g2)),
            float(np.sum(w * lap * lap)))


def neg_sup(p: DeformationProfile) -> float:
    """``||v_-||_inf`` with ``v_- = max(0, -v)``."""
    if p.kind == "sampled":
        return float(max(0.0, -p.samples.min()))
    P = p.amplitude * p.shape_poly()
    crit = [r.real for r in P.deriv().roots() if abs(r.imag) < 1e-12 and -1 <= r.real <= 1]
    cand = np.array([-1.0, 0.0, 1.0] + crit)
    return float(max(0.0, -np.min(P(cand))))


def functionals(p: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()) -> ProfileFunctionals:
    mean, l2, grad_l2, lap_l2 = functionals_basic(p, quad)
    ilg = inv_lap_grad(p, quad) if is_zero_mean(p, quad) else None
    return ProfileFunctionals(mean, l2, grad_l2, lap_l2, ilg, neg_sup(p))
