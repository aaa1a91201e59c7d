"""Straightening map, metric tensors and transverse modes of the deformed guide.

The deformed strip (n = 2) or layer (n = 3) is the image of the straight
domain R^{n-1} x (0, d) under ``(x, u) -> (x, (1 + lam v(x)) u)``, which moves
the upper wall. The mirrored map ``(x, u) -> (x, (1 + lam v) u - lam d v)``
moves the lower wall instead; both give the same spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .profile import DeformationProfile, neg_sup


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class WaveguideGeometry:
    n: int = 2
    d: float = math.pi
    lam: float = 0.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise GeometryError("ambient dimension n must be 2 or 3")
        if not self.d > 0:
            raise GeometryError("width d must be positive")
        if self.lam < 0:
            raise GeometryError("coupling lambda must be non-negative")

    @property
    def base_dim(self) -> int:
        return self.n - 1

    @property
    def kappa1(self) -> float:
        return math.pi / self.d

    @property
    def threshold(self) -> float:
        """Bottom of the essential spectrum, kappa_1^2."""
        return self.kappa1**2

    def kappa(self, j):
        return np.pi * np.asarray(j) / self.d

    def with_lambda(self, lam: float) -> "WaveguideGeometry":
        return WaveguideGeometry(self.n, self.d, lam)

    def check_profile(self, v: DeformationProfile) -> None:
        """Raise unless the straightening map is a diffeomorphism for ``v``."""
        if v.base_dim != self.base_dim:
            raise GeometryError(
                f"profile base dimension {v.base_dim} does not match n - 1 = {self.base_dim}"
            )
        ns = neg_sup(v)
        if self.lam * ns >= 1.0:
            raise GeometryError(
                f"map is not a diffeomorphism: lambda * ||v_-||_inf = {self.lam} * {ns:.6g} >= 1"
            )


@dataclass(frozen=True)
class TransverseMode:
    j: int
    kappa: float
    d: float

    def chi(self, u):
        u = np.asarray(u, dtype=float)
        return math.sqrt(2.0 / self.d) * np.sin(self.kappa * u)

    def dchi(self, u):
        u = np.asarray(u, dtype=float)
        return math.sqrt(2.0 / self.d) * self.kappa * np.cos(self.kappa * u)


def transverse_mode(g: WaveguideGeometry, j: int) -> TransverseMode:
    if int(j) != j or j < 1:
        raise GeometryError("transverse mode index must be an integer >= 1")
    return TransverseMode(int(j), float(g.kappa(j)), g.d)


# The m -> alpha(m), t -> beta(t) bookkeeping maps that unify strips and layers.

def alpha_map(n: int, m):
    m = np.asarray(m, dtype=float)
    return m if n == 2 else 1.0 / np.log(m)


def beta_map(n: int, t):
    t = np.asarray(t, dtype=float)
    return t if n == 2 else np.log(t)


@dataclass(frozen=True)
class MetricData:
    """Metric quantities sampled at a batch of points.

    ``G`` and ``G_inv`` have shape (..., n, n); ``sqrt_det`` is 1 + lam v;
    ``div`` holds the contractions G^{ij}_{,j} for each row i, shape (..., n).
    """

    G: np.ndarray
    G_inv: np.ndarray
    sqrt_det: np.ndarray
    div: np.ndarray

    @property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.G)


def _offset(g: WaveguideGeometry, u, side: str):
    if side == "upper":
        return np.asarray(u, dtype=float)
    if side == "lower":
        return np.asarray(u, dtype=float) - g.d
    raise GeometryError("side must be 'upper' or 'lower'")


def _profile_fields(g: WaveguideGeometry, v: DeformationProfile, x):
    val, grad, lap = v.derivatives(x)
    if g.n == 2:
        grad = grad[..., None]
    return val, grad, lap


def deformation_map(g: WaveguideGeometry, v: DeformationProfile, x, u, side: str = "upper"):
    """Image of straight-domain points (x, u); returns shape (..., n)."""
    g.check_profile(v)
    val = v(x)
    s = _offset(g, u, side)
    uu = np.asarray(u, dtype=float)
    new_u = (1 + g.lam * val) * s + (uu - s)
    x = np.asarray(x, dtype=float)
    if g.n == 2:
        return np.stack(np.broadcast_arrays(x, new_u), axis=-1)
    new_u = np.broadcast_to(new_u, x.shape[:-1])
    return np.concatenate([x, new_u[..., None]], axis=-1)


def metric(g: WaveguideGeometry, v: DeformationProfile, x, u, side: str = "upper") -> MetricData:
    """Covariant and contravariant metric of the straightening map at (x, u)."""
    val, grad, lap = _profile_fields(g, v, x)
    lam = g.lam
    w = 1.0 + lam * val
    if np.any(w <= 0):
        raise GeometryError("singular metric: 1 + lambda v <= 0 at a sample point")
    s = _offset(g, u, side)
    s, w, val, lap = np.broadcast_arrays(s, w, val, lap)
    grad = np.broadcast_to(grad, s.shape + (g.n - 1,))
    n = g.n
    a = lam * grad * s[..., None]
    G = np.zeros(s.shape + (n, n))
    Gi = np.zeros_like(G)
    G[..., : n - 1, : n - 1] = np.eye(n - 1) + a[..., :, None] * a[..., None, :]
    G[..., : n - 1, n - 1] = a * w[..., None]
    G[..., n - 1, : n - 1] = a * w[..., None]
    G[..., n - 1, n - 1] = w**2
    grad2 = np.sum(grad**2, axis=-1)
    Gi[..., : n - 1, : n - 1] = np.eye(n - 1)
    Gi[..., : n - 1, n - 1] = -a / w[..., None]
    Gi[..., n - 1, : n - 1] = -a / w[..., None]
    Gi[..., n - 1, n - 1] = (1 + lam**2 * grad2 * s**2) / w**2
    div = np.empty(s.shape + (n,))
    div[..., : n - 1] = -lam * grad / w[..., None]
    div[..., n - 1] = -lam * lap * s / w + 3 * lam**2 * grad2 * s / w**2
    return MetricData(G, Gi, w, div)
