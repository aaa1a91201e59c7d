"""Independent checks: expansion coefficients regressed from solver data and cross-module identities."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import beta_direct, m2 as m2_coefficients
from .direct_solver import ConvergenceError, ConvergenceResult, SpectralResult, convergence_study
from .geometry import WaveguideGeometry
from .profile import DeformationProfile, QuadratureSpec, inv_lap_grad, is_zero_mean

MAX_CONDITION = 1e8


class OracleError(ValueError):
    pass


@dataclass
class ExpansionFit:
    lambdas: list
    observed: list
    coefficients: tuple
    covariance: np.ndarray = field(repr=False)
    residual_rms: float
    condition_estimate: float

    @property
    def m1_fit(self) -> float:
        return self.coefficients[0]

    @property
    def m2_fit(self) -> float:
        return self.coefficients[1]

    @property
    def m3_fit(self) -> float:
        return self.coefficients[2]

    @property
    def stderr(self) -> tuple:
        return tuple(float(s) for s in np.sqrt(np.maximum(np.diag(self.covariance), 0)))

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "observed": list(self.observed),
                "coefficients": list(self.coefficients), "stderr": list(self.stderr),
                "residual_rms": self.residual_rms, "condition_estimate": self.condition_estimate}


def fit_series(lambdas, observed) -> ExpansionFit:
    """Least squares ``observed ~ c1 lam + c2 lam^2 + c3 lam^3`` through the origin."""
    lam = np.asarray(lambdas, float)
    y = np.asarray(observed, float)
    if lam.size < 4 or lam.size != y.size:
        raise OracleError("need at least 4 (lambda, observed) pairs")
    if np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
        raise OracleError("lambdas must be positive and strictly increasing")
    if not np.all(np.isfinite(y)):
        raise OracleError("non-finite observation")
    A = np.stack([lam, lam**2, lam**3], axis=1)
    cond = float(np.linalg.cond(A))
    if cond > MAX_CONDITION:
        raise OracleError(f"design matrix condition {cond:.3g} > {MAX_CONDITION:.0e}: widen the lambda spread")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    dof = lam.size - 3
    s2 = float(r @ r / dof) if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(A.T @ A)
    return ExpansionFit(lam.tolist(), y.tolist(), tuple(float(c) for c in coef), cov,
                        float(math.sqrt(np.mean(r**2))), cond)


def observable(r: SpectralResult, n: int) -> float:
    """m_lambda in strips (signed, so virtual states count), -w in layers."""
    if n == 2:
        return r.m_lambda
    if r.w is None:
        raise OracleError(f"lambda = {r.lam}: no w available for the layer fit")
    return -r.w


def fit_expansion(points, n: int) -> ExpansionFit:
    """Fit the weak-coupling ansatz to ``[(lam, SpectralResult | ConvergenceResult), ...]``."""
    lams, obs = [], []
    for lam, r in sorted(points, key=lambda t: t[0]):
        if isinstance(r, Exception):
            raise OracleError(f"lambda = {lam}: {r}")
        if isinstance(r, ConvergenceResult):
            r = r.result
        if r is None or not r.converged:
            raise OracleError(f"lambda = {lam}: solver result missing or not converged")
        lams.append(float(lam))
        obs.append(observable(r, n))
    return fit_series(lams, obs)


def beta_identity_check(V: DeformationProfile, g: WaveguideGeometry,
                        quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Relative gap between the direct beta-kernel integral and -2 pi^{n-2} ||grad (Lap)^-1 V||^2."""
    if V.amplitude == 0:
        return 0.0
    if not is_zero_mean(V, quad):
        raise OracleError("identity holds for zero-mean profiles")
    direct = beta_direct(V, g, quad)
    fourier = -2 * math.pi ** (g.n - 2) * inv_lap_grad(V, quad)
    if direct == 0:
        return 0.0 if fourier == 0 else math.inf
    return abs(direct - fourier) / abs(direct)


# -- lambda sweeps -------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """Mesh ladder shared by every lambda of a sweep."""

    h_list: tuple
    L: float
    closure: str = "transparent"
    coords: str = "planar"
    min_margin: float | None = None
    allow_virtual: bool = False
    quantity: str | None = None


def _sweep_one(args):
    g, v, lam, spec = args
    try:
        return lam, convergence_study(g.with_lambda(lam), v, [spec.L], spec.h_list, spec.closure,
                                      spec.coords, spec.quantity, spec.min_margin, spec.allow_virtual)
    except ConvergenceError as e:
        return lam, e


def sweep(g: WaveguideGeometry, v: DeformationProfile, lambdas, spec: SweepSpec,
          jobs: int = 1) -> list:
    """Converged results per lambda as ``[(lam, ConvergenceResult | ConvergenceError)]``, sorted."""
    tasks = [(g, v, float(lam), spec) for lam in sorted(lambdas)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            out = list(ex.map(_sweep_one, tasks))
    else:
        out = [_sweep_one(t) for t in tasks]
    return sorted(out, key=lambda t: t[0])


@dataclass
class ScalingFit:
    exponent: float
    prefactor: float
    lambdas: list
    gaps: list


def gap_exponent(lambdas, gaps) -> ScalingFit:
    """Slope of log(gap) against log(lambda)."""
    lam = np.asarray(lambdas, float)
    gp = np.asarray(gaps, float)
    if lam.size < 2 or np.any(lam <= 0) or np.any(gp <= 0):
        raise OracleError("need at least two positive (lambda, gap) pairs")
    p, c = np.polyfit(np.log(lam), np.log(gp), 1)
    return ScalingFit(float(p), float(math.exp(c)), lam.tolist(), gp.tolist())


def lambda4_scaling_check(V: DeformationProfile, g: WaveguideGeometry, lambdas,
                          spec: SweepSpec | None = None, jobs: int = 1,
                          require_positive_m2: bool = True) -> ScalingFit:
    """Fitted exponent of the gap kappa_1^2 - E(lambda) on a strip."""
    if g.n != 2:
        raise OracleError("the gap-exponent check runs on strips")
    if require_positive_m2 and m2_coefficients(V, g, estimate_error=False).m2 <= 0:
        raise OracleError("m2 <= 0: no second-order bound state to scale")
    if spec is None:
        spec = SweepSpec((g.d / 8, g.d / 16, g.d / 32), V.support_radius + g.d, min_margin=g.d)
    runs = sweep(g, V, lambdas, spec, jobs)
    bad = [lam for lam, r in runs if not isinstance(r, ConvergenceResult) or r.result.gap <= 0]
    if bad:
        raise OracleError(f"unresolved eigenvalue at lambda = {bad}")
    return gap_exponent([lam for lam, _ in runs], [r.result.gap for _, r in runs])
