"""Zero-mean (critical) deformations: bounds on m2, classical criteria and dilation scans.

For a zero-mean shape V and its dilation ``v = V(. / sigma)`` the coefficient
m2 is bracketed in closed form by the norms ||V||, ||Lap' V|| and
``Q = ||grad' (Lap')^-1 V||^2``; the upper bound turns positive for wide
dilations, the lower one for wider still, so the sign change of m2 is caught
between their zeros.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .asymptotics import m2 as m2_coefficients
from .geometry import WaveguideGeometry
from .profile import (DeformationProfile, QuadratureSpec, functionals_basic, inv_lap_grad,
                      is_zero_mean, mean_value, scale)

LOWER_NUMERATOR = 4.5
LOWER_NUMERATOR_LITERAL = 4.0
EXIST_CONSTANT = 6.0 / (9.0 + math.sqrt(90.0 + 12.0 * math.pi**2))


class CriticalError(ValueError):
    pass


class InconsistentCriteria(CriticalError):
    pass


@dataclass
class CriticalReport:
    m2: float
    lower_bound: float | None
    upper_bound: float | None
    crit_nonexist_holds: bool
    crit_exist_holds: bool
    verdict: str
    sigma: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ShapeNorms:
    """Norms of the undilated shape V entering the bounds."""

    l2: float
    lap_norm: float
    inv_lap_grad: float


def shape_norms(V: DeformationProfile, quad: QuadratureSpec = QuadratureSpec()) -> ShapeNorms:
    if not is_zero_mean(V, quad):
        raise CriticalError(f"bounds need a zero-mean shape, got <V> = {mean_value(V, quad):.3e}")
    _, l2, _, lap_l2 = functionals_basic(V, quad)
    return ShapeNorms(l2, math.sqrt(lap_l2), inv_lap_grad(V, quad))


def m2_bounds(V: DeformationProfile, sigma: float, g: WaveguideGeometry,
              paper_literal: bool = False, quad: QuadratureSpec = QuadratureSpec(),
              norms: ShapeNorms | None = None) -> tuple[float, float]:
    """(lower, upper) bounds on m2 of the dilation V(. / sigma).

    ``paper_literal`` swaps the lower-bound constant 9/2 for 8/2.
    """
    if V.base_dim != g.base_dim:
        raise CriticalError("profile dimension does not match the geometry")
    if not sigma > 0:
        raise CriticalError("sigma must be positive")
    nv = norms if norms is not None else shape_norms(V, quad)
    k2 = g.kappa1**2
    pref = k2 * sigma ** (g.n - 1) / math.pi ** (g.n - 2)
    grow = 2 * k2 * sigma**2 * nv.inv_lap_grad
    upper = -pref * (1.5 * nv.l2 - grow)
    c = LOWER_NUMERATOR_LITERAL if paper_literal else LOWER_NUMERATOR
    lower = -pref * (c * nv.l2 + 1.5 / (k2 * sigma**2) * math.sqrt(nv.l2) * nv.lap_norm - grow)
    return lower, upper


def bound_zeros(norms: ShapeNorms, g: WaveguideGeometry, paper_literal: bool = False) -> tuple[float, float]:
    """Dilations where the upper and the lower bound vanish, (sigma_u, sigma_l)."""
    k2 = g.kappa1**2
    Q = norms.inv_lap_grad
    sigma_u = math.sqrt(3 * norms.l2 / (4 * k2 * Q))
    c = LOWER_NUMERATOR_LITERAL if paper_literal else LOWER_NUMERATOR
    # 2 k2 Q s^2 - c ||V||^2 s - (3 / 2k2) ||V|| ||Lap V|| = 0 in s = sigma^2
    a, b, cc = 2 * k2 * Q, -c * norms.l2, -1.5 / k2 * math.sqrt(norms.l2) * norms.lap_norm
    s = (-b + math.sqrt(b * b - 4 * a * cc)) / (2 * a)
    return sigma_u, math.sqrt(s)


def legacy_criteria(v: DeformationProfile, g: WaveguideGeometry,
                    quad: QuadratureSpec = QuadratureSpec()) -> tuple[bool, bool]:
    """(nonexist, exist): the classical strip criteria for zero-mean deformations.

    nonexist: d > 4 b / sqrt(3) with supp v in [-b, b];
    exist: ||v'||^2 / ||v||^2 < 6 kappa_1^2 / (9 + sqrt(90 + 12 pi^2)).
    """
    if g.n != 2:
        raise CriticalError("the classical criteria are stated for strips (n = 2) only")
    if v.amplitude == 0:
        raise CriticalError("criteria need a nonzero profile")
    if not is_zero_mean(v, quad):
        raise CriticalError("criteria apply to zero-mean profiles")
    _, l2, grad_l2, _ = functionals_basic(v, quad)
    nonexist = g.d > 4.0 / math.sqrt(3.0) * v.support_radius
    exist = grad_l2 / l2 < EXIST_CONSTANT * g.kappa1**2
    return bool(nonexist), bool(exist)


def _verdict_from_m2(m2: float, band: float) -> str:
    if abs(m2) < band:
        return "undetermined"
    return "bound_state" if m2 > 0 else "no_bound_state"


def classify(v: DeformationProfile, g: WaveguideGeometry, sigma: float = 1.0,
             paper_literal: bool = False, quad: QuadratureSpec = QuadratureSpec(),
             K: int = 200) -> CriticalReport:
    """Bound-state verdict from the mean, or for zero mean from m2 and the classical criteria.

    ``sigma`` only labels the report; bounds are evaluated for v itself
    (dilation 1 of shape v) when v has zero mean.
    """
    notes = []
    mean = mean_value(v, quad)
    c = m2_coefficients(v, g, K, quad)
    if v.amplitude == 0:
        return CriticalReport(0.0, 0.0, 0.0, False, False, "no_bound_state", sigma, ["zero profile"])
    if not is_zero_mean(v, quad):
        verdict = "bound_state" if mean > 0 else "no_bound_state"
        return CriticalReport(c.m2, None, None, False, False, verdict, sigma,
                              [f"nonzero mean {mean:.6g} decides at first order"])
    lower, upper = m2_bounds(v, 1.0, g, paper_literal, quad)
    nonexist = exist = False
    if g.n == 2:
        nonexist, exist = legacy_criteria(v, g, quad)
    if nonexist and exist:
        raise InconsistentCriteria("both classical criteria hold for the same profile")
    band = 10 * (c.tail_bound + c.quad_error_estimate)
    verdict = _verdict_from_m2(c.m2, band)
    if exist:
        if verdict == "no_bound_state":
            notes.append("m2 < 0 contradicts the existence criterion")
        verdict = "bound_state"
    elif nonexist:
        if verdict == "bound_state":
            notes.append("m2 > 0 contradicts the nonexistence criterion")
        verdict = "no_bound_state"
    return CriticalReport(c.m2, lower, upper, nonexist, exist, verdict, sigma, notes)


@dataclass
class SigmaScan:
    reports: list
    sigma_star: float | None
    crossings: list
    bracket: tuple[float, float] | None
    message: str = ""

    def rows(self) -> list[dict]:
        return [{"sigma": r.sigma, "m2": r.m2, "lower": r.lower_bound, "upper": r.upper_bound,
                 "verdict": r.verdict} for r in self.reports]


def sigma_scan(V: DeformationProfile, g: WaveguideGeometry, sigma_grid, paper_literal: bool = False,
               quad: QuadratureSpec = QuadratureSpec(), K: int = 200, xtol: float = 1e-6) -> SigmaScan:
    """m2 and its bounds along the dilation family, with sign changes located by bisection."""
    grid = np.asarray(sigma_grid, float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or np.any(grid <= 0):
        raise CriticalError("sigma grid must be positive and increasing")
    norms = shape_norms(V, quad)

    def m2_at(s):
        return m2_coefficients(scale(V, s), g, K, quad, estimate_error=False).m2

    reports = []
    for s in grid:
        vs = scale(V, s)
        c = m2_coefficients(vs, g, K, quad)
        lo, up = m2_bounds(V, s, g, paper_literal, quad, norms)
        ne = ex = False
        if g.n == 2:
            ne, ex = legacy_criteria(vs, g, quad)
        band = 10 * (c.tail_bound + c.quad_error_estimate)
        reports.append(CriticalReport(c.m2, lo, up, ne, ex, _verdict_from_m2(c.m2, band), float(s)))
    vals = np.array([r.m2 for r in reports])
    crossings = []
    for i in range(len(grid) - 1):
        if vals[i] < 0 < vals[i + 1] or vals[i] > 0 > vals[i + 1]:
            crossings.append(float(brentq(m2_at, grid[i], grid[i + 1], xtol=xtol)))
    try:
        bracket = bound_zeros(norms, g, paper_literal)
    except (ValueError, ZeroDivisionError):
        bracket = None
    if not crossings:
        return SigmaScan(reports, None, [], bracket, "no crossing in range")
    return SigmaScan(reports, crossings[0], crossings, bracket,
                     "single crossing" if len(crossings) == 1 else f"{len(crossings)} crossings")


def scan_csv_rows(scan: SigmaScan) -> list[dict]:
    return scan.rows()
