"""Direct eigensolver for the Dirichlet Laplacian on the straightened guide.

The quadratic form ``int G^{ij} d_i psi d_j psi sqrt(G)`` is discretized with
bilinear (trilinear in 3D) conforming elements on a tensor grid against the
weighted mass ``int psi^2 sqrt(G)``. Two lateral closures are available:

``dirichlet``
    walls at ``|x| = L``; the ground state is the lowest generalized
    eigenvalue of the sparse pencil.
``transparent``
    the exterior straight guide is eliminated exactly, mode by mode, through
    its Dirichlet-to-Neumann map. The eigenvalue condition becomes a scalar
    equation for ``m = sqrt(threshold - E)``, and its root continues
    analytically to ``m < 0`` (virtual states) in strips.

Layers with radial profiles can be reduced to the meridian half-plane
``(r, u)`` (``coords="axisymmetric"``); the exterior map then involves
Macdonald functions and the root is sought in ``w = 1 / ln m``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .geometry import WaveguideGeometry, metric
from .kernels import EULER_GAMMA, macdonald
from .profile import DeformationProfile

_G3 = (np.array([0.5 - math.sqrt(0.15), 0.5, 0.5 + math.sqrt(0.15)]), np.array([5, 8, 5]) / 18)


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Tensor grid on the truncated straight domain.

    ``x_nodes`` are the lateral nodes (each lateral axis in 3D uses the same
    set; in axisymmetric mode they are radii starting at 0). ``n_u`` is the
    number of transverse cells, so ``h_u = d / n_u`` divides ``d`` exactly.
    """

    x_nodes: np.ndarray = field(repr=False)
    n_u: int
    d: float
    closure: str = "dirichlet"
    coords: str = "planar"

    def __post_init__(self):
        if self.closure not in ("dirichlet", "transparent"):
            raise SolverError("closure must be 'dirichlet' or 'transparent'")
        if self.coords not in ("planar", "axisymmetric"):
            raise SolverError("coords must be 'planar' or 'axisymmetric'")
        if self.n_u < 2:
            raise SolverError("need at least 2 transverse cells")
        if np.any(np.diff(self.x_nodes) <= 0):
            raise SolverError("lateral nodes must be strictly increasing")

    @property
    def L(self) -> float:
        return float(self.x_nodes[-1])

    @property
    def h_x(self) -> float:
        return float(np.max(np.diff(self.x_nodes)))

    @property
    def h_u(self) -> float:
        return self.d / self.n_u

    @property
    def u_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.d, self.n_u + 1)

    def refined(self) -> "Mesh":
        x = self.x_nodes
        xn = np.empty(2 * x.size - 1)
        xn[0::2], xn[1::2] = x, 0.5 * (x[1:] + x[:-1])
        return replace(self, x_nodes=xn, n_u=2 * self.n_u)

    def describe(self) -> dict:
        return {"L": self.L, "h_x": self.h_x, "h_u": self.h_u, "n_x": int(self.x_nodes.size),
                "n_u": self.n_u, "closure": self.closure, "coords": self.coords}


def build_mesh(g: WaveguideGeometry, v: DeformationProfile | None, L: float, h: float,
               closure: str = "dirichlet", coords: str = "planar",
               min_margin: float | None = None) -> Mesh:
    """Lateral grid on [-L, L] (or [0, L] for radii) with nodes on the support edge.

    Each segment between breakpoints gets ``ceil(length / h)`` equal cells, so
    halving ``h`` nests the grids. ``n_u = round(d / h)``. The support must
    stay ``min_margin`` (default 5 d) away from the truncation.
    """
    b = v.support_radius if v is not None else 0.0
    margin = 5 * g.d if min_margin is None else min_margin
    if L - b < margin - 1e-12:
        raise SolverError(
            f"truncation L={L} leaves margin {L - b:.3g} < required {margin:.3g} beyond the support"
        )
    if coords == "axisymmetric":
        breaks = [0.0, b, L] if b > 0 else [0.0, L]
    else:
        breaks = [-L, -b, 0.0, b, L] if b > 0 else [-L, 0.0, L]
    pieces = []
    for a, c in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((c - a) / h - 1e-9))
        pieces.append(np.linspace(a, c, n + 1)[:-1])
    x = np.concatenate(pieces + [np.array([breaks[-1]])])
    n_u = max(2, int(round(g.d / h)))
    return Mesh(x, n_u, g.d, closure, coords)


def default_truncation(g: WaveguideGeometry, v: DeformationProfile, m_estimate: float | None) -> float:
    """Dirichlet box half-width with ``m L >= 8`` from an a priori m, and at least the 5 d margin."""
    L = v.support_radius + 5 * g.d
    if m_estimate is not None and m_estimate > 0:
        L = max(L, 8.0 / m_estimate)
    return L


@dataclass
class SpectralResult:
    E: float
    gap: float
    m_lambda: float
    w: float | None
    residual: float
    mesh: Mesh
    converged: bool
    threshold: float
    kind: str = "bound"
    lam: float = 0.0
    n: int = 2
    d: float = math.pi

    def row(self) -> dict:
        return {"n": self.n, "d": self.d, "lambda": self.lam, "L": self.mesh.L,
                "h_x": self.mesh.h_x, "h_u": self.mesh.h_u, "E": self.E, "gap": self.gap,
                "m_lambda": self.m_lambda, "residual": self.residual,
                "converged": self.converged}


CSV_COLUMNS = ("n", "d", "lambda", "L", "h_x", "h_u", "E", "gap", "m_lambda", "residual", "converged")


# -- assembly ----------------------------------------------------------------

def _q1_ref(dim):
    """Gauss points, weights, basis values and reference gradients of tensor Q1."""
    pts, wts = _G3
    P = np.stack([gr.ravel() for gr in np.meshgrid(*([pts] * dim), indexing="ij")], axis=-1)
    W = np.prod(np.stack([gr.ravel() for gr in np.meshgrid(*([wts] * dim), indexing="ij")], -1), axis=1)
    corners = np.array(np.meshgrid(*([[0, 1]] * dim), indexing="ij")).reshape(dim, -1).T
    nq, nb = P.shape[0], corners.shape[0]
    N = np.ones((nq, nb))
    dN = np.ones((nq, nb, dim))
    for a, c in enumerate(corners):
        f = np.where(c == 1, P, 1 - P)
        df = np.where(c == 1, 1.0, -1.0)
        N[:, a] = np.prod(f, axis=1)
        for k in range(dim):
            dN[:, a, k] = df[k] * np.prod(np.delete(f, k, axis=1), axis=1)
    return P, W, N, dN, corners


def _lat_dim(g: WaveguideGeometry, mesh: Mesh) -> int:
    return 2 if (g.n == 3 and mesh.coords == "planar") else 1


class _RadialSlice:
    """A radial layer profile viewed along a ray, as a one-dimensional profile."""

    base_dim = 1

    def __init__(self, v):
        self.v = v

    def derivatives(self, r):
        val, grad, lap = self.v.derivatives(np.stack([r, np.zeros_like(r)], axis=-1))
        return val, grad[..., 0], lap


def assemble_forms(g: WaveguideGeometry, v: DeformationProfile, mesh: Mesh, side: str = "upper"):
    """Stiffness and mass on all grid nodes, before boundary conditions.

    Node index is x-major with the transverse index fastest, so the pencil is
    banded. See :func:`restrict` for the free unknowns.
    """
    g.check_profile(v)
    x, u = mesh.x_nodes, mesh.u_nodes
    hx, hu = np.diff(x), mesh.h_u
    axis = mesh.coords == "axisymmetric"
    if axis and (g.n != 3 or not v.is_radial):
        raise SolverError("axisymmetric reduction needs a layer (n=3) with a radial profile")
    lat_dim = _lat_dim(g, mesh)
    P, W, N, dN, corners = _q1_ref(lat_dim + 1)
    nx, nu = x.size, u.size

    if lat_dim == 1:
        ci, ck = (a.ravel() for a in np.meshgrid(np.arange(nx - 1), np.arange(nu - 1), indexing="ij"))
        xq = x[ci][:, None] + hx[ci][:, None] * P[None, :, 0]
        uq = u[ck][:, None] + hu * P[None, :, 1]
        jac = hx[ci] * hu
        scales = np.stack([hx[ci], np.full(ci.size, hu)], axis=-1)
        if axis:
            md = metric(WaveguideGeometry(2, g.d, g.lam), _RadialSlice(v), xq, uq, side)
        else:
            md = metric(g, v, xq, uq, side)
        C = md.G_inv * md.sqrt_det[..., None, None]
        rho = md.sqrt_det
        if axis:
            C = C * xq[..., None, None]
            rho = rho * xq
        nodes = (ci[:, None] + corners[None, :, 0]) * nu + ck[:, None] + corners[None, :, 1]
    else:
        grids = np.meshgrid(np.arange(nx - 1), np.arange(nx - 1), np.arange(nu - 1), indexing="ij")
        ci, cj, ck = (a.ravel() for a in grids)
        x1 = x[ci][:, None] + hx[ci][:, None] * P[None, :, 0]
        x2 = x[cj][:, None] + hx[cj][:, None] * P[None, :, 1]
        uq = u[ck][:, None] + hu * P[None, :, 2]
        jac = hx[ci] * hx[cj] * hu
        scales = np.stack([hx[ci], hx[cj], np.full(ci.size, hu)], axis=-1)
        md = metric(g, v, np.stack([x1, x2], axis=-1), uq, side)
        C = md.G_inv * md.sqrt_det[..., None, None]
        rho = md.sqrt_det
        nodes = ((ci[:, None] + corners[None, :, 0]) * nx + cj[:, None] + corners[None, :, 1]) * nu \
            + ck[:, None] + corners[None, :, 2]

    G = dN[None, :, :, :] / scales[:, None, None, :]
    wj = W[None, :] * jac[:, None]
    Ke = np.einsum("cq,cqak,cqkl,cqbl->cab", wj, G, C, G, optimize=True)
    Me = np.einsum("cq,cq,qa,qb->cab", wj, rho, N, N, optimize=True)
    nb = nodes.shape[1]
    rows = np.repeat(nodes, nb, axis=1).ravel()
    cols = np.tile(nodes, (1, nb)).ravel()
    ntot = nx**lat_dim * nu
    A = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(ntot, ntot))
    B = sp.csr_matrix((Me.ravel(), (rows, cols)), shape=(ntot, ntot))
    # element matrices are symmetric up to round-off; symmetrize exactly
    return (0.5 * (A + A.T)).tocsr(), (0.5 * (B + B.T)).tocsr()


def free_dofs(mesh: Mesh, lat_dim: int) -> np.ndarray:
    """Unknowns left after Dirichlet elimination (u = 0, u = d and, for walls, |x| = L)."""
    nx, nu = mesh.x_nodes.size, mesh.n_u + 1
    k = np.arange(nu)
    keep_u = (k > 0) & (k < nu - 1)
    keep_x = np.ones(nx, bool)
    if mesh.closure == "dirichlet":
        keep_x[-1] = False
        if mesh.coords == "planar":
            keep_x[0] = False
    if lat_dim == 1:
        mask = keep_x[:, None] & keep_u[None, :]
    else:
        mask = keep_x[:, None, None] & keep_x[None, :, None] & keep_u[None, None, :]
    return np.flatnonzero(mask.ravel())


def restrict(A, B, mesh: Mesh, lat_dim: int):
    idx = free_dofs(mesh, lat_dim)
    return A[idx][:, idx].tocsc(), B[idx][:, idx].tocsc(), idx


def transverse_spectrum(mesh: Mesh):
    """Discrete transverse modes: ``K q = mu M q`` on interior u nodes with q^T M q = 1."""
    n = mesh.n_u - 1
    h = mesh.h_u
    off = np.ones(n - 1)
    K = (2 * np.eye(n) - np.diag(off, 1) - np.diag(off, -1)) / h
    M = (4 * np.eye(n) + np.diag(off, 1) + np.diag(off, -1)) * h / 6
    mu, Q = sla.eigh(K, M)
    return mu, Q, M


# -- eigen machinery ---------------------------------------------------------

class _ShiftedLU:
    """Unpivoted banded LU of ``A - s B``; its pivots give the Sylvester inertia."""

    def __init__(self, A, B, s):
        self.s = s
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sp.SparseEfficiencyWarning)
            self.lu = spla.splu((A - s * B).tocsc(), permc_spec="NATURAL",
                                diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        if not np.array_equal(self.lu.perm_r, np.arange(A.shape[0])):
            raise SolverError("pivoting occurred; inertia count unavailable")

    @property
    def n_below(self) -> int:
        return int(np.count_nonzero(self.lu.U.diagonal() < 0))

    def apply_inverse(self, b):
        return self.lu.solve(b)


def lowest_eigenpair(A, B, upper: float, rel_window: float = 0.02, max_tries: int = 12):
    """Lowest eigenpair of the pencil (A, B), certified by an inertia count.

    A shift ``s`` below the whole spectrum is located first (no negative
    pivots in ``A - s B``); shift-invert Lanczos about ``s`` then returns the
    eigenvalues nearest ``s``, which are the lowest ones.
    Returns ``(E1, x1, E2)``.
    """
    delta = rel_window * max(abs(upper), 1.0)
    for _ in range(max_tries):
        s = upper - delta
        lu = _ShiftedLU(A, B, s)
        if lu.n_below == 0:
            break
        delta *= 4
    else:
        raise ConvergenceError("could not place a shift below the spectrum")
    op = spla.LinearOperator(A.shape, matvec=lu.apply_inverse, dtype=float)
    k = min(3, A.shape[0] - 2)
    vals, vecs = spla.eigsh(A, k=k, M=B, sigma=s, OPinv=op, which="LM", tol=1e-14)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    E1, x1 = float(vals[0]), vecs[:, 0]
    E2 = float(vals[1]) if vals.size > 1 else math.inf
    # inverse iteration closer to E1 drives the residual to round-off
    if E2 > E1:
        s2 = E1 - 0.25 * min(E2 - E1, E1 - s)
        lu2 = _ShiftedLU(A, B, s2)
        if lu2.n_below == 0:
            x = x1
            for _ in range(3):
                x = lu2.apply_inverse(B @ x)
                x /= math.sqrt(x @ (B @ x))
            E1, x1 = float(x @ (A @ x)), x
    return E1, x1, E2


def _residual(A, B, E, x):
    Bx = B @ x
    return float(np.linalg.norm(A @ x - E * Bx) / np.linalg.norm(Bx))


def threshold_margin(mesh: Mesh, g: WaveguideGeometry) -> float:
    """Three times a second-order error estimate of kappa_1^2 on this mesh."""
    return 3 * g.threshold * (g.kappa1 * max(mesh.h_x, mesh.h_u)) ** 2 / 12


def ground_state(A, B, g: WaveguideGeometry, mesh: Mesh, threshold: float | None = None,
                 margin: float | None = None) -> SpectralResult | None:
    """Lowest eigenvalue of the Dirichlet-box pencil; ``None`` when not below the threshold.

    The gap is measured from the discrete transverse threshold of the mesh.
    """
    if threshold is None:
        threshold = float(transverse_spectrum(mesh)[0][0])
    if margin is None:
        margin = threshold_margin(mesh, g)
    E1, x1, _ = lowest_eigenpair(A, B, threshold)
    res = _residual(A, B, E1, x1)
    if not E1 < threshold - margin:
        return None
    gap = threshold - E1
    m = math.sqrt(gap)
    w = 1.0 / math.log(m) if (g.n == 3 and m < 1) else None
    return SpectralResult(E1, gap, m, w, res, mesh, res < 1e-8, threshold, "bound",
                          g.lam, g.n, g.d)


# -- transparent closure -----------------------------------------------------

class TransparentProblem:
    """Pencil with the exterior eliminated through its mode-wise DtN map."""

    def __init__(self, g: WaveguideGeometry, v: DeformationProfile, mesh: Mesh, side="upper"):
        if mesh.closure != "transparent":
            raise SolverError("mesh closure must be 'transparent'")
        if _lat_dim(g, mesh) == 2:
            raise SolverError("transparent closure needs a strip or an axisymmetric layer")
        self.g, self.mesh = g, mesh
        A, B = assemble_forms(g, v, mesh, side)
        self.A, self.B, _ = restrict(A, B, mesh, 1)
        self.mu, Q, Mu = transverse_spectrum(mesh)
        self.threshold = float(self.mu[0])
        nb = mesh.n_u - 1
        nx = mesh.x_nodes.size
        self.axis = mesh.coords == "axisymmetric"
        ends = [nx - 1] if self.axis else [0, nx - 1]
        self.end_offsets = [i * nb for i in ends]
        self.MQ = Mu @ Q

    def dtn(self, m: float):
        """Exterior DtN coefficients per discrete mode and their m-derivatives."""
        k = np.sqrt(np.maximum(self.mu - self.threshold + m * m, 0.0))
        k[0] = m
        dk = np.ones_like(k)
        dk[1:] = m / k[1:]
        if not self.axis:
            return k, dk
        if m <= 0:
            raise SolverError("axisymmetric closure needs m > 0")
        R = self.mesh.L
        z = k * R
        ratio = macdonald(1, z) / macdonald(0, z)
        # c(k) = R k K1(kR)/K0(kR); K0' = -K1 and (z K1)' = -z K0
        dc_dk = R * R * (ratio**2 - 1) * k
        return R * k * ratio, dc_dk * dk

    def dtn_w(self, w: float):
        """Axisymmetric DtN coefficients parameterized by ``w = 1 / ln m`` (w < 0).

        For tiny m the mode-1 coefficient R m K1(mR)/K0(mR) is taken from its
        small-argument form 1 / (-1/w - ln(R/2) - gamma), which stays accurate
        when m itself underflows.
        """
        R = self.mesh.L
        m = math.exp(1.0 / w)
        if m * R > 1e-6:
            return self.dtn(m)[0], m
        c = np.empty_like(self.mu)
        k = np.sqrt(self.mu[1:] - self.threshold + m * m)
        c[1:] = R * k * macdonald(1, k * R) / macdonald(0, k * R)
        c[0] = 1.0 / (-1.0 / w - math.log(R / 2) - EULER_GAMMA)
        return c, m

    def dtn_matrix(self, coeffs):
        n = self.A.shape[0]
        block = (self.MQ * coeffs) @ self.MQ.T
        nb = block.shape[0]
        ii, jj = np.meshgrid(np.arange(nb), np.arange(nb), indexing="ij")
        rows = np.concatenate([o + ii.ravel() for o in self.end_offsets])
        cols = np.concatenate([o + jj.ravel() for o in self.end_offsets])
        vals = np.tile(block.ravel(), len(self.end_offsets))
        return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

    def theta_coeffs(self, c, m: float):
        Am = (self.A + self.dtn_matrix(c)).tocsc()
        E1, x, E2 = lowest_eigenpair(Am, self.B, self.threshold - m * m)
        xb = x / math.sqrt(x @ (self.B @ x))
        return E1 - self.threshold + m * m, E1, xb, Am, E2

    def theta(self, m: float):
        """``theta(m) = E_min(A + D(m), B) - threshold + m^2`` and its m-derivative."""
        c, dc = self.dtn(m)
        th, E1, xb, Am, E2 = self.theta_coeffs(c, m)
        dE = float(xb @ (self.dtn_matrix(dc) @ xb))
        return th, dE + 2 * m, E1, xb, Am, E2


def _newton_bracketed(fun, a, b, fa, x0, tol, max_iter=60):
    history = []
    x = x0
    for _ in range(max_iter):
        f, df, *rest = fun(x)
        history.append((x, f))
        if abs(f) <= tol[1]:
            return x, rest, history
        if (f < 0) == (fa < 0):
            a, fa = x, f
        else:
            b = x
        xn = x - f / df if df != 0 else math.inf
        if not (min(a, b) < xn < max(a, b)):
            xn = 0.5 * (a + b)
        if abs(xn - x) <= tol[0] * max(1.0, abs(x)):
            f, df, *rest = fun(xn)
            history.append((xn, f))
            return xn, rest, history
        x = xn
    raise ConvergenceError("threshold root did not converge", history)


def solve_transparent(g: WaveguideGeometry, v: DeformationProfile, mesh: Mesh,
                      allow_virtual: bool = True, side: str = "upper",
                      xtol: float = 1e-13) -> SpectralResult:
    """Signed root ``m`` of the transparent-closure eigen condition.

    ``m > 0`` is a bound state with ``E = threshold - m^2``. In strips a
    negative root (virtual state) is returned with ``kind="virtual"`` when
    ``allow_virtual``; with no root on the requested side ``kind="none"``.
    """
    prob = TransparentProblem(g, v, mesh, side)
    thr = prob.threshold
    if prob.axis:
        return _solve_axisymmetric(prob, g, mesh)
    th0, dth0, *_ = prob.theta(0.0)
    ftol = 1e-15 * thr
    if th0 < 0:
        hi = math.sqrt(-th0) * (1 + 1e-7)
        guess = min(hi, max(1e-16, -th0 / dth0)) if dth0 > 0 else 0.5 * hi
        m, rest, _ = _newton_bracketed(prob.theta, 0.0, hi, th0, guess, (xtol, ftol))
        kind = "bound"
    elif th0 == 0 or not allow_virtual:
        return SpectralResult(thr, 0.0, 0.0, None, 0.0, mesh, True, thr, "none", g.lam, g.n, g.d)
    else:
        lo = -th0 / dth0
        th_lo = prob.theta(lo)[0]
        while th_lo > 0:
            lo *= 2
            if abs(lo) * mesh.L > 20:
                raise ConvergenceError("virtual-state root not bracketed")
            th_lo = prob.theta(lo)[0]
        m, rest, _ = _newton_bracketed(prob.theta, lo, 0.0, th_lo, 0.5 * lo, (xtol, ftol))
        kind = "virtual"
        if abs(m) * mesh.L > 3:
            warnings.warn("virtual root with |m| L > 3 is poorly conditioned; reduce L")
    E1, x, Am, _ = rest
    res = _residual(Am, prob.B, E1, x)
    return SpectralResult(thr - m * m, m * m, m, None, res, mesh, res < 1e-8, thr, kind,
                          g.lam, g.n, g.d)


def _solve_axisymmetric(prob: TransparentProblem, g, mesh) -> SpectralResult:
    """Layer bound state in the meridian plane, root-found in ``w = 1 / ln m``.

    The condition depends smoothly on w even where m itself underflows, so
    exponentially small gaps stay within reach.
    """
    thr = prob.threshold

    def f_of_w(w):
        c, m = prob.dtn_w(w)
        return prob.theta_coeffs(c, m)[0]

    w_small = -1e-3
    if f_of_w(w_small) >= 0:
        return SpectralResult(thr, 0.0, 0.0, None, 0.0, mesh, True, thr, "none", g.lam, g.n, g.d)
    m_top = math.sqrt(thr)
    if m_top > 1 and prob.theta(1.0)[0] < 0:
        # gap beyond 1: the root sits at m > 1 where w is not defined
        m = brentq(lambda mm: prob.theta(mm)[0], 1.0, m_top * (1 - 1e-12), xtol=1e-15, rtol=1e-13)
        w, c = None, prob.dtn(m)[0]
    else:
        w_lo = -0.05
        while f_of_w(w_lo) < 0:
            w_lo *= 2
            if w_lo < -1e4:
                raise ConvergenceError("layer root not bracketed")
        w = brentq(f_of_w, w_lo, w_small, xtol=1e-15, rtol=1e-13, maxiter=200)
        c, m = prob.dtn_w(w)
    _, E1, x, Am, _ = prob.theta_coeffs(c, m)
    res = _residual(Am, prob.B, E1, x)
    return SpectralResult(thr - m * m, m * m, m, w, res, mesh, res < 1e-8, thr, "bound",
                          g.lam, g.n, g.d)


def solve(g: WaveguideGeometry, v: DeformationProfile, mesh: Mesh, side: str = "upper",
          allow_virtual: bool = False) -> SpectralResult | None:
    """Ground state for either closure; ``None`` when no bound state is resolved."""
    if mesh.closure == "transparent":
        r = solve_transparent(g, v, mesh, allow_virtual=allow_virtual, side=side)
        if r.kind == "bound" or (allow_virtual and r.kind == "virtual"):
            return r
        return None
    A, B = assemble_forms(g, v, mesh, side)
    A, B, _ = restrict(A, B, mesh, _lat_dim(g, mesh))
    return ground_state(A, B, g, mesh)


def dump_matrices(A, B, prefix) -> list[str]:
    """Write the pencil in Matrix Market coordinate format."""
    from scipy.io import mmwrite

    paths = [f"{prefix}_stiffness.mtx", f"{prefix}_mass.mtx"]
    mmwrite(paths[0], sp.coo_matrix(A))
    mmwrite(paths[1], sp.coo_matrix(B))
    return paths


# -- convergence study ---------------------------------------------------------

@dataclass
class ConvergenceResult:
    result: SpectralResult
    error_estimate: float
    order: float | None
    monotone: bool
    levels: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def extrapolated(self) -> bool:
        return self.monotone


def _observable(r: SpectralResult | None, quantity: str) -> float:
    if r is None:
        return math.nan
    if quantity == "E":
        return r.E
    if quantity == "m":
        return r.m_lambda
    if quantity == "w":
        return r.w if r.w is not None else math.nan
    raise SolverError(f"unknown observable {quantity!r}")


def _run_one(args):
    g, v, L, h, closure, coords, margin, allow_virtual = args
    mesh = build_mesh(g, v, L, h, closure, coords, min_margin=margin)
    return solve(g, v, mesh, allow_virtual=allow_virtual)


def convergence_study(g: WaveguideGeometry, v: DeformationProfile, L_list, h_list,
                      closure: str = "dirichlet", coords: str = "planar",
                      quantity: str | None = None, min_margin: float | None = None,
                      allow_virtual: bool = False, jobs: int = 1) -> ConvergenceResult:
    """Richardson extrapolation in h (order 2) plus an exponential correction in L.

    ``quantity`` selects what is extrapolated: "E" (default for Dirichlet
    boxes), "m" (signed m, default for transparent strips) or "w". The
    extrapolated energy is rebuilt against the continuum threshold kappa_1^2.
    Non-monotone h sequences are flagged and not extrapolated.
    """
    h_list = sorted(h_list, reverse=True)
    L_list = sorted(L_list)
    if len(h_list) < 3:
        raise SolverError("convergence study needs at least 3 mesh levels")
    if closure == "dirichlet" and len(L_list) < 2:
        raise SolverError("convergence study needs at least 2 truncation levels")
    if quantity is None:
        quantity = "E" if closure == "dirichlet" else ("w" if coords == "axisymmetric" else "m")
    tasks = [(g, v, L_list[-1], h, closure, coords, min_margin, allow_virtual) for h in h_list]
    tasks += [(g, v, L, h_list[-1], closure, coords, min_margin, allow_virtual) for L in L_list[:-1]]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(a) for a in tasks]
    h_runs = results[: len(h_list)]
    L_runs = results[len(h_list):] + [h_runs[-1]]
    levels = [{"L": L_list[-1], "h": h, "value": _observable(r, quantity)} for h, r in zip(h_list, h_runs)]
    levels += [{"L": L, "h": h_list[-1], "value": _observable(r, quantity)}
               for L, r in zip(L_list[:-1], L_runs[:-1])]
    if any(r is None for r in h_runs):
        raise ConvergenceError("no bound state resolved on every mesh level",
                               [lv["value"] for lv in levels])
    finest = h_runs[-1]
    notes = []
    q = np.array([_observable(r, quantity) for r in h_runs])
    dq = np.diff(q)
    ratio = h_list[-2] / h_list[-1]
    monotone = bool(np.all(dq > 0) or np.all(dq < 0))
    order = None
    if dq[-1] != 0 and dq[-2] != 0:
        order = float(math.log(abs(dq[-2] / dq[-1])) / math.log(h_list[-3] / h_list[-2]))
    if monotone:
        q_h = q[-1] + dq[-1] / (ratio**2 - 1)
        err_h = abs(dq[-1] / (ratio**2 - 1))
    else:
        notes.append("non-monotone convergence in h: no extrapolation")
        q_h, err_h = q[-1], abs(dq[-1])
    err_L = 0.0
    if len(L_list) >= 2 and closure == "dirichlet" and all(r is not None for r in L_runs):
        qL = np.array([_observable(r, quantity) for r in L_runs])
        m = max(finest.m_lambda, 1e-12)
        e1, e2 = math.exp(-2 * m * L_list[-2]), math.exp(-2 * m * L_list[-1])
        corr = (qL[-1] - qL[-2]) * e2 / (e1 - e2)
        q_h += corr
        err_L = abs(corr)
    thr = g.threshold
    if quantity == "E":
        E = q_h
        gap = thr - E
        m = math.sqrt(gap) if gap > 0 else 0.0
        w = 1.0 / math.log(m) if (g.n == 3 and 0 < m < 1) else None
    elif quantity == "m":
        m, w = q_h, None
        gap, E = m * m, thr - m * m
    else:
        w = q_h
        m = math.exp(1.0 / w)
        gap, E = m * m, thr - m * m
    res = SpectralResult(E, gap, m, w, finest.residual, finest.mesh, finest.converged, thr,
                         finest.kind, g.lam, g.n, g.d)
    return ConvergenceResult(res, max(err_h, err_L), order, monotone, levels, notes)
