"""First-kind Fredholm equations for the boundary flux (barrier) and the
exercise boundary (American call).

Barrier case.  With ``ubar(p, tau) = int_0^y u sinh(x sqrt(p)) dx`` the heat
problem gives, for every ``p > 0``,

    int_0^tau0 Psi(s) e^{-p s} sinh(y(s) sqrt p) ds = F(p) + e^{-p tau0} ubar(p, tau0)

where ``F(p) = -int_0^{y(0)} u(x, 0) sinh(x sqrt p) dx``.  The last term is
written through the sine series of ``u(., tau0)``, which is itself linear in
``Psi``; moving it to the left keeps the equation exact on ``[0, tau0]``.

The flux has an inverse square-root singularity at ``tau = 0`` (the payoff
does not vanish at the barrier), so the unknown is ``phi(v) = 2 v Psi(v**2)``
on Gauss-Legendre nodes in ``v = sqrt(tau)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from scipy.special import dawsn, erf, erfcx, ndtr

from .errors import EmptyPayoffRegion, InvalidParameter, NoConvergence, SingularSystem
from .transform import MovingBoundary, TransformBundle

__all__ = [
    "FredholmSolution",
    "TikhonovSolver",
    "default_p_grid",
    "rhs_F",
    "rhs_F_quadrature",
    "assemble_kernel",
    "solve_psi",
    "lcurve_corner",
    "FluxSystem",
    "build_flux_system",
    "solve_barrier_flux",
    "solve_american_boundary",
]

LAMBDA_GRID = np.logspace(-14, -2, 61)


@lru_cache(maxsize=64)
def gauss_legendre(n):
    """Gauss-Legendre nodes and weights on [-1, 1] (cached, read-only)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w
_A_ZERO = 1e-12


@dataclass
class FredholmSolution:
    """Solution of a discretized Fredholm equation plus diagnostics.

    ``psi`` holds the flux at ``tau_grid`` for the barrier problem and the
    boundary level for the American problem.  ``weights`` integrate a
    function sampled on ``tau_grid`` over ``[0, tau_max]``.
    """

    tau_grid: np.ndarray
    psi: np.ndarray
    regularization_lambda: float
    residual_norm: float
    iterations: int = 1
    weights: Optional[np.ndarray] = None
    lcurve: Optional[dict] = field(default=None, repr=False)
    history: list = field(default_factory=list, repr=False)
    converged: bool = True
    levels: Optional[np.ndarray] = None
    geometry: Optional[dict] = field(default=None, repr=False)

    def to_csv(self, path, label="psi"):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["tau", label, "lambda", "residual", "iterations"])
            for t, v in zip(self.tau_grid, self.psi):
                out.writerow([repr(float(t)), repr(float(v)), repr(self.regularization_lambda),
                              repr(self.residual_norm), self.iterations])


def default_p_grid(tau_max, n_p=12, lo=1.0, hi=400.0):
    """Geometric real p-grid on ``[lo/tau_max, hi/tau_max]``."""
    return np.geomspace(lo / tau_max, hi / tau_max, n_p)


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------
def _payoff_data(bundle, K, H):
    g_T, k_T, a_T = bundle.at_maturity
    y0 = H * g_T
    K1 = K * np.exp(bundle.int_w_T)
    pref = np.exp(-bundle.int_w_T - k_T)
    return y0, K1, pref, a_T


def _lin_sinh_integral(K1, y0, s, log_scale):
    """``exp(-log_scale) * int_{K1}^{y0} (x - K1) sinh(x s) dx`` for ``s > 0``."""
    L = y0 - K1
    v = L * s
    out = np.empty_like(s)
    small = v < 0.5
    if np.any(small):
        vs, ss, ls = v[small], s[small], log_scale[small]
        # series of (v cosh v - sinh v)/v**2 and (v sinh v - cosh v + 1)/v**2
        phi1 = np.zeros_like(vs)
        phi2 = np.zeros_like(vs)
        fact = 1.0
        for kk in range(1, 12):
            fact_odd = fact * (2 * kk) * (2 * kk + 1)  # (2k+1)!
            phi1 += 2 * kk * vs ** (2 * kk - 1) / fact_odd
            phi2 += (2 * kk - 1) * vs ** (2 * kk - 2) / (fact * (2 * kk))  # (2k)!
            fact = fact_odd
        ch = 0.5 * (np.exp(K1 * ss - ls) + np.exp(-K1 * ss - ls))
        sh = 0.5 * (np.exp(K1 * ss - ls) - np.exp(-K1 * ss - ls))
        out[small] = L ** 2 * (ch * phi1 + sh * phi2)
    big = ~small
    if np.any(big):
        sb, lb = s[big], log_scale[big]
        ch_y = 0.5 * (np.exp(y0 * sb - lb) + np.exp(-y0 * sb - lb))
        sh_y = 0.5 * (np.exp(y0 * sb - lb) - np.exp(-y0 * sb - lb))
        sh_k = 0.5 * (np.exp(K1 * sb - lb) - np.exp(-K1 * sb - lb))
        out[big] = L * ch_y / sb - (sh_y - sh_k) / sb ** 2
    return out


def _gauss_exp_integral(a, sig, x1, x2, log_scale):
    """``exp(-log_scale) * int_{x1}^{x2} exp(a x**2 + sig x) dx`` for ``a != 0``."""
    e1 = a * x1 ** 2 + sig * x1 - log_scale
    e2 = a * x2 ** 2 + sig * x2 - log_scale
    if a > 0:
        ra = np.sqrt(a)
        m = -sig / (2 * a)
        return (np.exp(e2) * dawsn(ra * (x2 - m)) - np.exp(e1) * dawsn(ra * (x1 - m))) / ra
    c = -a
    rc = np.sqrt(c)
    m = sig / (2 * c)
    u1, u2 = rc * (x1 - m), rc * (x2 - m)
    pref = np.sqrt(np.pi) / (2 * rc)
    out = np.empty_like(u1)
    left = u2 <= 0  # peak above the interval
    right = u1 >= 0  # peak below the interval
    mid = ~(left | right)
    out[left] = pref * (erfcx(-u2[left]) * np.exp(e2[left]) - erfcx(-u1[left]) * np.exp(e1[left]))
    out[right] = pref * (erfcx(u1[right]) * np.exp(e1[right]) - erfcx(u2[right]) * np.exp(e2[right]))
    peak = sig[mid] ** 2 / (4 * c) - log_scale[mid]
    out[mid] = pref * np.exp(peak) * (erf(u2[mid]) - erf(u1[mid]))
    return out


def rhs_F(bundle: TransformBundle, K, H, p, log_scale=None):
    """``F(p) = -int_0^{y(0)} u(x, 0) sinh(x sqrt p) dx`` in closed form.

    ``u(x, 0) = exp(-int_0^T w) (x - K1)^+ exp(-k(T) + a(T) x**2)`` with
    ``K1 = K exp(int_0^T w)``.  When ``a(T) = 0`` this reduces to elementary
    functions, otherwise erf/Dawson antiderivatives are used.  The result is
    multiplied by ``exp(-log_scale)`` (default 0) so that large ``p`` do not
    overflow.

    Raises
    ------
    EmptyPayoffRegion
        If ``K1 > y(0)``: the payoff vanishes inside the barrier.
    """
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    if np.any(p <= 0):
        raise InvalidParameter("p must be real and positive")
    log_scale = np.zeros_like(p) if log_scale is None else np.broadcast_to(
        np.asarray(log_scale, dtype=float), p.shape).copy()
    y0, K1, pref, a = _payoff_data(bundle, float(K), float(H))
    if K1 > y0 * (1 + 1e-14):
        raise EmptyPayoffRegion(f"K1={K1:.6g} >= y(0)={y0:.6g}")
    if K1 >= y0:
        out = np.zeros_like(p)
        return float(out[0]) if scalar else out
    s = np.sqrt(p)
    if abs(a) * y0 ** 2 < _A_ZERO:
        integral = _lin_sinh_integral(K1, y0, s, log_scale)
    else:
        # int (x-K1) e^{a x^2 + sig x} = [e^{...}/(2a)] + (m - K1) int e^{...},  m = -sig/(2a)
        parts = []
        for sig in (s, -s):
            bnd = (np.exp(a * y0 ** 2 + sig * y0 - log_scale)
                   - np.exp(a * K1 ** 2 + sig * K1 - log_scale)) / (2 * a)
            m = -sig / (2 * a)
            parts.append(bnd + (m - K1) * _gauss_exp_integral(a, sig, K1, y0, log_scale))
        integral = 0.5 * (parts[0] - parts[1])
        # the closed form cancels badly for tiny |a|; fall back to quadrature there
        if abs(a) * y0 ** 2 < 1e-3:
            integral = _lin_sinh_quadrature(K1, y0, s, a, log_scale)
    out = -pref * integral
    return float(out[0]) if scalar else out


def _lin_sinh_quadrature(K1, y0, s, a, log_scale, n=96):
    x, w = gauss_legendre(n)
    x = K1 + (y0 - K1) * 0.5 * (x + 1)
    w = w * 0.5 * (y0 - K1)
    arg = np.multiply.outer(s, x)
    f = (x - K1) * np.exp(a * x ** 2) * 0.5 * (np.exp(arg - log_scale[:, None])
                                               - np.exp(-arg - log_scale[:, None]))
    return f @ w


def rhs_F_quadrature(bundle: TransformBundle, K, H, p):
    """Adaptive quadrature of the defining integral of ``F(p)`` (test oracle)."""
    from scipy.integrate import quad

    y0, K1, pref, a = _payoff_data(bundle, float(K), float(H))
    out = []
    for pp in np.atleast_1d(p):
        s = np.sqrt(pp)
        val = quad(lambda x: (x - K1) * np.sinh(x * s) * np.exp(a * x * x), K1, y0,
                   epsabs=0.0, epsrel=1e-13, limit=400)[0]
        out.append(-pref * val)
    return np.array(out) if np.ndim(p) else out[0]


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------
def _log_sinh(x):
    """log(sinh(x)) for x > 0 without overflow."""
    x = np.asarray(x, dtype=float)
    return x + np.log1p(-np.exp(-2.0 * x)) - np.log(2.0)


def assemble_kernel(boundary: MovingBoundary, p_grid, tau_grid, weights=None, log_scale=None):
    """Matrix ``A[i, j] = w_j exp(-p_i tau_j) sinh(y(tau_j) sqrt(p_i))``.

    Entries are formed in the log domain and multiplied by
    ``exp(-log_scale[i])`` (default 0).  ``weights`` default to the composite
    trapezoid rule on ``tau_grid``.
    """
    p = np.atleast_1d(np.asarray(p_grid, dtype=float))
    tau = np.atleast_1d(np.asarray(tau_grid, dtype=float))
    if np.any(p <= 0):
        raise InvalidParameter("p-grid must be real and positive")
    if weights is None:
        if tau.size == 1:
            weights = np.ones(1)
        else:
            h = np.diff(tau)
            weights = np.zeros_like(tau)
            weights[:-1] += 0.5 * h
            weights[1:] += 0.5 * h
    ls = np.zeros_like(p) if log_scale is None else np.broadcast_to(log_scale, p.shape)
    y = boundary.at(tau)
    arg = np.sqrt(p)[:, None] * y[None, :]
    logk = -np.outer(p, tau) + _log_sinh(arg) - ls[:, None]
    return np.asarray(weights)[None, :] * np.exp(logk)


# ---------------------------------------------------------------------------
# Tikhonov
# ---------------------------------------------------------------------------
def _difference_operator(n):
    L = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    L[idx, idx] = -1.0
    L[idx, idx + 1] = 1.0
    return L


def lcurve_corner(res_norms, sol_norms):
    """Index of maximum curvature of the (log residual, log solution) curve."""
    x = np.log(np.maximum(res_norms, 1e-300))
    y = np.log(np.maximum(sol_norms, 1e-300))
    dx, dy = np.gradient(x), np.gradient(y)
    ddx, ddy = np.gradient(dx), np.gradient(dy)
    denom = (dx ** 2 + dy ** 2) ** 1.5
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = np.where(denom > 0, (dx * ddy - dy * ddx) / denom, -np.inf)
    kappa[0] = kappa[-1] = -np.inf
    return int(np.argmax(kappa)), kappa


class TikhonovSolver:
    """Tikhonov solves ``min |A x - b|^2 + lam * s_max^2 |L x|^2`` sharing one factorization.

    ``lam`` is relative to the largest singular value ``s_max`` of ``A`` so
    that the L-curve grid does not depend on how the rows were scaled.
    """

    def __init__(self, A, operator="identity"):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or not np.all(np.isfinite(A)):
            raise InvalidParameter("kernel matrix must be a finite 2-D array")
        self.A = A
        self.operator = operator
        self.U, self.s, self.Vt = np.linalg.svd(A, full_matrices=False)
        if self.s.size == 0 or not self.s[0] > 0:
            raise SingularSystem("kernel matrix is numerically zero")
        self.smax = float(self.s[0])
        n = A.shape[1]
        if operator == "identity":
            self.L = None
        elif operator == "difference":
            self.L = _difference_operator(n)
        else:
            raise InvalidParameter(f"unknown Tikhonov operator {operator!r}")

    def solve(self, b, lam):
        b = np.asarray(b, dtype=float)
        if self.L is None:
            beta = self.U.T @ b
            filt = self.s / (self.s ** 2 + lam * self.smax ** 2)
            return self.Vt.T @ (filt * beta)
        stacked = np.vstack([self.A, np.sqrt(lam) * self.smax * self.L])
        rhs = np.concatenate([b, np.zeros(self.L.shape[0])])
        return np.linalg.lstsq(stacked, rhs, rcond=None)[0]

    def norms(self, x, b):
        res = np.linalg.norm(self.A @ x - b)
        reg = np.linalg.norm(x if self.L is None else self.L @ x)
        return res, reg

    def auto(self, b, grid=LAMBDA_GRID):
        sols = [self.solve(b, lam) for lam in grid]
        res, reg = np.array([self.norms(x, b) for x in sols]).T
        i, kappa = lcurve_corner(res, reg)
        return grid[i], sols[i], dict(lambdas=np.asarray(grid), residual=res, seminorm=reg,
                                      curvature=kappa, index=i)


def solve_psi(A, F_vec, lam="auto", operator="identity", tau_grid=None, weights=None,
              solver: Optional[TikhonovSolver] = None) -> FredholmSolution:
    """Tikhonov-regularized solution of ``A psi = F``.

    Parameters
    ----------
    A : (n_p, n_tau) array
    F_vec : (n_p,) array
    lam : float or "auto"
        Relative regularization weight; ``"auto"`` picks the L-curve corner
        on a log grid over ``[1e-14, 1e-2]``.
    operator : {"identity", "difference"}

    Raises
    ------
    SingularSystem
        When ``A`` is numerically zero.
    """
    solver = solver or TikhonovSolver(A, operator)
    F_vec = np.asarray(F_vec, dtype=float)
    info = None
    if isinstance(lam, str):
        if lam != "auto":
            raise InvalidParameter(f"lambda must be a number or 'auto', got {lam!r}")
        lam, x, info = solver.auto(F_vec)
    else:
        lam = float(lam)
        if lam < 0:
            raise InvalidParameter("lambda must be non-negative")
        x = solver.solve(F_vec, lam)
    fn = np.linalg.norm(F_vec)
    res = np.linalg.norm(solver.A @ x - F_vec) / (fn if fn > 0 else 1.0)
    n = solver.A.shape[1]
    return FredholmSolution(
        tau_grid=np.arange(n, dtype=float) if tau_grid is None else np.asarray(tau_grid),
        psi=x, regularization_lambda=float(lam), residual_norm=float(res),
        weights=weights, lcurve=info,
    )


# ---------------------------------------------------------------------------
# barrier flux pipeline
# ---------------------------------------------------------------------------
@dataclass
class FluxSystem:
    """Discretized barrier Fredholm system shared by all strikes of one maturity."""

    bundle: TransformBundle
    boundary: MovingBoundary
    H: float
    p: np.ndarray
    v: np.ndarray  # sqrt(tau) nodes
    wv: np.ndarray  # Gauss-Legendre weights in v
    tau: np.ndarray
    y: np.ndarray
    log_scale: np.ndarray
    row_scale: np.ndarray
    matrix: np.ndarray  # acts on phi = 2 v Psi
    solver: TikhonovSolver
    terminal_correction: bool

    @property
    def psi_weights(self):
        """Quadrature weights for integrals of Psi over [0, tau0]."""
        return 2.0 * self.v * self.wv

    def rhs(self, K):
        """Row-scaled right-hand side for strike ``K``."""
        F = rhs_F(self.bundle, K, self.H, self.p, log_scale=self.log_scale)
        if self.terminal_correction:
            F = F + self._rhs_correction(K)
        return F / self.row_scale

    def _rhs_correction(self, K):
        """Right-hand side term from the finite horizon: payoff decay up to ``tau0``."""
        bundle, tau0, p = self.bundle, self.bundle.tau0, self.p
        Y = self.boundary.end
        n_max = max(1, int(np.ceil(Y / np.pi * np.sqrt(45.0 / tau0))))
        n = np.arange(1, n_max + 1)
        lam_n = (n * np.pi / Y) ** 2
        U = _payoff_sine_coefficients(bundle, K, self.H, Y, n)
        c = _sine_coeff_factor(p, Y, n)
        end = np.exp(-p * tau0 + _log_sinh(np.sqrt(p) * Y) - self.log_scale)
        return end * (c @ (np.exp(-lam_n * tau0) * U))


def _sine_coeff_factor(p, Y, n):
    alpha = n * np.pi / Y
    sign = np.where(n % 2 == 1, 1.0, -1.0)
    return (2.0 / Y) * alpha * sign / (p[:, None] + alpha ** 2)


def build_flux_system(bundle: TransformBundle, H, p_grid=None, n_tau=32, n_p=12,
                      operator="identity", terminal_correction=True, boundary=None,
                      max_modes=4000) -> FluxSystem:
    """Assemble the barrier Fredholm matrix on Gauss-Legendre nodes in ``sqrt(tau)``."""
    tau0 = bundle.tau0
    if boundary is None:
        boundary = bundle.moving_boundary(H)
    p = default_p_grid(tau0, n_p) if p_grid is None else np.asarray(p_grid, dtype=float)
    xg, wg = gauss_legendre(n_tau)
    root = np.sqrt(tau0)
    v = 0.5 * root * (xg + 1.0)
    wv = 0.5 * root * wg
    tau = v ** 2
    y = boundary.at(tau)
    Y = boundary.end
    sp = np.sqrt(p)
    log_scale = sp * max(Y, float(np.max(y)))
    logk = -np.outer(p, tau) + _log_sinh(np.outer(sp, y)) - log_scale[:, None]
    kern = np.exp(logk)
    if terminal_correction:
        delta = tau0 - tau
        n_modes = np.minimum(np.ceil(Y / np.pi * np.sqrt(40.0 / np.maximum(delta, 1e-300))), max_modes)
        N = int(np.max(n_modes))
        n = np.arange(1, N + 1)
        lam_n = (n * np.pi / Y) ** 2
        c = _sine_coeff_factor(p, Y, n)  # (n_p, N)
        with np.errstate(under="ignore"):
            decay = np.exp(-np.outer(delta, lam_n)) * np.sin(np.outer(y, n) * np.pi / Y)  # (n_tau, N)
        series = c @ decay.T  # (n_p, n_tau)
        end = np.exp(-p * tau0 + _log_sinh(sp * Y) - log_scale)
        kern = kern - end[:, None] * series
    matrix = kern * wv[None, :]
    row_scale = np.max(np.abs(matrix), axis=1)
    row_scale[row_scale == 0] = 1.0
    matrix = matrix / row_scale[:, None]
    return FluxSystem(bundle=bundle, boundary=boundary, H=float(H), p=p, v=v, wv=wv, tau=tau, y=y,
                      log_scale=log_scale, row_scale=row_scale, matrix=matrix,
                      solver=TikhonovSolver(matrix, operator),
                      terminal_correction=terminal_correction)


def _payoff_sine_coefficients(bundle, K, H, Y, n, n_quad=200):
    """``int_0^{y0} u(z, 0) sin(n pi z / Y) dz`` for mode numbers ``n``."""
    y0, K1, pref, a = _payoff_data(bundle, K, H)
    if K1 >= y0:
        return np.zeros(n.shape)
    x, w = gauss_legendre(n_quad)
    z = K1 + (y0 - K1) * 0.5 * (x + 1)
    w = w * 0.5 * (y0 - K1)
    u0 = pref * (z - K1) * np.exp(a * z ** 2)
    return np.sin(np.outer(n, z) * np.pi / Y) @ (u0 * w)




def solve_barrier_flux(system: FluxSystem, K, lam="auto") -> FredholmSolution:
    """Solve for the boundary flux ``Psi`` of one strike.

    ``psi`` in the result is the flux at ``system.tau``; ``weights`` integrate
    ``Psi`` over ``[0, tau0]``.
    """
    F = system.rhs(K)
    sol = solve_psi(system.matrix, F, lam=lam, solver=system.solver)
    phi = sol.psi
    sol.psi = phi / (2.0 * system.v)
    sol.tau_grid = system.tau
    sol.weights = system.psi_weights
    return sol


# ---------------------------------------------------------------------------
# American exercise boundary
# ---------------------------------------------------------------------------
# On x < y(tau) the American call solves the heat equation with value
# matching u = psi1 and smooth pasting u_x = Psi at the boundary, where
#     psi1 = exp(-f(y, t)) (y/g - K),  Psi = exp(-f(y, t)) (1/g + 2 a y (y/g - K)).
# Testing against exp(-p s + sqrt(p) x) on (-inf, y(s)) and writing u(., tau0)
# through the whole-line heat kernel gives, with Y = y(tau0), d = tau0 - s and
#     N_s = 1 - Phi((Y - y(s) - 2 sqrt(p) d) / sqrt(2 d)),
# the exact finite-horizon equation
#     int_0^tau0 exp(-p s + sqrt(p) y) [N_s (psi1 (y' - sqrt p) + Psi) - psi1 phi(.) / sqrt(2 d)] ds
#         + int u0(z) exp(sqrt(p) z) N_z dz = 0.
def _cheb_basis(u, m):
    """Chebyshev basis ``T_k(2u - 1) - T_k(-1)``, k = 1..m, and its u-derivative."""
    x = 2.0 * u - 1.0
    T = np.polynomial.chebyshev
    B = np.empty((u.size, m))
    dB = np.empty((u.size, m))
    for k in range(1, m + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        B[:, k - 1] = T.chebval(x, c) - (-1.0) ** k
        dB[:, k - 1] = 2.0 * T.chebval(x, T.chebder(c))
    return B, dB


def _american_terminal_level(bundle, K):
    """Boundary level at maturity in heat coordinates: ``g(T) max(K, r K / q)``."""
    r, q, _ = (float(v) for v in bundle.curve.eval(bundle.T))
    g_T = bundle.at_maturity[0]
    level = K if q <= 0 else K * max(1.0, r / q)
    return g_T * level


def _exercise_data(y, g, k, a, K):
    """``psi1`` and ``Psi``: the exercise value ``exp(-f)(y/g - K)`` and its x-derivative."""
    e = np.exp(-k + a * y * y)
    m = y / g - K
    return e * m, e * (1.0 / g + 2.0 * a * y * m)


def american_nodes(tau0, n_quad=96):
    """Nodes ``v = sqrt(tau)`` and weights for integrals over ``[0, tau0]``.

    ``v = sqrt(tau0) sin(pi u / 2)`` with Gauss-Legendre ``u`` removes the
    square-root behaviour at both ends of the interval.
    """
    xg, wg = gauss_legendre(n_quad)
    u = 0.5 * (xg + 1.0)
    V = np.sqrt(tau0)
    v = V * np.sin(0.5 * np.pi * u)
    wv = 0.5 * wg * V * 0.5 * np.pi * np.cos(0.5 * np.pi * u)
    return v, wv


def solve_american_boundary(bundle: TransformBundle, K, p_grid=None, tol=1e-12, max_iter=80,
                            n_tau=10, n_p=16, n_quad=96, lam=1e-10,
                            x0=None) -> FredholmSolution:
    """Exercise boundary ``y(tau)`` of the American call from the nonlinear
    Laplace-moment equations.

    ``y(sqrt(tau)) = y(0) + sum_k c_k B_k`` with shifted Chebyshev ``B_k`` in
    ``sqrt(tau)``; the coefficients minimize the Tikhonov-regularized
    residual by a trust-region least-squares solve.

    Parameters
    ----------
    p_grid : array, optional
        Real collocation points, default geometric on ``[1, 400] / tau0``.
    n_tau : int
        Number of boundary coefficients.
    tol : float
        Relative tolerance on the objective, the step and the gradient.
    max_iter : int
        Budget of Jacobian evaluations.
    lam : float
        Tikhonov weight relative to the largest singular value of the
        Jacobian, applied to the mode-weighted coefficients.
    x0 : float, optional
        Spot level; only used to size the numerical domain.

    Returns
    -------
    FredholmSolution
        ``psi`` holds ``y`` at ``tau_grid``; ``geometry`` carries what the
        pricer needs.  ``geometry["european"]`` is True when the boundary
        leaves the numerical domain (no early exercise).

    Raises
    ------
    NoConvergence
        If the solve exhausts its budget; ``exc.best`` holds the last
        iterate.
    """
    K = float(K)
    tau0 = bundle.tau0
    if np.all(bundle.curve.q(bundle.t_grid) <= 0.0):
        # without dividends early exercise is never optimal
        return FredholmSolution(tau_grid=np.array([0.0, tau0]), psi=np.full(2, np.inf),
                                regularization_lambda=lam, residual_norm=0.0, iterations=0,
                                geometry=dict(european=True))
    V = np.sqrt(tau0)
    g_T, k_T, a_T = bundle.at_maturity
    K1 = K * g_T
    xs = bundle.at_start[0] * (K if x0 is None else float(x0))
    spread = np.sqrt(2.0 * tau0)
    cap = max(xs, K1) + 12.0 * spread
    y0 = min(_american_terminal_level(bundle, K), cap)
    v, wv = american_nodes(tau0, n_quad)
    s = v * v
    d = tau0 - s
    t = bundle.invert_tau(s)
    g, k, a = bundle.g_at(t), bundle.k_at(t), bundle.a_at(t)
    p = np.geomspace(1.0 / tau0, 400.0 / tau0, n_p) if p_grid is None else np.asarray(p_grid, float)
    if np.any(p <= 0):
        raise InvalidParameter("p-grid must be real and positive")
    sp = np.sqrt(p)[:, None]
    B, dB = _cheb_basis(v / V, n_tau)
    dB = dB / V
    modes = np.arange(1, n_tau + 1, dtype=float)
    log_scale = sp[:, 0] * cap

    zg, zw = gauss_legendre(64)
    if y0 > K1:
        z = K1 + (y0 - K1) * 0.5 * (zg + 1.0)
        zw = zw * 0.5 * (y0 - K1)
        u0 = (z / g_T - K) * np.exp(-k_T + a_T * z * z) * zw
    else:
        z, u0 = np.zeros(0), np.zeros(0)

    def levels(c):
        return y0 + B @ c, dB @ c

    def residual(c):
        with np.errstate(over="ignore", invalid="ignore"):
            return _residual(c)

    def _residual(c):
        y, yv = levels(c)
        Y = y0 + np.sum(c * (1.0 - (-1.0) ** modes))
        psi1, Psi = _exercise_data(y, g, k, a, K)
        root = np.sqrt(2.0 * d)
        arg = (Y - y - 2.0 * sp * d) / root
        tail = ndtr(-arg)
        dens = np.exp(-0.5 * arg * arg) / np.sqrt(2.0 * np.pi)
        E = np.exp(-p[:, None] * s + sp * y - log_scale[:, None])
        bracket = tail * (psi1 * yv - 2.0 * v * sp * psi1 + 2.0 * v * Psi) - 2.0 * v * psi1 * dens / root
        R = (E * bracket) @ wv
        if z.size:
            argz = (Y - z - 2.0 * sp * tau0) / np.sqrt(2.0 * tau0)
            R = R + (np.exp(sp * z - log_scale[:, None]) * ndtr(-argz)) @ u0
        return R

    def jacobian(c, R):
        J = np.empty((p.size, n_tau))
        for j in range(n_tau):
            h = 1e-7 * max(1.0, abs(c[j]), spread)
            e = np.zeros(n_tau)
            e[j] = h
            J[:, j] = (residual(c + e) - R) / h
        return J

    c = np.zeros(n_tau)
    c[0] = 0.25 * min(cap - y0, spread)  # y rises by spread/2 over [0, tau0]
    R = residual(c)
    J = jacobian(c, R)
    row = np.maximum(np.abs(J).max(axis=1), 1e-300)
    smax = np.linalg.norm(J / row[:, None], 2)
    Gam = np.sqrt(lam) * smax * np.diag(modes ** 2)

    def objective(R, c):
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.sum((R / row) ** 2) + np.sum((Gam @ c) ** 2))

    history = [objective(R, c)]

    def augmented(c):
        y = levels(c)[0]
        # keep the boundary above the mapped strike with a smooth penalty
        below = np.maximum(K1 - y, 0.0) / max(K1, spread)
        r = np.concatenate([residual(c) / row, Gam @ c, 1e3 * below])
        obj = float(r @ r)
        if obj < history[-1]:
            history.append(obj)
        return np.where(np.isfinite(r), r, 1e150)

    tol = max(tol, np.finfo(float).eps)
    fit = least_squares(augmented, c, method="trf", x_scale="jac", ftol=tol, xtol=tol, gtol=tol,
                        max_nfev=max_iter * (n_tau + 1))
    c = fit.x
    R = residual(c)
    it = int(fit.nfev)
    converged = fit.status > 0

    y, yv = levels(c)
    psi1, Psi = _exercise_data(y, g, k, a, K)
    Y = float(y0 + np.sum(c * (1.0 - (-1.0) ** modes)))
    european = bool(max(np.max(y), Y) >= cap)
    x_lo = min(xs, K1) - 12.0 * spread
    geometry = dict(v=v, wv=wv, y=y, y_v=yv, psi1=psi1, Psi=Psi, y0=y0, Y=Y, x_lo=x_lo,
                    top=max(float(np.max(y)), Y), european=european, coefficients=c, p=p, t=t, g=g)
    sol = FredholmSolution(tau_grid=s, psi=y, regularization_lambda=lam,
                           residual_norm=float(np.linalg.norm(R / row)), iterations=it,
                           weights=2.0 * v * wv, history=history, converged=converged,
                           levels=y, geometry=geometry)
    if not converged and not european:
        raise NoConvergence(f"American boundary did not converge in {it} iterations "
                            f"(residual {sol.residual_norm:.3e})", sol)
    return sol
