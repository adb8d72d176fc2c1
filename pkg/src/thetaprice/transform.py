"""Reduction of the pricing PDE to the heat equation.

With ``x = S g(t)`` and ``C = exp(f(x, t)) u(x, tau)`` the backward pricing
equation becomes ``u_tau = u_xx`` on ``0 < x < y(tau)``.  Here

* ``g = exp(int_0^t w)`` where ``w`` solves the Riccati equation
  ``w' = b + w**2 + 2 w sigma'/sigma``,
* ``f = k(t) - a(t) x**2`` with ``a = (w + r - q) / (2 g**2 sigma**2)`` and
  ``k = log(g)/2 + int_0^t (3r - q)/2``,
* ``tau(t) = 1/2 int_t^T sigma**2 g**2 ds`` runs from ``tau(T) = 0`` up to
  ``tau(0)``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import BlowUp, InvalidParameter, OutOfDomain, ValidityWarning
from .termstructure import CoefficientCurve, ExponentialCurve

__all__ = [
    "TransformMode",
    "WProfile",
    "TransformBundle",
    "MovingBoundary",
    "solve_riccati",
    "closed_form_w",
    "small_drift_w",
    "build_bundle",
    "eval_f",
    "invert_tau",
    "moving_boundary",
]

BLOWUP_LEVEL = 1e6
DEFAULT_GRID = 2001

# 8-point Gauss-Legendre rule on [0, 1] for per-interval integrals
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class TransformMode(str, Enum):
    RICCATI_NUMERIC = "riccati_numeric"
    SMALL_DRIFT = "small_drift"
    CLOSED_FORM_EXPONENTIAL = "closed_form_exponential"


@dataclass(frozen=True)
class WProfile:
    """Riccati solution ``w`` on a grid plus exact callables for ``w`` and its integral."""

    t: np.ndarray
    w: np.ndarray
    mode: TransformMode
    w_fn: Callable = field(repr=False)
    int_w_fn: Callable = field(repr=False)
    horizon: float = 0.0
    D: Optional[float] = None


def _riccati_rhs(curve, t):
    r, q, s = curve.eval(t)
    ds = curve.dsigma(t)
    mu = r - q
    dmu = curve.dr(t) - curve.dq(t)
    lead = ds / s
    b = 2.0 * mu * lead - (mu ** 2 + dmu)
    return b, lead


def _time_grid(T, n, breaks=()):
    t = np.linspace(0.0, T, n)
    extra = [b for b in breaks if 0.0 < b < T]
    if extra:
        t = np.unique(np.concatenate([t, extra]))
    return t


class _PiecewiseDense:
    """Dense ODE output stitched over smooth pieces (right-continuous at joins)."""

    def __init__(self, edges, sols):
        self.edges = np.asarray(edges)
        self.sols = sols

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        idx = np.clip(np.searchsorted(self.edges, flat, side="right") - 1, 0, len(self.sols) - 1)
        out = np.empty((2, flat.size))
        for i in np.unique(idx):
            m = idx == i
            out[:, m] = self.sols[i](flat[m])
        return out.reshape((2,) + t.shape)


def solve_riccati(curve: CoefficientCurve, n_steps: int = DEFAULT_GRID, w0=None,
                  T=None, rtol=1e-11, atol=1e-13) -> WProfile:
    """Solve the Riccati equation for ``w`` with adaptive embedded Runge-Kutta.

    Parameters
    ----------
    curve : CoefficientCurve
    n_steps : int
        Number of output grid points on ``[0, T]`` (at least 16).
    w0 : float, optional
        Initial value. Defaults to ``q(0) - r(0)``, which makes ``w = q - r``
        exact for every smooth curve.
    T : float, optional
        End of the solve, defaults to the curve horizon.

    Raises
    ------
    BlowUp
        If ``|w|`` exceeds 1e6 before ``T``; ``exc.time`` holds the time.

    Notes
    -----
    At a jump of a piecewise-constant curve the quantity
    ``(w + r - q) / sigma**2`` is kept continuous, which is what makes the
    ``x**2`` coefficient of ``f`` continuous across the jump.
    """
    if n_steps < 16:
        raise InvalidParameter("n_steps must be >= 16")
    T = curve.horizon if T is None else float(T)
    if not 0 < T <= curve.horizon * (1 + 1e-12):
        raise OutOfDomain(f"T={T} outside (0, {curve.horizon}]")
    T = min(T, curve.horizon)
    if w0 is None:
        w0 = float(curve.q(0.0) - curve.r(0.0))

    def rhs(t, y):
        b, lead = _riccati_rhs(curve, min(t, T))
        w = y[0]
        return [b + w * w + 2.0 * w * lead, w]

    def blowup(t, y):
        return abs(y[0]) - BLOWUP_LEVEL

    blowup.terminal = True

    breaks = [b for b in curve.jump_times if 0.0 < b < T]
    edges = [0.0, *breaks, T]
    state = np.array([w0, 0.0])
    sols = []
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if i > 0:
            # jump: keep (w + mu)/sigma**2 continuous
            left = np.nextafter(a, -np.inf)
            mu_l, mu_r = curve.mu(left), curve.mu(a)
            s_l, s_r = curve.sigma(left), curve.sigma(a)
            state[0] = (state[0] + mu_l) * (s_r / s_l) ** 2 - mu_r
        sol = solve_ivp(rhs, (a, b), state, method="DOP853", rtol=rtol, atol=atol,
                        dense_output=True, events=blowup)
        if sol.status == 1:
            raise BlowUp(f"Riccati solution exceeds {BLOWUP_LEVEL:g} at t={sol.t_events[0][0]:.6g}",
                         float(sol.t_events[0][0]))
        if not sol.success:
            raise BlowUp(f"Riccati integration failed: {sol.message}", float(sol.t[-1]))
        sols.append(sol.sol)
        state = sol.y[:, -1].copy()

    dense = _PiecewiseDense(edges, sols)
    t = _time_grid(T, n_steps, breaks)
    return WProfile(
        t=t,
        w=dense(t)[0],
        mode=TransformMode.RICCATI_NUMERIC,
        w_fn=lambda s: dense(s)[0],
        int_w_fn=lambda s: dense(s)[1],
        horizon=T,
    )


def closed_form_w(curve: ExponentialCurve, n_steps: int = DEFAULT_GRID, T=None) -> WProfile:
    """Exact ``w = q0 - r0 exp(-r_k t)`` for the exponential family."""
    if not isinstance(curve, ExponentialCurve):
        raise InvalidParameter("closed-form w exists only for the exponential family")
    T = curve.horizon if T is None else float(T)
    r0, q0, rk = curve.r0, curve.q0, curve.r_k

    def w_fn(s):
        return q0 - r0 * np.exp(-rk * np.asarray(s, dtype=float))

    def int_w_fn(s):
        s = np.asarray(s, dtype=float)
        decay = s if rk == 0.0 else -np.expm1(-rk * s) / rk
        return q0 * s - r0 * decay

    t = _time_grid(T, n_steps)
    return WProfile(t=t, w=w_fn(t), mode=TransformMode.CLOSED_FORM_EXPONENTIAL,
                    w_fn=w_fn, int_w_fn=int_w_fn, horizon=T)


def small_drift_w(curve: CoefficientCurve, D: float, n_steps: int = DEFAULT_GRID, T=None) -> WProfile:
    """Approximate solution ``w = sigma**2 / (D - int_0^t sigma**2)`` for small drift.

    ``D`` must exceed the total variance on ``[0, T]``.  A
    :class:`ValidityWarning` is emitted when ``sigma**2 < 10 |D (r - q)|``
    somewhere on the grid.
    """
    T = curve.horizon if T is None else float(T)
    total = curve.integrate("sigma_sq", 0.0, T)
    if not D > total:
        raise InvalidParameter(f"D={D} must exceed integrated variance {total:.6g}")
    D = float(D)
    t = _time_grid(T, n_steps, curve.jump_times)
    var = curve.sigma(t) ** 2
    if np.any(var < 10.0 * np.abs(D * curve.mu(t))):
        warnings.warn("small-drift approximation outside its validity range", ValidityWarning,
                      stacklevel=2)

    def w_fn(s):
        return curve.sigma(s) ** 2 / (D - curve.cumulative("sigma_sq", s))

    def int_w_fn(s):
        return -np.log1p(-curve.cumulative("sigma_sq", s) / D)

    return WProfile(t=t, w=w_fn(t), mode=TransformMode.SMALL_DRIFT, w_fn=w_fn,
                    int_w_fn=int_w_fn, horizon=T, D=D)


@dataclass(frozen=True)
class MovingBoundary:
    """Upper boundary ``y(tau)`` of the heat domain sampled on an increasing tau grid."""

    tau_grid: np.ndarray
    y: np.ndarray
    fn: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if np.any(np.diff(self.tau_grid) <= 0) or self.tau_grid[0] != 0.0:
            raise InvalidParameter("tau grid must start at 0 and increase strictly")
        if np.any(self.y <= 0):
            raise InvalidParameter("boundary must stay positive")

    def at(self, tau):
        """Boundary level at arbitrary ``tau`` (exact when built from a bundle)."""
        if self.fn is not None:
            return self.fn(tau)
        return np.interp(tau, self.tau_grid, self.y)

    @property
    def start(self):
        """``y(0)``, the boundary level at maturity."""
        return float(self.y[0])

    @property
    def end(self):
        """``y(tau_max)``, the boundary level at the valuation date."""
        return float(self.y[-1])

    @property
    def tau_max(self):
        return float(self.tau_grid[-1])


@dataclass(frozen=True)
class TransformBundle:
    """Transform quantities for one maturity ``T`` on a dense time grid."""

    curve: CoefficientCurve
    profile: WProfile = field(repr=False)
    T: float
    t_grid: np.ndarray
    w: np.ndarray
    g: np.ndarray
    k: np.ndarray
    a: np.ndarray
    tau: np.ndarray
    mode: TransformMode

    @property
    def tau0(self):
        """Heat time at valuation date ``t = 0``."""
        return float(self.tau[0])

    @cached_property
    def int_w_T(self):
        return float(self.profile.int_w_fn(self.T))

    @cached_property
    def at_maturity(self):
        """``(g, k, a)`` at ``t = T``."""
        T = self.T
        return float(self.g_at(T)), float(self.k_at(T)), float(self.a_at(T))

    @cached_property
    def at_start(self):
        """``(g, k, a)`` at ``t = 0``."""
        return float(self.g_at(0.0)), float(self.k_at(0.0)), float(self.a_at(0.0))

    # pointwise (exact, not interpolated) evaluations
    def _t(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12 * self.T) or np.any(t > self.T * (1 + 1e-12)):
            raise OutOfDomain(f"t outside [0, {self.T}]")
        return np.clip(t, 0.0, self.T)

    def w_at(self, t):
        return self.profile.w_fn(self._t(t))

    def g_at(self, t):
        return np.exp(self.profile.int_w_fn(self._t(t)))

    def k_at(self, t):
        t = self._t(t)
        c = self.curve
        return 0.5 * self.profile.int_w_fn(t) + 0.5 * (3.0 * c.cumulative("r", t) - c.cumulative("q", t))

    def a_at(self, t):
        t = self._t(t)
        g = self.g_at(t)
        return (self.w_at(t) + self.curve.mu(t)) / (2.0 * g ** 2 * self.curve.sigma(t) ** 2)

    def dtau_dt(self, t):
        t = self._t(t)
        return -0.5 * self.curve.sigma(t) ** 2 * self.g_at(t) ** 2

    def tau_at(self, t):
        """``tau(t)`` from the nearest grid node plus a local Gauss-Legendre integral."""
        t = self._t(t)
        flat = t.ravel()
        i = np.clip(np.searchsorted(self.t_grid, flat, side="right") - 1, 0, len(self.t_grid) - 2)
        left = self.t_grid[i]
        h = flat - left
        nodes = left[:, None] + h[:, None] * _GL_X[None, :]
        integrand = -self.dtau_dt(nodes)
        out = self.tau[i] - h * (integrand @ _GL_W)
        return out.reshape(t.shape)

    def eval_f(self, x, t):
        return eval_f(self, x, t)

    def invert_tau(self, tau):
        return invert_tau(self, tau)

    def moving_boundary(self, H, n_tau=201):
        return moving_boundary(self, H, n_tau)

    def to_csv(self, path):
        """Diagnostic dump with columns t, w, g, k, a, tau."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "w", "g", "k", "a", "tau"])
            for row in zip(self.t_grid, self.w, self.g, self.k, self.a, self.tau):
                out.writerow([repr(float(v)) for v in row])


def build_bundle(curve: CoefficientCurve, profile: WProfile, T=None) -> TransformBundle:
    """Assemble ``g``, ``k``, ``a`` and ``tau`` on the profile grid restricted to ``[0, T]``.

    Cumulative integrals use an 8-point Gauss-Legendre rule per grid interval
    with jump times of the curve as grid nodes.
    """
    T = profile.horizon if T is None else float(T)
    if T <= 0 or T > profile.horizon * (1 + 1e-12):
        raise OutOfDomain(f"maturity {T} outside (0, {profile.horizon}]")
    T = min(T, profile.horizon)
    n = max(16, int(round(len(profile.t) * T / profile.horizon)))
    t = _time_grid(T, n, curve.jump_times)

    int_w = profile.int_w_fn(t)
    w = profile.w_fn(t)
    g = np.exp(int_w)
    mu = curve.mu(t)
    sig = curve.sigma(t)
    k = 0.5 * int_w + 0.5 * (3.0 * curve.cumulative("r", t) - curve.cumulative("q", t))
    a = (w + mu) / (2.0 * g ** 2 * sig ** 2)

    # tau(t) = int_t^T 1/2 sigma^2 g^2, evaluated interval by interval
    h = np.diff(t)
    nodes = t[:-1, None] + h[:, None] * _GL_X[None, :]
    dens = 0.5 * curve.sigma(nodes) ** 2 * np.exp(2.0 * profile.int_w_fn(nodes))
    pieces = h * (dens @ _GL_W)
    tau = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])

    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise InvalidParameter("g(t) must stay positive and finite")
    return TransformBundle(curve=curve, profile=profile, T=T, t_grid=t, w=w, g=g, k=k, a=a,
                           tau=tau, mode=profile.mode)


def eval_f(bundle: TransformBundle, x, t):
    """``f(x, t) = k(t) - a(t) x**2``."""
    x = np.asarray(x, dtype=float)
    return bundle.k_at(t) - bundle.a_at(t) * x ** 2


def invert_tau(bundle: TransformBundle, tau):
    """Inverse time map ``t(tau)`` by safeguarded Newton on the exact ``tau(t)``."""
    tau = np.asarray(tau, dtype=float)
    tau0 = bundle.tau0
    if np.any(tau < -1e-12 * tau0) or np.any(tau > tau0 * (1 + 1e-12)):
        raise OutOfDomain(f"tau outside [0, {tau0}]")
    flat = np.clip(tau.ravel(), 0.0, tau0)
    # bracket on the grid: tau is decreasing in t
    rev_tau = bundle.tau[::-1]
    rev_t = bundle.t_grid[::-1]
    j = np.clip(np.searchsorted(rev_tau, flat, side="left"), 1, len(rev_tau) - 1)
    hi_t, lo_t = rev_t[j - 1], rev_t[j]
    t = np.interp(flat, rev_tau, rev_t)
    for _ in range(30):
        err = bundle.tau_at(t) - flat
        step = err / bundle.dtau_dt(t)
        t_new = np.clip(t - step, lo_t, hi_t)
        done = np.abs(t_new - t) <= 1e-15 * max(1.0, bundle.T)
        t = t_new
        if np.all(done):
            break
    t[flat == 0.0] = bundle.T
    t[flat == tau0] = 0.0
    return t.reshape(tau.shape)


def moving_boundary(bundle: TransformBundle, H, n_tau=201) -> MovingBoundary:
    """Barrier image ``y(tau) = H g(t(tau))`` on ``n_tau`` points spanning ``[0, tau(0)]``."""
    if not H > 0:
        raise InvalidParameter("barrier must be positive")
    H = float(H)
    tau_grid = np.linspace(0.0, bundle.tau0, n_tau)

    def fn(tau):
        return H * bundle.g_at(bundle.invert_tau(tau))

    return MovingBoundary(tau_grid=tau_grid, y=fn(tau_grid), fn=fn)
