"""Deterministic model inputs r(t), q(t), sigma(t).

The stock follows ``dS = (r - q) S dt + sigma dW`` where ``sigma`` is an
absolute (normal) volatility in currency units per sqrt(year).  Curves are
immutable once built and are evaluated on ``[0, horizon]`` only.
"""
from __future__ import annotations

from enum import Enum
from typing import Callable, Union

import numpy as np
from scipy import integrate as _quad
from scipy.interpolate import PchipInterpolator, PPoly

from .errors import InvalidParameter, OutOfDomain, QuadratureFailure

__all__ = [
    "CurveKind",
    "CoefficientCurve",
    "ExponentialCurve",
    "PiecewiseConstantCurve",
    "SampledCurve",
    "evaluate",
    "integrate",
]

_SLACK = 1e-12
_QUAD_RTOL = 1e-10
_QUAD_ATOL = 1e-14


class CurveKind(str, Enum):
    EXPONENTIAL = "exponential"
    PIECEWISE_CONSTANT = "piecewise_constant"
    SAMPLED = "sampled"


Selector = Union[str, Callable[[np.ndarray], np.ndarray]]


class CoefficientCurve:
    """Base class: subclasses provide ``r``, ``q``, ``sigma`` and derivatives."""

    kind: CurveKind
    horizon: float

    def __init__(self, horizon):
        horizon = float(horizon)
        if not np.isfinite(horizon) or horizon <= 0:
            raise InvalidParameter(f"horizon must be positive, got {horizon}")
        self.horizon = horizon

    # -- domain handling -------------------------------------------------
    def _check(self, t):
        t = np.asarray(t, dtype=float)
        tol = _SLACK * max(1.0, self.horizon)
        if np.any(t < -tol) or np.any(t > self.horizon + tol) or np.any(np.isnan(t)):
            raise OutOfDomain(
                f"time outside [0, {self.horizon}]: "
                f"min={np.min(t):.6g}, max={np.max(t):.6g}"
            )
        return np.clip(t, 0.0, self.horizon)

    # -- evaluation -------------------------------------------------------
    def r(self, t):
        raise NotImplementedError

    def q(self, t):
        raise NotImplementedError

    def sigma(self, t):
        raise NotImplementedError

    def dr(self, t):
        raise NotImplementedError

    def dq(self, t):
        raise NotImplementedError

    def dsigma(self, t):
        raise NotImplementedError

    def mu(self, t):
        """Drift rate r(t) - q(t)."""
        return self.r(t) - self.q(t)

    def eval(self, t):
        """Return ``(r, q, sigma)`` at ``t``."""
        return self.r(t), self.q(t), self.sigma(t)

    @property
    def jump_times(self):
        """Interior times where a coefficient is discontinuous."""
        return np.empty(0)

    # -- integration ------------------------------------------------------
    def _analytic_integral(self, name, t0, t1):
        return None

    def cumulative(self, selector, t):
        """Vectorized ``integral_0^t`` of ``r``, ``q`` or ``sigma_sq``."""
        t = self._check(t)
        flat = t.ravel()
        out = np.array([self.integrate(selector, 0.0, float(s)) for s in flat])
        return out.reshape(t.shape)

    def integrate(self, selector: Selector, t0, t1):
        """Integral of ``r``, ``q``, ``sigma_sq`` or a callable over ``[t0, t1]``.

        Analytic where the curve family allows it, otherwise adaptive
        Gauss-Kronrod quadrature to relative tolerance 1e-10.
        """
        t0 = float(self._check(t0))
        t1 = float(self._check(t1))
        if t0 > t1:
            raise OutOfDomain(f"integration bounds reversed: {t0} > {t1}")
        if t0 == t1:
            return 0.0
        if isinstance(selector, str):
            if selector not in ("r", "q", "sigma_sq"):
                raise InvalidParameter(f"unknown selector {selector!r}")
            exact = self._analytic_integral(selector, t0, t1)
            if exact is not None:
                return float(exact)
            fn = {
                "r": self.r,
                "q": self.q,
                "sigma_sq": lambda s: self.sigma(s) ** 2,
            }[selector]
        else:
            fn = selector
        return _adaptive_quad(fn, t0, t1, self.jump_times)


def _adaptive_quad(fn, t0, t1, breaks=()):
    pts = [b for b in np.asarray(breaks, dtype=float) if t0 < b < t1]
    total = 0.0
    edges = [t0, *pts, t1]
    for a, b in zip(edges[:-1], edges[1:]):
        val, err, info = _quad.quad(
            lambda s: float(fn(s)), a, b,
            epsabs=_QUAD_ATOL, epsrel=_QUAD_RTOL, limit=200, full_output=1,
        )[:3]
        if err > max(_QUAD_ATOL, _QUAD_RTOL * abs(val)) * 10:
            raise QuadratureFailure(
                f"quadrature on [{a}, {b}] reached error {err:.3g} for value {val:.6g}"
            )
        total += val
    return total


class ExponentialCurve(CoefficientCurve):
    """``r = r0 exp(-r_k t)``, ``q = q0``, ``sigma = sigma0 exp(-sigma_k t)``."""

    kind = CurveKind.EXPONENTIAL

    def __init__(self, r0, q0, sigma0, r_k, sigma_k, horizon):
        super().__init__(horizon)
        self.r0, self.q0, self.sigma0 = float(r0), float(q0), float(sigma0)
        self.r_k, self.sigma_k = float(r_k), float(sigma_k)
        if self.sigma0 <= 0:
            raise InvalidParameter("sigma0 must be positive")

    @property
    def params(self):
        return dict(r0=self.r0, q0=self.q0, sigma0=self.sigma0,
                    r_k=self.r_k, sigma_k=self.sigma_k, horizon=self.horizon)

    def r(self, t):
        t = self._check(t)
        return self.r0 * np.exp(-self.r_k * t)

    def q(self, t):
        t = self._check(t)
        return np.full_like(t, self.q0)

    def sigma(self, t):
        t = self._check(t)
        return self.sigma0 * np.exp(-self.sigma_k * t)

    def dr(self, t):
        return -self.r_k * self.r(t)

    def dq(self, t):
        return np.zeros_like(self._check(t))

    def dsigma(self, t):
        return -self.sigma_k * self.sigma(t)

    def cumulative(self, selector, t):
        t = self._check(t)
        if selector == "r":
            return self.r0 * _expint_vec(self.r_k, t)
        if selector == "q":
            return self.q0 * t
        if selector == "sigma_sq":
            return self.sigma0 ** 2 * _expint_vec(2.0 * self.sigma_k, t)
        return super().cumulative(selector, t)

    def _analytic_integral(self, name, t0, t1):
        if name == "r":
            return self.r0 * _expint(self.r_k, t0, t1)
        if name == "q":
            return self.q0 * (t1 - t0)
        return self.sigma0 ** 2 * _expint(2.0 * self.sigma_k, t0, t1)


def _expint(k, t0, t1):
    """Integral of exp(-k s) over [t0, t1], stable for k -> 0."""
    if abs(k) * (t1 - t0) < 1e-8:
        d = t1 - t0
        return np.exp(-k * t0) * d * (1.0 - 0.5 * k * d)
    return np.exp(-k * t0) * (-np.expm1(-k * (t1 - t0))) / k


def _expint_vec(k, t):
    """Integral of exp(-k s) over [0, t] for an array of ``t``."""
    if k == 0.0:
        return t.copy()
    return -np.expm1(-k * t) / k


class PiecewiseConstantCurve(CoefficientCurve):
    """Right-continuous step functions; ``values[i]`` holds on ``[knots[i], knots[i+1])``."""

    kind = CurveKind.PIECEWISE_CONSTANT

    def __init__(self, knots, r, q, sigma, horizon):
        super().__init__(horizon)
        knots = np.atleast_1d(np.asarray(knots, dtype=float))
        r, q, sigma = (np.broadcast_to(np.atleast_1d(np.asarray(v, dtype=float)),
                                       knots.shape).copy() for v in (r, q, sigma))
        if knots[0] != 0.0 or np.any(np.diff(knots) <= 0) or knots[-1] >= self.horizon:
            raise InvalidParameter("knots must start at 0, increase strictly and lie below horizon")
        if np.any(sigma <= 0):
            raise InvalidParameter("sigma must be positive on every piece")
        self.knots, self.r_values, self.q_values, self.sigma_values = knots, r, q, sigma
        self._edges = np.append(knots, self.horizon)

    @property
    def params(self):
        return dict(knots=self.knots.tolist(), r=self.r_values.tolist(),
                    q=self.q_values.tolist(), sigma=self.sigma_values.tolist(),
                    horizon=self.horizon)

    @property
    def jump_times(self):
        return self.knots[1:]

    def _piece(self, t):
        t = self._check(t)
        return np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.knots) - 1)

    def r(self, t):
        return self.r_values[self._piece(t)]

    def q(self, t):
        return self.q_values[self._piece(t)]

    def sigma(self, t):
        return self.sigma_values[self._piece(t)]

    def dr(self, t):
        return np.zeros_like(self._check(t))

    dq = dr
    dsigma = dr

    def cumulative(self, selector, t):
        t = self._check(t)
        vals = {"r": self.r_values, "q": self.q_values, "sigma_sq": self.sigma_values ** 2}.get(selector)
        if vals is None:
            return super().cumulative(selector, t)
        lengths = np.diff(self._edges)
        base = np.concatenate([[0.0], np.cumsum(vals * lengths)])
        i = self._piece(t)
        return base[i] + vals[i] * (t - self.knots[i])

    def _analytic_integral(self, name, t0, t1):
        vals = {"r": self.r_values, "q": self.q_values, "sigma_sq": self.sigma_values ** 2}[name]
        lo = np.clip(self._edges[:-1], t0, t1)
        hi = np.clip(self._edges[1:], t0, t1)
        return float(np.sum(vals * (hi - lo)))


class SampledCurve(CoefficientCurve):
    """Curves sampled at knots, joined by monotone cubic (PCHIP) interpolation.

    Derivatives come from the interpolant, so ``b(t)`` in the Riccati
    equation stays continuous.
    """

    kind = CurveKind.SAMPLED

    def __init__(self, times, r, q, sigma, horizon=None):
        times = np.asarray(times, dtype=float)
        super().__init__(times[-1] if horizon is None else horizon)
        if times.size < 2 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise InvalidParameter("sample times must start at 0 and increase strictly")
        if times[-1] < self.horizon * (1 - _SLACK):
            raise InvalidParameter("samples must cover the horizon")
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            raise InvalidParameter("sigma samples must be positive")
        self.times = times
        self._r = PchipInterpolator(times, np.asarray(r, dtype=float))
        self._q = PchipInterpolator(times, np.asarray(q, dtype=float))
        self._s = PchipInterpolator(times, sigma)
        self._dr, self._dq, self._ds = (f.derivative() for f in (self._r, self._q, self._s))
        self._int_r = self._r.antiderivative()
        self._int_q = self._q.antiderivative()
        self._int_s2 = _square(self._s).antiderivative()
        self._raw = dict(times=times.tolist(), r=list(map(float, r)), q=list(map(float, q)),
                         sigma=sigma.tolist(), horizon=self.horizon)

    @property
    def params(self):
        return dict(self._raw)

    def r(self, t):
        return self._r(self._check(t))

    def q(self, t):
        return self._q(self._check(t))

    def sigma(self, t):
        return self._s(self._check(t))

    def dr(self, t):
        return self._dr(self._check(t))

    def dq(self, t):
        return self._dq(self._check(t))

    def dsigma(self, t):
        return self._ds(self._check(t))

    def cumulative(self, selector, t):
        t = self._check(t)
        f = {"r": self._int_r, "q": self._int_q, "sigma_sq": self._int_s2}.get(selector)
        if f is None:
            return super().cumulative(selector, t)
        return f(t) - f(0.0)

    def _analytic_integral(self, name, t0, t1):
        f = {"r": self._int_r, "q": self._int_q, "sigma_sq": self._int_s2}[name]
        return f(t1) - f(t0)


def _square(pp):
    """Exact square of a piecewise cubic as a piecewise sextic."""
    c = pp.c
    k = c.shape[0]
    out = np.zeros((2 * k - 1, c.shape[1]))
    for i in range(k):
        for j in range(k):
            # PPoly coefficients are ordered from the highest power down
            out[i + j] += c[i] * c[j]
    return PPoly(out, pp.x)


def evaluate(curve: CoefficientCurve, t):
    """Module-level form of :meth:`CoefficientCurve.eval`."""
    return curve.eval(t)


def integrate(curve: CoefficientCurve, selector: Selector, t0, t1):
    """Module-level form of :meth:`CoefficientCurve.integrate`."""
    return curve.integrate(selector, t0, t1)
