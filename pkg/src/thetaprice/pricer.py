"""Option prices from heat-equation solutions expressed through theta functions.

For the Up-and-Out call the heat problem lives on ``0 < x < y(tau)`` with
``u = 0`` on both edges, and

    u(x, tau0) = 1/(2Y) [ int u(z, 0) D(x, z; w1) dz + int_0^tau0 Psi(s) D(x, y(s); w2(s)) ds ]

with ``Y = y(tau0)``, ``D = theta3(phi-) - theta3(phi+)``,
``w1 = exp(-(pi/Y)**2 tau0)`` and ``w2(s) = exp(-(pi/Y)**2 (tau0 - s))``.
The price is ``C = exp(f(x0, 0)) u(x0, tau0)`` with ``x0 = S0 g(0) = S0``.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import BarrierBreached, InvalidParameter, LatticeMismatch, PricingError
from .fredholm import (FredholmSolution, build_flux_system, solve_american_boundary,
                       solve_barrier_flux)
from .termstructure import CoefficientCurve
from .theta import theta_diff, theta_diff_dz
from .transform import TransformBundle, build_bundle, solve_riccati

__all__ = [
    "Product",
    "PricingRequest",
    "PriceSurface",
    "terminal_condition",
    "price_barrier_uo_call",
    "barrier_uo_call_parts",
    "price_american_call",
    "american_call_value",
    "price_vanilla",
    "effective_constants",
    "bachelier_call",
    "price_barrier_do_call",
    "barrier_surface",
    "vanilla_surface",
    "american_surface",
    "do_call_surface",
]


class Product(str, Enum):
    UP_OUT_CALL = "UpOutCall"
    DOWN_OUT_CALL = "DownOutCall"
    AMERICAN_CALL = "AmericanCall"
    EUROPEAN_CALL = "EuropeanCall"


@dataclass
class PricingRequest:
    """One pricing problem plus numerical knobs.

    ``K`` and ``T`` may be scalars or arrays when used to build a surface.
    """

    S0: float
    K: float | np.ndarray
    T: float | np.ndarray
    H: Optional[float] = None
    product: Product = Product.UP_OUT_CALL
    n_z: int = 401
    n_tau: int = 32
    n_p: int = 12
    lam: float | str = "auto"
    operator: str = "identity"
    no_psi: bool = False

    def __post_init__(self):
        self.product = Product(self.product)
        if not self.S0 > 0:
            raise InvalidParameter("S0 must be positive")
        if np.any(np.asarray(self.K) <= 0):
            raise InvalidParameter("strikes must be positive")
        if np.any(np.asarray(self.T) <= 0):
            raise InvalidParameter("maturities must be positive")
        if self.product in (Product.UP_OUT_CALL, Product.DOWN_OUT_CALL):
            if self.H is None or not self.H > 0:
                raise InvalidParameter("barrier products need H > 0")
            if self.product is Product.UP_OUT_CALL and self.S0 >= self.H:
                raise BarrierBreached(f"S0={self.S0} is at or above the barrier H={self.H}")
        if self.n_z < 3:
            raise InvalidParameter("n_z must be at least 3")
        if self.n_z % 2 == 0:
            self.n_z += 1


@dataclass
class PriceSurface:
    """Prices on a strike x maturity lattice with per-cell diagnostics."""

    strikes: np.ndarray
    maturities: np.ndarray
    prices: np.ndarray  # (n_K, n_T)
    method: str
    psi_share: Optional[np.ndarray] = None
    runtime_ms: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strikes = np.asarray(self.strikes, dtype=float)
        self.maturities = np.asarray(self.maturities, dtype=float)
        self.prices = np.asarray(self.prices, dtype=float).reshape(self.strikes.size, self.maturities.size)
        shape = self.prices.shape
        self.psi_share = np.zeros(shape) if self.psi_share is None else np.asarray(self.psi_share, float)
        self.runtime_ms = np.zeros(shape) if self.runtime_ms is None else np.asarray(self.runtime_ms, float)

    def rows(self):
        for j, T in enumerate(self.maturities):
            for i, K in enumerate(self.strikes):
                yield K, T, self.prices[i, j], self.method, self.psi_share[i, j], self.runtime_ms[i, j]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["K", "T", "price", "method", "psi_share", "runtime_ms"])
            for K, T, p, m, s, r in self.rows():
                runtime = "" if np.isnan(r) else f"{float(r):.3f}"
                out.writerow([repr(float(K)), repr(float(T)), repr(float(p)), m, repr(float(s)), runtime])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"K", "T", "price", "method", "psi_share", "runtime_ms"}:
            raise LatticeMismatch(f"{path}: not a price surface file")
        Ks = sorted({float(r["K"]) for r in rows})
        Ts = sorted({float(r["T"]) for r in rows})
        if len(rows) != len(Ks) * len(Ts):
            raise LatticeMismatch(f"{path}: lattice is not a full strike x maturity grid")
        prices = np.full((len(Ks), len(Ts)), np.nan)
        share = np.zeros_like(prices)
        runtime = np.zeros_like(prices)
        for r in rows:
            i, j = Ks.index(float(r["K"])), Ts.index(float(r["T"]))
            prices[i, j] = float(r["price"])
            share[i, j] = float(r["psi_share"])
            runtime[i, j] = float(r["runtime_ms"]) if r["runtime_ms"] else np.nan
        return cls(Ks, Ts, prices, rows[0]["method"], share, runtime)


# ---------------------------------------------------------------------------
# payoff in heat coordinates
# ---------------------------------------------------------------------------
def terminal_condition(bundle: TransformBundle, K):
    """Payoff ``u(z, 0) = (z exp(-int_0^T w) - K)^+ exp(-f(z, T))`` as a callable."""
    e_w = np.exp(-bundle.int_w_T)
    _, kT, aT = bundle.at_maturity

    def u0(z):
        z = np.asarray(z, dtype=float)
        return np.maximum(z * e_w - K, 0.0) * np.exp(-kT + aT * z * z)

    u0.K1 = K / e_w
    return u0


KERNEL_REACH = 12.0


def _simpson_nodes(a, b, n):
    z = np.linspace(a, b, n)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return z, w * (b - a) / (3.0 * (n - 1))


# ---------------------------------------------------------------------------
# Up-and-Out call
# ---------------------------------------------------------------------------
def barrier_uo_call_parts(request: PricingRequest, bundle: TransformBundle, boundary,
                          psi: Optional[FredholmSolution] = None, x=None):
    """Payoff and flux parts of ``u(x, tau0)`` plus the factor ``exp(f(x, 0))``.

    ``x`` defaults to ``S0``; an array evaluates ``u(., tau0)`` at several points.
    """
    K = float(request.K)
    tau0 = bundle.tau0
    Y = boundary.end
    y0 = boundary.start
    x0 = request.S0 * bundle.at_start[0] if x is None else np.asarray(x, dtype=float)
    u0 = terminal_condition(bundle, K)
    K1 = u0.K1
    kappa = (np.pi / Y) ** 2
    # the heat kernel is negligible beyond KERNEL_REACH widths from the evaluation points
    reach = KERNEL_REACH * np.sqrt(4.0 * tau0)
    lo = max(K1, float(np.min(x0)) - reach)
    hi = min(y0, float(np.max(x0)) + reach)
    if lo < hi:
        z, wz = _simpson_nodes(lo, hi, request.n_z)
        w1 = np.exp(-kappa * tau0)
        D = theta_diff(np.multiply.outer(x0, np.ones_like(z)), z, Y, w1)
        part_payoff = D @ (u0(z) * wz) / (2 * Y)
    else:
        part_payoff = np.zeros(np.shape(x0))
    part_flux = np.zeros(np.shape(x0))
    if psi is not None and not request.no_psi:
        s = np.asarray(psi.tau_grid)
        ys = psi.levels if getattr(psi, "levels", None) is not None else boundary.at(s)
        w2 = np.exp(-kappa * (tau0 - s))
        D2 = theta_diff(np.multiply.outer(x0, np.ones_like(s)), ys, Y, w2)
        part_flux = D2 @ (psi.psi * psi.weights) / (2 * Y)
    _, k_0, a_0 = bundle.at_start
    scale = np.exp(k_0 - a_0 * np.asarray(x0) ** 2)
    return part_payoff, part_flux, scale


def price_barrier_uo_call(request: PricingRequest, bundle: TransformBundle, boundary,
                          psi: Optional[FredholmSolution] = None) -> float:
    """Up-and-Out call price from the theta-function representation.

    Parameters
    ----------
    psi : FredholmSolution, optional
        Boundary flux.  Omitted (or ``request.no_psi``) drops the flux term.

    Raises
    ------
    BarrierBreached
        If ``S0 >= H``.
    """
    if request.H is not None and request.S0 >= request.H:
        raise BarrierBreached(f"S0={request.S0} is at or above the barrier H={request.H}")
    a, b, scale = barrier_uo_call_parts(request, bundle, boundary, psi)
    return float(max(scale * (a + b), 0.0))


# ---------------------------------------------------------------------------
# European call
# ---------------------------------------------------------------------------
def bachelier_call(forward, K, variance, discount):
    """``discount * E[(X - K)^+]`` for ``X ~ N(forward, variance)``."""
    forward, K, variance = np.broadcast_arrays(np.asarray(forward, float), np.asarray(K, float),
                                               np.asarray(variance, float))
    sd = np.sqrt(np.maximum(variance, 0.0))
    intrinsic = np.maximum(forward - K, 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d = (forward - K) / sd
        val = (forward - K) * ndtr(d) + sd * np.exp(-0.5 * d * d) / np.sqrt(2 * np.pi)
    out = discount * np.where(sd > 0, val, intrinsic)
    return out if out.ndim else float(out)


def effective_constants(curve: CoefficientCurve, T):
    """Time-averaged ``(r, q, sigma)`` over ``[0, T]``."""
    return (curve.integrate("r", 0.0, T) / T, curve.integrate("q", 0.0, T) / T,
            np.sqrt(curve.integrate("sigma_sq", 0.0, T) / T))


def _terminal_moments(curve, T):
    """Growth factor ``exp(int mu)`` and variance ``int sigma^2 exp(2 int_s^T mu)`` of ``S_T``."""
    M = curve.integrate("r", 0.0, T) - curve.integrate("q", 0.0, T)
    r0, q0 = curve.r(0.0), curve.q(0.0)
    const_mu = float(np.ptp(np.atleast_1d(curve.mu(np.linspace(0.0, T, 9))))) == 0.0
    sig = curve.sigma(np.linspace(0.0, T, 9))
    if const_mu and float(np.ptp(sig)) == 0.0:
        mu = float(r0 - q0)
        s2 = float(sig[0]) ** 2
        var = s2 * T if mu == 0.0 else s2 * np.expm1(2 * mu * T) / (2 * mu)
        return np.exp(M), var

    def integrand(s):
        cum = curve.integrate("r", 0.0, s) - curve.integrate("q", 0.0, s)
        return curve.sigma(s) ** 2 * np.exp(2.0 * (M - cum))

    return np.exp(M), curve.integrate(integrand, 0.0, T)


def price_vanilla(curve: CoefficientCurve, S0, K, T):
    """European call under ``dS = (r - q) S dt + sigma dW``.

    ``S_T`` is Gaussian with mean ``S0 exp(int mu)`` and variance
    ``int_0^T sigma^2 exp(2 int_s^T mu) ds``; the price is the discounted
    normal call formula.
    """
    growth, var = _terminal_moments(curve, T)
    disc = np.exp(-curve.integrate("r", 0.0, T))
    return bachelier_call(S0 * growth, K, var, disc)


def price_barrier_do_call(request: PricingRequest, curve, bundle, boundary, psi=None):
    """Barrier call by parity: ``C_van - C_uo``.

    This is the knock-in complement of the Up-and-Out call at the same
    barrier.
    """
    van = price_vanilla(curve, request.S0, float(request.K), bundle.T)
    up = price_barrier_uo_call(request, bundle, boundary, psi)
    return float(van - up)


# ---------------------------------------------------------------------------
# American call
# ---------------------------------------------------------------------------
def american_call_value(bundle: TransformBundle, K, boundary_sol: FredholmSolution, x, n_z=401):
    """``u(x, tau0)`` of the American call from the exercise boundary.

    The heat problem sits on ``x_lo < x < y(tau)`` with value matching and
    smooth pasting at ``y``.  With ``Lam = Ybar - x_lo``,

        u = 1/(2 Lam) [ int u0 D dz + int_0^tau0 ((psi1 y' + Psi) D - psi1 dD/deta) ds ]

    where ``D`` is the theta difference on ``[x_lo, Ybar]`` in shifted
    coordinates.
    """
    geo = boundary_sol.geometry
    x_lo, top = geo["x_lo"], geo["top"]
    Lam = top - x_lo
    kappa = (np.pi / Lam) ** 2
    tau0 = bundle.tau0
    x = np.asarray(x, dtype=float)
    xi = x - x_lo
    u0 = terminal_condition(bundle, K)
    K1, y0 = u0.K1, geo["y0"]
    total = np.zeros(x.shape)
    if y0 > K1:
        z, wz = _simpson_nodes(K1, y0, n_z)
        D = theta_diff(np.multiply.outer(xi, np.ones_like(z)), z - x_lo, Lam, np.exp(-kappa * tau0))
        total = total + D @ (u0(z) * wz)
    v, wv = geo["v"], geo["wv"]
    s = v * v
    eta = geo["y"] - x_lo
    om = np.exp(-kappa * (tau0 - s))
    xx = np.multiply.outer(xi, np.ones_like(s))
    D = theta_diff(xx, eta, Lam, om)
    dD = theta_diff_dz(xx, eta, Lam, om)
    # ds = 2 v dv and y' ds = y_v dv
    src = geo["psi1"] * geo["y_v"] + 2 * v * geo["Psi"]
    total = total + D @ (src * wv) - dD @ (2 * v * geo["psi1"] * wv)
    return total / (2 * Lam)


def price_american_call(request: PricingRequest, bundle: TransformBundle,
                        solution: Optional[FredholmSolution] = None, curve=None) -> float:
    """American call price.

    Without dividends (``q <= 0`` throughout) early exercise is never optimal
    and the European price is returned.  In the exercise region the
    intrinsic value is returned, and the result is floored at intrinsic.
    """
    curve = curve or bundle.curve
    K = float(request.K)
    T = bundle.T
    intrinsic = max(request.S0 - K, 0.0)
    euro = price_vanilla(curve, request.S0, K, T)
    if solution is None:
        if _no_dividends(curve, T):
            return float(max(euro, intrinsic))
        solution = solve_american_boundary(bundle, K, x0=request.S0)
    if solution.geometry is None or solution.geometry.get("european", False):
        return float(max(euro, intrinsic))
    x0 = request.S0 * float(bundle.g_at(0.0))
    if x0 >= solution.geometry["Y"]:
        return float(intrinsic)
    u = float(american_call_value(bundle, K, solution, x0, request.n_z))
    price = float(np.exp(bundle.eval_f(x0, 0.0)) * u)
    return float(max(price, intrinsic))


def _no_dividends(curve, T):
    ts = np.linspace(0.0, T, 65)
    return bool(np.all(curve.q(ts) <= 0.0))


# ---------------------------------------------------------------------------
# lattices
# ---------------------------------------------------------------------------
STAGES = ("transform", "fredholm", "pricing")


def _profile_for(curve, maturities, profile=None):
    if profile is not None:
        return profile
    return solve_riccati(curve, T=float(np.max(maturities)))


def _map_columns(fn, maturities, threads):
    if threads and threads > 1 and len(maturities) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, maturities))
    return [fn(T) for T in maturities]


def _assemble(strikes, maturities, columns, method, timings):
    prices = np.column_stack([c["price"] for c in columns])
    share = np.column_stack([c["share"] for c in columns])
    runtime = np.column_stack([c["runtime"] for c in columns])
    diag = {}
    for key in columns[0]["diag"]:
        diag[key] = np.column_stack([c["diag"][key] for c in columns])
    for c in columns:
        for key, val in c["timings"].items():
            timings[key] = timings.get(key, 0.0) + val
    return PriceSurface(strikes, maturities, prices, method, share, runtime, diag, timings)


def _barrier_column(curve, profile, S0, H, strikes, T, n_z, n_tau, n_p, lam, operator, no_psi):
    timings = dict.fromkeys(STAGES, 0.0)
    t0 = time.perf_counter()
    bundle = build_bundle(curve, profile, T=T)
    boundary = bundle.moving_boundary(H, n_tau=33)
    t1 = time.perf_counter()
    timings["transform"] += t1 - t0
    system = None if no_psi else build_flux_system(bundle, H, n_tau=n_tau, n_p=n_p, operator=operator,
                                                   boundary=boundary)
    shared = time.perf_counter() - t0
    timings["fredholm"] += time.perf_counter() - t1
    n = strikes.size
    col = dict(price=np.zeros(n), share=np.zeros(n), runtime=np.zeros(n),
               diag=dict(lam=np.full(n, np.nan), residual=np.full(n, np.nan)), timings=timings)
    y0 = boundary.start
    for i, K in enumerate(strikes):
        with _cell(K, T):
            _barrier_cell(col, i, K, T, S0, H, bundle, boundary, system, y0, shared / n, timings,
                          n_z, n_tau, n_p, lam, operator, no_psi)
    return col


class _cell:
    """Attach ``(K, T)`` to numerical errors raised while pricing one cell."""

    def __init__(self, K, T):
        self.where = {"K": float(K), "T": float(T)}

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None and isinstance(exc, (PricingError, ArithmeticError)) and not hasattr(exc, "cell"):
            exc.cell = self.where
        return False


def _barrier_cell(col, i, K, T, S0, H, bundle, boundary, system, y0, shared, timings,
                  n_z, n_tau, n_p, lam, operator, no_psi):
    c0 = time.perf_counter()
    req = PricingRequest(S0=S0, K=K, T=T, H=H, n_z=n_z, n_tau=n_tau, n_p=n_p, lam=lam,
                         operator=operator, no_psi=no_psi)
    sol = None
    if system is not None and K * np.exp(bundle.int_w_T) < y0:
        sol = solve_barrier_flux(system, K, lam=lam)
        sol.levels = system.y
        col["diag"]["lam"][i] = sol.regularization_lambda
        col["diag"]["residual"][i] = sol.residual_norm
    c1 = time.perf_counter()
    timings["fredholm"] += c1 - c0
    a, b, scale = barrier_uo_call_parts(req, bundle, boundary, sol)
    col["price"][i] = max(scale * (a + b), 0.0)
    total = abs(a) + abs(b)
    col["share"][i] = abs(b) / total if total > 0 else 0.0
    c2 = time.perf_counter()
    timings["pricing"] += c2 - c1
    col["runtime"][i] = 1e3 * (c2 - c0 + shared)


def barrier_surface(curve: CoefficientCurve, S0, H, strikes: Sequence[float], maturities: Sequence[float],
                    n_z=401, n_tau=32, n_p=12, lam="auto", operator="identity", no_psi=False,
                    profile=None, timings=None, threads=1) -> PriceSurface:
    """Up-and-Out call prices on a strike x maturity lattice.

    One Riccati solve serves every maturity; each maturity builds one
    Fredholm matrix shared by all its strikes.  ``psi_share`` is the
    magnitude of the flux term relative to the total.
    """
    strikes = np.asarray(strikes, dtype=float)
    maturities = np.asarray(maturities, dtype=float)
    if S0 >= H:
        raise BarrierBreached(f"S0={S0} is at or above the barrier H={H}")
    timings = {} if timings is None else timings
    t0 = time.perf_counter()
    profile = _profile_for(curve, maturities, profile)
    timings["transform"] = timings.get("transform", 0.0) + time.perf_counter() - t0

    def column(T):
        return _barrier_column(curve, profile, S0, H, strikes, float(T), n_z, n_tau, n_p, lam,
                               operator, no_psi)

    columns = _map_columns(column, maturities, threads)
    return _assemble(strikes, maturities, columns, "semi", timings)


def vanilla_surface(curve, S0, strikes, maturities, timings=None, threads=1) -> PriceSurface:
    """European call prices on a lattice."""
    strikes = np.asarray(strikes, dtype=float)
    maturities = np.asarray(maturities, dtype=float)
    timings = {} if timings is None else timings

    def column(T):
        n = strikes.size
        col = dict(price=np.zeros(n), share=np.zeros(n), runtime=np.zeros(n), diag={},
                   timings=dict.fromkeys(STAGES, 0.0))
        for i, K in enumerate(strikes):
            c0 = time.perf_counter()
            col["price"][i] = price_vanilla(curve, S0, K, float(T))
            col["runtime"][i] = 1e3 * (time.perf_counter() - c0)
        col["timings"]["pricing"] = 1e-3 * col["runtime"].sum()
        return col

    return _assemble(strikes, maturities, _map_columns(column, maturities, threads), "semi", timings)


def american_surface(curve, S0, strikes, maturities, n_tau=10, n_p=16, n_z=401, profile=None,
                     timings=None, threads=1) -> PriceSurface:
    """American call prices on a lattice; ``psi_share`` holds the early-exercise premium share."""
    strikes = np.asarray(strikes, dtype=float)
    maturities = np.asarray(maturities, dtype=float)
    timings = {} if timings is None else timings
    t0 = time.perf_counter()
    profile = _profile_for(curve, maturities, profile)
    timings["transform"] = timings.get("transform", 0.0) + time.perf_counter() - t0

    def column(T):
        T = float(T)
        tim = dict.fromkeys(STAGES, 0.0)
        n = strikes.size
        col = dict(price=np.zeros(n), share=np.zeros(n), runtime=np.zeros(n),
                   diag=dict(iterations=np.zeros(n), residual=np.full(n, np.nan)), timings=tim)
        a0 = time.perf_counter()
        bundle = build_bundle(curve, profile, T=T)
        tim["transform"] += time.perf_counter() - a0
        for i, K in enumerate(strikes):
            c0 = time.perf_counter()
            req = PricingRequest(S0=S0, K=K, T=T, product=Product.AMERICAN_CALL, n_z=n_z, n_tau=n_tau)
            sol = None
            if not _no_dividends(curve, T):
                with _cell(K, T):
                    sol = solve_american_boundary(bundle, K, n_tau=n_tau, n_p=n_p, x0=S0)
                col["diag"]["iterations"][i] = sol.iterations
                col["diag"]["residual"][i] = sol.residual_norm
            c1 = time.perf_counter()
            tim["fredholm"] += c1 - c0
            price = price_american_call(req, bundle, sol, curve=curve)
            euro = price_vanilla(curve, S0, K, T)
            col["price"][i] = price
            col["share"][i] = (price - euro) / price if price > 0 else 0.0
            c2 = time.perf_counter()
            tim["pricing"] += c2 - c1
            col["runtime"][i] = 1e3 * (c2 - c0)
        return col

    return _assemble(strikes, maturities, _map_columns(column, maturities, threads), "semi", timings)


def do_call_surface(curve, S0, H, strikes, maturities, threads=1, **kw) -> PriceSurface:
    """Parity complement ``C_van - C_uo`` on a lattice."""
    timings = kw.pop("timings", None)
    up = barrier_surface(curve, S0, H, strikes, maturities, threads=threads, timings=timings, **kw)
    van = vanilla_surface(curve, S0, strikes, maturities, timings=up.timings)
    return PriceSurface(up.strikes, up.maturities, van.prices - up.prices, "semi", up.psi_share,
                        up.runtime_ms + van.runtime_ms, up.diagnostics, up.timings)
