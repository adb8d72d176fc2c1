"""Backward finite-difference solver for the pricing PDE

    C_t + 1/2 sigma(t)^2 C_SS + (r - q) S C_S = r C

on a non-uniform grid.  The first ``rannacher_steps`` steps are fully
implicit, the rest Crank-Nicolson.  Used as an independent oracle for the
semi-analytic pricer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import InstabilityDetected, InvalidParameter
from .termstructure import CoefficientCurve

__all__ = [
    "FDGrid",
    "FDResult",
    "make_grid",
    "solve_backward",
    "solve_american_projected",
    "fd_barrier_uo_call",
    "fd_vanilla_call",
    "fd_american_call",
    "fd_barrier_do_call",
    "fd_surface",
]


@dataclass(frozen=True)
class FDGrid:
    """Space nodes, uniform time steps and the number of implicit start-up steps."""

    S: np.ndarray
    T: float
    M: int
    rannacher_steps: int = 4

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.ndim != 1 or S.size < 51:
            raise InvalidParameter("need at least 51 space nodes")
        if np.any(np.diff(S) <= 0):
            raise InvalidParameter("space nodes must be strictly increasing")
        if self.M < 10:
            raise InvalidParameter("need at least 10 time steps")
        if not self.T > 0:
            raise InvalidParameter("maturity must be positive")
        if self.rannacher_steps < 0:
            raise InvalidParameter("rannacher_steps must be non-negative")
        object.__setattr__(self, "S", S)

    @property
    def dt(self):
        return self.T / self.M

    def index_of(self, level):
        i = int(np.argmin(np.abs(self.S - level)))
        return i


@dataclass
class FDResult:
    """Values at ``t = 0`` on the grid, with an optional exercise boundary."""

    grid: FDGrid
    values: np.ndarray
    boundary_t: np.ndarray | None = None
    boundary_S: np.ndarray | None = None

    def price(self, S0):
        """Cubic interpolation of the grid values at ``S0``."""
        from scipy.interpolate import CubicSpline

        return float(CubicSpline(self.grid.S, self.values)(S0))


def make_grid(S_lo, S_hi, anchors, N=201, T=1.0, M=None, dt=None, stretch=None,
              rannacher_steps=4) -> FDGrid:
    """Grid clustered near ``anchors`` through multi-point sinh stretching.

    The map ``xi(S) = sum_a asinh((S - a)/c) + S/c`` is sampled uniformly in
    ``xi``; each anchor is then moved onto its nearest node.  ``c`` defaults to
    a fifth of the largest anchor.
    """
    anchors = sorted(float(a) for a in anchors if S_lo < a <= S_hi)
    if not S_hi > S_lo:
        raise InvalidParameter("empty space interval")
    if N < 51:
        raise InvalidParameter("need at least 51 space nodes")
    c = stretch if stretch is not None else 0.2 * max(anchors + [abs(S_hi)])
    fine = np.linspace(S_lo, S_hi, 20 * N + 1)
    xi = fine / c + sum(np.arcsinh((fine - a) / c) for a in anchors)
    S = np.interp(np.linspace(xi[0], xi[-1], N), xi, fine)
    S[0], S[-1] = S_lo, S_hi
    for a in anchors:
        i = int(np.argmin(np.abs(S[1:-1] - a))) + 1 if not np.isclose(a, S_hi) else N - 1
        S[i] = a
    if np.any(np.diff(S) <= 0):
        raise InvalidParameter("anchors too close for the requested grid size")
    if M is None:
        if dt is None:
            raise InvalidParameter("give either M or dt")
        M = max(10, int(np.ceil(T / dt - 1e-9)))
    return FDGrid(S=S, T=float(T), M=int(M), rannacher_steps=rannacher_steps)


def _operator(curve, S, t):
    """Tridiagonal coefficients (lower, diag, upper) of the spatial operator at time ``t``."""
    r, q, sig = (float(v) for v in curve.eval(t))
    mu = r - q
    hm = S[1:-1] - S[:-2]
    hp = S[2:] - S[1:-1]
    diff = 0.5 * sig * sig
    conv = mu * S[1:-1]
    lo = (2 * diff - conv * hp) / (hm * (hm + hp))
    up = (2 * diff + conv * hm) / (hp * (hm + hp))
    di = -(2 * diff) / (hm * hp) + conv * (hp - hm) / (hm * hp) - r
    return lo, di, up, r, mu


class _Stepper:
    """Builds and solves the theta-scheme system for one time step."""

    def __init__(self, curve, grid, lower, upper):
        self.curve = curve
        self.S = grid.S
        self.lower = lower  # "zero"
        self.upper = upper  # "zero" or "linear"
        self.n = grid.S.size

    def _interior_apply(self, V, lo, di, up):
        return lo * V[:-2] + di * V[1:-1] + up * V[2:]

    def system(self, V, t_old, t_new, dt, theta):
        """Return banded matrix ``ab`` and right-hand side for ``V(t_new)``."""
        n, S = self.n, self.S
        lo0, di0, up0, _, _ = _operator(self.curve, S, t_old)
        lo1, di1, up1, r1, mu1 = _operator(self.curve, S, t_new)
        rhs = np.empty(n)
        rhs[1:-1] = V[1:-1] + (1 - theta) * dt * self._interior_apply(V, lo0, di0, up0)
        ab = np.zeros((3, n))
        ab[0, 2:] = -theta * dt * up1
        ab[1, 1:-1] = 1 - theta * dt * di1
        ab[2, :-2] = -theta * dt * lo1
        # lower boundary: Dirichlet zero
        ab[1, 0] = 1.0
        rhs[0] = 0.0
        if self.upper == "zero":
            ab[1, -1] = 1.0
            rhs[-1] = 0.0
        else:
            # linearity V_N = (1 + h_N/h_{N-1}) V_{N-1} - (h_N/h_{N-1}) V_{N-2},
            # substituted into row N-1; V_N is filled in after the solve
            ratio = (S[-1] - S[-2]) / (S[-2] - S[-3])
            a_up = ab[0, n - 1]
            ab[2, n - 3] -= ratio * a_up
            ab[1, n - 2] += (1 + ratio) * a_up
            ab[0, n - 1] = 0.0
            ab[1, -1] = 1.0
            rhs[-1] = 0.0
            self._closure = ratio
        return ab, rhs

    def finish(self, V):
        if self.upper == "linear":
            ratio = self._closure
            V[-1] = (1 + ratio) * V[-2] - ratio * V[-3]
        return V


def _solve_linear(ab, rhs, upper=None):
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def _run(curve, grid, payoff_vals, upper, exercise=None, cap=None):
    stepper = _Stepper(curve, grid, "zero", upper)
    V = payoff_vals.astype(float).copy()
    if upper == "zero":
        V[-1] = 0.0
    V[0] = 0.0 if exercise is None else max(V[0], 0.0)
    cap = cap if cap is not None else 10.0 * max(np.max(np.abs(payoff_vals)), 1e-300)
    dt, T = grid.dt, grid.T
    bnd_t, bnd_S = [], []
    for m in range(grid.M):
        t_old = T - m * dt
        t_new = max(T - (m + 1) * dt, 0.0)
        theta = 1.0 if m < grid.rannacher_steps else 0.5
        ab, rhs = stepper.system(V, t_old, t_new, dt, theta)
        if exercise is None:
            V = _solve_linear(ab, rhs, upper)
        else:
            V = _policy_iteration(ab, rhs, exercise, upper, V)
        V = stepper.finish(V)
        if exercise is not None:
            V = np.maximum(V, exercise)
            hit = np.nonzero((V <= exercise + 1e-12 * cap) & (exercise > 0))[0]
            bnd_t.append(t_new)
            bnd_S.append(grid.S[hit[0]] if hit.size else np.nan)
        if not np.all(np.isfinite(V)) or np.max(np.abs(V)) > cap:
            raise InstabilityDetected(f"solution exceeded 10 x max payoff at t={t_new:.6g}")
    if exercise is None:
        return FDResult(grid=grid, values=V)
    return FDResult(grid=grid, values=V, boundary_t=np.array(bnd_t[::-1]), boundary_S=np.array(bnd_S[::-1]))


def _policy_iteration(ab, rhs, phi, upper, V_prev, max_iter=20):
    """Solve ``min(A V - b, V - phi) = 0`` by policy iteration."""
    n = rhs.size
    interior = np.arange(1, n - 1)
    active = np.zeros(n, dtype=bool)
    active[1:-1] = V_prev[1:-1] <= phi[1:-1]
    for _ in range(max_iter):
        a2 = ab.copy()
        b2 = rhs.copy()
        idx = np.nonzero(active)[0]
        a2[1, idx] = 1.0
        a2[0, idx[idx + 1 < n] + 1] = 0.0  # upper diagonal entry of row i sits at column i+1
        a2[2, idx[idx - 1 >= 0] - 1] = 0.0  # lower diagonal entry of row i sits at column i-1
        b2[idx] = phi[idx]
        V = _solve_linear(a2, b2, upper)
        # residual of the continuation equation
        Av = ab[1] * V
        Av[:-1] += ab[0, 1:] * V[1:]
        Av[1:] += ab[2, :-1] * V[:-1]
        cont = Av - rhs
        new = np.zeros(n, dtype=bool)
        new[interior] = (V - phi)[interior] < cont[interior]
        if np.array_equal(new, active):
            break
        active = new
    return V


def solve_backward(curve: CoefficientCurve, grid: FDGrid, payoff, barrier_flag=True) -> FDResult:
    """Backward theta-scheme solve from ``t = T`` to ``t = 0``.

    Parameters
    ----------
    payoff : callable or array
        Terminal values on ``grid.S``.
    barrier_flag : bool
        Dirichlet zero at the top node when True, linearity otherwise.  The
        bottom node is always Dirichlet zero.
    """
    vals = payoff(grid.S) if callable(payoff) else np.asarray(payoff, dtype=float)
    if vals.shape != grid.S.shape:
        raise InvalidParameter("payoff must match the grid")
    return _run(curve, grid, vals, "zero" if barrier_flag else "linear")


def solve_american_projected(curve: CoefficientCurve, grid: FDGrid, payoff) -> FDResult:
    """American solve: each step enforces ``V >= payoff`` by policy iteration.

    Returns the values at ``t = 0`` and the exercise boundary, i.e. the
    lowest in-the-money node where the value equals the payoff, per step.
    """
    vals = payoff(grid.S) if callable(payoff) else np.asarray(payoff, dtype=float)
    return _run(curve, grid, vals, "linear", exercise=vals)


# ---------------------------------------------------------------------------
# convenience pricers
# ---------------------------------------------------------------------------
def _lower_level(curve, K, T):
    """Far-below level for products on an unbounded spot range."""
    sig = np.sqrt(curve.integrate("sigma_sq", 0.0, T) / T)
    return min(0.0, K - 8.0 * sig * np.sqrt(T) - K)


def fd_barrier_uo_call(curve, S0, K, H, T, N=201, dt=0.001, rannacher_steps=4, return_result=False):
    grid = make_grid(0.0, H, [K, H], N=N, T=T, dt=dt, stretch=0.2 * H, rannacher_steps=rannacher_steps)
    res = solve_backward(curve, grid, lambda S: np.maximum(S - K, 0.0), barrier_flag=True)
    return res if return_result else res.price(S0)


def _unbounded_grid(curve, K, T, N, dt, H, rannacher_steps, S0):
    S_max = max(4.0 * K, 2.0 * H if H else 0.0, 2.0 * S0)
    S_lo = _lower_level(curve, K, T)
    return make_grid(S_lo, S_max, [K], N=N, T=T, dt=dt, stretch=0.2 * max(K, H or K),
                     rannacher_steps=rannacher_steps)


def fd_vanilla_call(curve, S0, K, T, N=201, dt=0.001, rannacher_steps=4, H=None, return_result=False):
    grid = _unbounded_grid(curve, K, T, N, dt, H, rannacher_steps, S0)
    res = solve_backward(curve, grid, lambda S: np.maximum(S - K, 0.0), barrier_flag=False)
    return res if return_result else res.price(S0)


def fd_american_call(curve, S0, K, T, N=201, dt=0.001, rannacher_steps=4, H=None, return_result=False):
    grid = _unbounded_grid(curve, K, T, N, dt, H, rannacher_steps, S0)
    res = solve_american_projected(curve, grid, lambda S: np.maximum(S - K, 0.0))
    return res if return_result else res.price(S0)


def fd_barrier_do_call(curve, S0, K, H, T, N=201, dt=0.001, rannacher_steps=4, S_max=None):
    """Direct solve with the value knocked out at or below ``H`` (down-and-out)."""
    S_max = S_max or max(4.0 * K, 2.0 * H, 2.0 * S0)
    grid = make_grid(H, S_max, [K, H], N=N, T=T, dt=dt, stretch=0.2 * max(K, H),
                     rannacher_steps=rannacher_steps)
    res = solve_backward(curve, grid, lambda S: np.maximum(S - K, 0.0), barrier_flag=False)
    return res.price(S0)


def fd_surface(curve, S0, strikes, maturities, product="UpOutCall", H=None, N=201, dt=0.001,
               rannacher_steps=4, threads=1, timings=None):
    """FD prices on a strike x maturity lattice, one solve per cell.

    ``product`` is one of ``UpOutCall``, ``EuropeanCall``, ``AmericanCall`` or
    ``DownOutCall`` (the parity complement, computed as vanilla minus
    Up-and-Out on the FD side as well).
    """
    import time
    from concurrent.futures import ThreadPoolExecutor

    from .pricer import PriceSurface

    strikes = np.asarray(strikes, dtype=float)
    maturities = np.asarray(maturities, dtype=float)
    kw = dict(N=N, dt=dt, rannacher_steps=rannacher_steps)

    def cell(args):
        K, T = args
        c0 = time.perf_counter()
        if product == "UpOutCall":
            v = fd_barrier_uo_call(curve, S0, K, H, T, **kw)
        elif product == "EuropeanCall":
            v = fd_vanilla_call(curve, S0, K, T, H=H, **kw)
        elif product == "AmericanCall":
            v = fd_american_call(curve, S0, K, T, H=H, **kw)
        elif product == "DownOutCall":
            v = fd_vanilla_call(curve, S0, K, T, H=H, **kw) - fd_barrier_uo_call(curve, S0, K, H, T, **kw)
        else:
            raise InvalidParameter(f"unknown product {product!r}")
        return v, 1e3 * (time.perf_counter() - c0)

    jobs = [(K, T) for T in maturities for K in strikes]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(cell, jobs))
    else:
        out = [cell(j) for j in jobs]
    prices = np.array([o[0] for o in out]).reshape(maturities.size, strikes.size).T
    runtime = np.array([o[1] for o in out]).reshape(maturities.size, strikes.size).T
    timings = {} if timings is None else timings
    timings["fd"] = timings.get("fd", 0.0) + 1e-3 * float(runtime.sum())
    return PriceSurface(strikes, maturities, prices, "fd", None, runtime, timings=timings)
