import numpy as np
import pytest

from conftest import H, S0, table1_curve
from thetaprice import (FDGrid, InstabilityDetected, InvalidParameter, PiecewiseConstantCurve,
                        fd_american_call, fd_barrier_uo_call, fd_surface, fd_vanilla_call,
                        make_grid, price_vanilla, solve_american_projected, solve_backward)
from thetaprice.fd import _run, fd_barrier_do_call


def test_grid_contains_anchors_and_clusters():
    g = make_grid(0.0, 90.0, [60.0, 90.0], N=201, T=1.0, dt=0.001)
    assert 60.0 in g.S and g.S[-1] == 90.0 and g.S[0] == 0.0
    assert np.all(np.diff(g.S) > 0)
    h = np.diff(g.S)
    i = g.index_of(60.0)
    assert h[i] < h[g.index_of(30.0)]
    assert g.M == 1000 and g.dt == pytest.approx(0.001)


def test_grid_validation():
    with pytest.raises(InvalidParameter):
        make_grid(0.0, 90.0, [60.0], N=40, T=1.0, dt=0.01)
    with pytest.raises(InvalidParameter):
        FDGrid(S=np.linspace(0, 1, 101), T=1.0, M=5)
    with pytest.raises(InvalidParameter):
        make_grid(0.0, 90.0, [60.0], N=101, T=1.0)


def test_vanilla_matches_closed_form_constant_coefficients():
    c = PiecewiseConstantCurve([0.0], [0.02], [0.01], [20.0], horizon=1.0)
    for K in (45.0, 55.0):
        fd = fd_vanilla_call(c, S0, K, 1.0, N=201, dt=0.001)
        assert fd == pytest.approx(price_vanilla(c, S0, K, 1.0), rel=1e-3)


def test_zero_payoff_gives_zero(table1):
    g = make_grid(0.0, H, [60.0, H], N=101, T=0.5, dt=0.01)
    res = solve_backward(table1, g, np.zeros_like(g.S))
    assert np.all(res.values == 0.0)


@pytest.mark.parametrize("N, dt", [(101, 0.01), (201, 0.001)])
def test_two_comparison_setups(table1, N, dt):
    p = fd_barrier_uo_call(table1, S0, 60.0, H, 1.0, N=N, dt=dt)
    ref = fd_barrier_uo_call(table1, S0, 60.0, H, 1.0, N=801, dt=0.00025)
    assert p == pytest.approx(ref, rel=2e-3)


def test_second_order_self_convergence(table1):
    levels = [(101, 0.01), (201, 0.005), (401, 0.0025)]
    v = [fd_barrier_uo_call(table1, S0, 60.0, H, 0.5, N=N, dt=dt) for N, dt in levels]
    order = np.log2((v[1] - v[0]) / (v[2] - v[1]))
    assert order >= 1.8


def test_implicit_steps_keep_maximum_principle(table1):
    g = make_grid(0.0, H, [60.0, H], N=101, T=0.5, M=50, rannacher_steps=50)
    pay = np.maximum(g.S - 60.0, 0.0)
    pay[-1] = 0.0
    res = solve_backward(table1, g, pay)
    assert np.all(res.values >= 0.0)
    assert np.max(res.values) <= np.max(pay)


def test_instability_is_reported(table1):
    g = make_grid(0.0, H, [60.0, H], N=101, T=0.5, dt=0.01)
    pay = np.maximum(g.S - 60.0, 0.0)
    with pytest.raises(InstabilityDetected):
        _run(table1, g, pay, "zero", cap=1e-3)


def test_american_without_dividends_equals_european():
    c = PiecewiseConstantCurve([0.0], [0.02], [0.0], [45.0], horizon=1.0)
    am = fd_american_call(c, S0, 60.0, 1.0, N=201, dt=0.002)
    eu = fd_vanilla_call(c, S0, 60.0, 1.0, N=201, dt=0.002)
    assert abs(am - eu) <= 1e-8 * eu


def test_american_projection_and_boundary():
    c = table1_curve(q0=0.03)
    K = 60.0
    res = fd_american_call(c, S0, K, 1.0, N=401, dt=0.002, return_result=True)
    pay = np.maximum(res.grid.S - K, 0.0)
    assert np.all(res.values >= pay - 1e-12)
    assert res.price(S0) >= price_vanilla(c, S0, K, 1.0)
    bS = res.boundary_S
    ok = np.isfinite(bS)
    assert ok.sum() > 0.9 * bS.size
    # boundary is non-increasing in calendar time (decreasing toward maturity)
    assert np.all(np.diff(bS[ok]) <= 1e-12)
    assert bS[ok][0] > bS[ok][-1]
    assert np.all(bS[ok] >= K)


def test_projected_solver_direct(table1):
    g = make_grid(-50.0, 240.0, [60.0], N=151, T=0.5, dt=0.005)
    res = solve_american_projected(table1, g, lambda S: np.maximum(S - 60.0, 0.0))
    assert res.boundary_t.size == g.M


def test_down_and_out_direct_solve(table1):
    # far barrier below spot: knock-out is irrelevant
    v = fd_barrier_do_call(table1, S0, 50.0, -300.0, 0.5, N=401)
    assert v == pytest.approx(price_vanilla(table1, S0, 50.0, 0.5), rel=2e-3)


def test_fd_surface_shape_and_timing(table1):
    timings = {}
    s = fd_surface(table1, S0, [55.0, 65.0], [0.3, 0.5], H=H, N=101, dt=0.01, timings=timings)
    assert s.method == "fd" and s.prices.shape == (2, 2)
    assert timings["fd"] > 0
    assert s.prices[0, 0] == pytest.approx(fd_barrier_uo_call(table1, S0, 55.0, H, 0.3, N=101, dt=0.01))
    with pytest.raises(InvalidParameter):
        fd_surface(table1, S0, [55.0], [0.3], product="Straddle", H=H, N=101, dt=0.01)
