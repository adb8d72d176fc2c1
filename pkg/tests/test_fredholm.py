import numpy as np
import pytest
from scipy.integrate import quad

from conftest import H, table1_curve
from oracles import fp_degenerate
from thetaprice import (EmptyPayoffRegion, InvalidParameter, MovingBoundary, NoConvergence,
                        PiecewiseConstantCurve, SingularSystem, assemble_kernel, build_bundle,
                        build_flux_system, rhs_F, solve_american_boundary, solve_barrier_flux,
                        solve_psi, solve_riccati)
from thetaprice.fredholm import (LAMBDA_GRID, TikhonovSolver, default_p_grid, gauss_legendre,
                                 lcurve_corner, rhs_F_quadrature)


@pytest.fixture(scope="module")
def heat_bundle():
    c = PiecewiseConstantCurve([0.0], [0.0], [0.0], [30.0], horizon=1.0)
    return build_bundle(c, solve_riccati(c))


def test_single_node_kernel_is_sinh_one():
    bd = MovingBoundary(tau_grid=np.array([0.0]), y=np.array([1.0]))
    A = assemble_kernel(bd, [1.0], [0.0], weights=[1.0])
    assert A.shape == (1, 1)
    assert A[0, 0] == pytest.approx(np.sinh(1.0), rel=1e-15)
    assert A[0, 0] == pytest.approx(1.1752012, abs=1e-7)


def test_rhs_degenerate_closed_form(heat_bundle):
    # a = k = 0, w = 0: K1 = K, y(0) = H
    p = np.geomspace(1e-4, 0.5, 20)
    F = rhs_F(heat_bundle, 60.0, 90.0, p)
    assert np.allclose(F, -fp_degenerate(p, 60.0, 90.0), rtol=1e-12)


def test_rhs_vanishes_at_barrier_strike(heat_bundle):
    assert np.all(rhs_F(heat_bundle, 90.0, 90.0, [0.01, 0.1]) == 0.0)
    with pytest.raises(EmptyPayoffRegion):
        rhs_F(heat_bundle, 95.0, 90.0, 0.1)
    with pytest.raises(InvalidParameter):
        rhs_F(heat_bundle, 60.0, 90.0, [-1.0])


def test_rhs_closed_form_matches_quadrature(table1_bundle):
    p = default_p_grid(table1_bundle.tau0, 20)
    exact = rhs_F(table1_bundle, 60.0, H, p)
    ref = rhs_F_quadrature(table1_bundle, 60.0, H, p)
    assert np.max(np.abs(exact / ref - 1)) < 1e-8


def test_rhs_gaussian_branch_matches_quadrature(table1):
    # w(0) off the default makes a(t) nonzero, exercising the erf/Dawson branch
    b = build_bundle(table1, solve_riccati(table1, w0=0.01), T=1.0)
    a_T = b.at_maturity[2]
    assert abs(a_T) * H ** 2 > 1e-3
    p = default_p_grid(b.tau0, 20)
    assert np.max(np.abs(rhs_F(b, 60.0, H, p) / rhs_F_quadrature(b, 60.0, H, p) - 1)) < 1e-8


def test_kernel_matches_fine_quadrature(table1_bundle):
    bd = table1_bundle.moving_boundary(H)
    tm = table1_bundle.tau0
    p = default_p_grid(tm, 6)
    x, w = gauss_legendre(96)
    tau = 0.5 * tm * (x + 1)
    A = assemble_kernel(bd, p, tau, weights=0.5 * tm * w)
    psi = lambda s: np.sin(np.pi * s / tm)
    for i, pi in enumerate(p):
        ref = quad(lambda s: np.exp(-pi * s) * np.sinh(bd.at(s) * np.sqrt(pi)) * psi(s), 0, tm,
                   epsrel=1e-13, limit=200)[0]
        assert A[i] @ psi(tau) == pytest.approx(ref, rel=1e-8)


def test_kernel_refinement_invariance(table1_bundle):
    bd = table1_bundle.moving_boundary(H)
    tm = table1_bundle.tau0
    p = default_p_grid(tm, 12)
    ls = np.sqrt(p) * H
    out = []
    for n in (64, 128):
        # Gauss-Legendre in sqrt(tau) resolves the exp(-p tau) layer at tau = 0
        x, w = gauss_legendre(n)
        v = 0.5 * np.sqrt(tm) * (x + 1)
        tau = v * v
        A = assemble_kernel(bd, p, tau, weights=v * np.sqrt(tm) * w, log_scale=ls)
        out.append(A @ np.sin(np.pi * tau / tm))
    assert np.max(np.abs(out[1] - out[0]) / np.abs(out[1])) <= 1e-6


def test_kernel_decays_for_large_p(table1_bundle):
    bd = table1_bundle.moving_boundary(H)
    tau = np.array([50.0, 200.0, 800.0])
    y = bd.at(tau)
    for j in range(tau.size):
        start = (y[j] / (2 * tau[j])) ** 2  # beyond this, -p tau + y sqrt(p) decreases
        p = np.geomspace(start * 1.01, start * 10, 30)
        col = assemble_kernel(bd, p, tau[j:j + 1], weights=[1.0])[:, 0]
        assert np.all(col > 0)
        assert np.all(np.diff(col) < 0)


def test_kernel_no_overflow_with_log_scale(table1_bundle):
    bd = table1_bundle.moving_boundary(H)
    p = np.array([1e3, 1e4])
    A = assemble_kernel(bd, p, np.linspace(0, 1, 5), log_scale=np.sqrt(p) * H)
    assert np.all(np.isfinite(A))


def test_identity_system_is_returned_unchanged():
    F = np.array([1.0, -2.0, 3.5])
    sol = solve_psi(np.eye(3), F, lam=0.0)
    assert np.allclose(sol.psi, F, rtol=1e-15)
    assert sol.residual_norm < 1e-15


def test_zero_matrix_is_singular():
    with pytest.raises(SingularSystem):
        solve_psi(np.zeros((4, 3)), np.ones(4))


def test_unknown_lambda_and_operator():
    with pytest.raises(InvalidParameter):
        solve_psi(np.eye(2), np.ones(2), lam="best")
    with pytest.raises(InvalidParameter):
        solve_psi(np.eye(2), np.ones(2), lam=-1.0)
    with pytest.raises(InvalidParameter):
        solve_psi(np.eye(2), np.ones(2), operator="laplacian")


def _manufactured(bundle, n_tau=16, n_p=20):
    bd = bundle.moving_boundary(H)
    tm = bundle.tau0
    p = default_p_grid(tm, n_p)
    tau = np.linspace(0, tm, n_tau)
    A = assemble_kernel(bd, p, tau, log_scale=np.sqrt(p) * H)
    A = A / np.max(np.abs(A), axis=1)[:, None]
    truth = np.sin(np.pi * tau / tm)
    return A, truth


@pytest.mark.parametrize("operator", ["identity", "difference"])
def test_tikhonov_monotone_in_lambda(table1_bundle, operator):
    A, truth = _manufactured(table1_bundle)
    F = A @ truth + 1e-6 * np.random.default_rng(8).standard_normal(A.shape[0])
    solver = TikhonovSolver(A, operator)
    res, reg = np.array([solver.norms(solver.solve(F, lam), F) for lam in LAMBDA_GRID]).T
    assert np.all(np.diff(res) >= -1e-12 * res[1:])
    assert np.all(np.diff(reg) <= 1e-12 * reg[1:])


def test_manufactured_recovery(table1_bundle):
    A, truth = _manufactured(table1_bundle)
    sol = solve_psi(A, A @ truth, lam="auto")
    assert np.max(np.abs(sol.psi - truth)) <= 0.05 * np.max(np.abs(truth))
    assert sol.lcurve["lambdas"][sol.lcurve["index"]] == sol.regularization_lambda


def test_lcurve_corner_of_synthetic_l():
    # two straight legs meeting at index 10
    x = np.concatenate([np.full(10, 0.0), np.linspace(0, 5, 11)])
    y = np.concatenate([np.linspace(5, 0, 11)[:-1], np.zeros(11)])
    i, _ = lcurve_corner(np.exp(x), np.exp(y))
    assert abs(i - 10) <= 1


@pytest.fixture(scope="module")
def flux_system(table1_bundle):
    return build_flux_system(table1_bundle, H)


def test_barrier_flux_is_nonpositive(flux_system):
    sol = solve_barrier_flux(flux_system, 60.0)
    # u >= 0 inside and u = 0 on the barrier, so the outward derivative is <= 0
    assert np.sum(sol.psi * sol.weights) < 0
    assert np.all(np.isfinite(sol.psi))
    assert sol.weights.sum() == pytest.approx(flux_system.bundle.tau0, rel=1e-12)


def test_flux_csv(flux_system, tmp_path):
    sol = solve_barrier_flux(flux_system, 60.0)
    sol.to_csv(tmp_path / "psi.csv")
    rows = open(tmp_path / "psi.csv").read().splitlines()
    assert rows[0] == "tau,psi,lambda,residual,iterations"
    assert len(rows) == sol.psi.size + 1


# ---------------------------------------------------------------------------
# American exercise boundary
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def american():
    curve = table1_curve(q0=0.03)
    b = build_bundle(curve, solve_riccati(curve), T=1.0)
    return b, solve_american_boundary(b, 60.0, x0=50.0)


def test_american_boundary_shape(american):
    b, sol = american
    assert sol.converged and not sol.geometry["european"]
    tau = sol.tau_grid
    assert np.all(np.diff(tau) > 0)
    t = b.invert_tau(tau)
    S_B = sol.psi / b.g_at(t)
    # never below the strike in spot terms
    assert np.all(S_B >= 60.0 * (1 - 1e-9))
    # continuity: no jump above 10% of the level between adjacent nodes
    assert np.max(np.abs(np.diff(sol.psi)) / sol.psi[1:]) < 0.1
    # larger further from maturity, i.e. decreasing toward maturity
    assert np.all(np.diff(S_B) > 0)


def test_american_residual_decreases(american):
    _, sol = american
    h = np.asarray(sol.history)
    assert h.size >= 2
    assert np.all(np.diff(h) <= 0)


def test_american_without_dividends_has_no_boundary():
    curve = PiecewiseConstantCurve([0.0], [0.02], [0.0], [45.0], horizon=1.0)
    b = build_bundle(curve, solve_riccati(curve))
    sol = solve_american_boundary(b, 60.0, x0=50.0)
    assert sol.geometry["european"]


def test_american_iteration_cap_raises(american):
    b, _ = american
    with pytest.raises(NoConvergence) as err:
        solve_american_boundary(b, 60.0, x0=50.0, max_iter=1, tol=1e-300)
    assert err.value.best is not None
