import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import table1_curve
from thetaprice import PriceSurface, build_bundle, integrate, invert_tau, solve_riccati, theta3, theta_diff
from thetaprice.pricer import bachelier_call

CURVE = table1_curve()
BUNDLE = build_bundle(CURVE, solve_riccati(CURVE), T=1.0)

finite = dict(allow_nan=False, allow_infinity=False)
nome = st.floats(0.0, 0.995, **finite)
phase = st.floats(-10.0, 10.0, **finite)


@given(phase, nome)
def test_theta_periodic_even_positive(z, omega):
    base = theta3(z, omega)
    scale = max(1.0, abs(base))
    assert abs(theta3(z + np.pi, omega) - base) <= 1e-12 * scale
    assert abs(theta3(-z, omega) - base) <= 1e-12 * scale
    # theta3 with real nome in [0, 1) is a product of positive factors
    assert base > 0


@given(st.floats(0.0, 1.0, **finite), st.floats(0.0, 1.0, **finite), st.floats(1.0, 200.0, **finite), nome)
def test_theta_difference_symmetric_in_source(fx, fz, y, omega):
    x, z = fx * y, fz * y
    a, b = theta_diff(x, z, y, omega), theta_diff(z, x, y, omega)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(theta3(0.0, omega)))


@given(st.lists(st.floats(0.0, 1.0, **finite), min_size=3, max_size=3).map(sorted),
       st.sampled_from(["r", "q", "sigma_sq"]))
def test_integral_additive(ts, sel):
    t0, t1, t2 = ts
    whole = integrate(CURVE, sel, t0, t2)
    parts = integrate(CURVE, sel, t0, t1) + integrate(CURVE, sel, t1, t2)
    assert abs(parts - whole) <= 1e-12 * max(abs(whole), 1e-12)


@settings(max_examples=50)
@given(st.floats(0.0, 1.0, **finite))
def test_time_change_round_trip(t):
    assert abs(float(invert_tau(BUNDLE, BUNDLE.tau_at(t))) - t) < 1e-9


@given(st.floats(1.0, 200.0, **finite), st.floats(1.0, 200.0, **finite), st.floats(1.0, 200.0, **finite),
       st.floats(0.0, 1e4, **finite), st.floats(0.5, 1.0, **finite))
def test_normal_call_bounds_and_monotone(F, K1, K2, var, disc):
    lo, hi = sorted((K1, K2))
    c_lo, c_hi = bachelier_call(F, lo, var, disc), bachelier_call(F, hi, var, disc)
    assert c_lo >= c_hi - 1e-12
    assert c_lo >= disc * max(F - lo, 0.0) - 1e-9
    assert c_lo - c_hi <= disc * (hi - lo) + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, **finite), min_size=6, max_size=6))
def test_surface_csv_round_trip(tmp_path_factory, prices):
    path = tmp_path_factory.mktemp("csv") / "s.csv"
    s = PriceSurface([50.0, 55.0, 60.0], [0.5, 1.0], np.array(prices).reshape(3, 2), "semi")
    s.to_csv(path)
    back = PriceSurface.from_csv(path)
    assert np.array_equal(back.prices, s.prices)
